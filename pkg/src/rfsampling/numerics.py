"""Dense vector helpers, seeded random streams and finite differences.

Vectors are plain 1-D ``float64`` numpy arrays. Every public helper checks
shapes and finiteness at its boundary so downstream code can assume clean
inputs.
"""

from __future__ import annotations

import math

import numpy as np

FD_GRAD_STEP = 1e-5
FD_HESS_STEP = 1e-3


class DimensionError(ValueError):
    """Raised when operand shapes disagree (always a caller bug)."""


def as_vec(x, name="x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    # plain-float scan: cheaper than a numpy reduction at these sizes
    if not all(map(math.isfinite, v.tolist())):
        raise ValueError(f"{name} has non-finite entries: {v}")
    return v


def as_mat(a, name="a") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"dimension mismatch: {x.shape} vs {y.shape}")


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``a*x + y``."""
    x, y = as_vec(x, "x"), as_vec(y, "y")
    _same_dim(x, y)
    return a * x + y


def dot(x, y) -> float:
    x, y = as_vec(x, "x"), as_vec(y, "y")
    _same_dim(x, y)
    return float(np.dot(x, y))


def _probe(f, p: np.ndarray) -> float:
    val = float(f(p))
    if not math.isfinite(val):
        raise ValueError(f"objective is non-finite ({val}) at probe point {p.tolist()}")
    return val


def central_diff_grad(f, x, h: float = FD_GRAD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = as_vec(x)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (_probe(f, xp) - _probe(f, xm)) / (2.0 * h)
    return g


def directional_hessian(f, x, d, h: float = FD_HESS_STEP) -> float:
    """Second difference along ``d``; approximates ``d^T H(x) d``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x, d = as_vec(x), as_vec(d, "d")
    _same_dim(x, d)
    if not np.linalg.norm(d) > 0:
        raise ValueError("direction must be non-zero")
    fp = _probe(f, x + h * d)
    f0 = _probe(f, x)
    fm = _probe(f, x - h * d)
    return (fp - 2.0 * f0 + fm) / (h * h)


class Rng:
    """PCG64 stream keyed by ``(seed, stream)`` with Box-Muller normals.

    Uniforms are the top 53 bits of each raw 64-bit draw, so the normal
    sequence is fixed by the raw PCG64 output alone.
    """

    def __init__(self, seed: int, stream: int = 0):
        if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._bits = np.random.PCG64(ss)
        self._spare = None

    def uniform(self, n: int | None = None):
        """Doubles in [0, 1)."""
        k = 1 if n is None else int(n)
        raw = self._bits.random_raw(k)
        u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(u[0]) if n is None else u

    def normal(self, n: int | None = None):
        k = 1 if n is None else int(n)
        out = np.empty(k)
        i = 0
        if self._spare is not None and k > 0:
            out[0] = self._spare
            self._spare = None
            i = 1
        need = k - i
        if need > 0:
            pairs = (need + 1) // 2
            u = self.uniform(2 * pairs)
            r = np.sqrt(-2.0 * np.log1p(-u[0::2]))  # 1-u lies in (0, 1]
            theta = 2.0 * np.pi * u[1::2]
            z = np.empty(2 * pairs)
            z[0::2] = r * np.cos(theta)
            z[1::2] = r * np.sin(theta)
            out[i:] = z[:need]
            if need % 2:
                self._spare = float(z[-1])
        return float(out[0]) if n is None else out

    def integers(self, high: int, n: int) -> np.ndarray:
        """Integers in ``[0, high)`` by multiply-shift on the uniform stream."""
        return np.floor(self.uniform(n) * high).astype(np.int64)

    def spawn(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)
