"""Conditional flow-matching training of a small tanh MLP velocity field."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _backend
from .fields import GaussianMixtureField, check_tau
from .numerics import DimensionError, Rng, as_vec

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RFCK"
CHECKPOINT_VERSION = 1


class MlpField:
    """``v(x, tau, c) = MLP([x, tau, c])`` with tanh hidden layers.

    ``widths[0]`` is ``state_dim + 1 + cond_dim`` and ``widths[-1]`` is
    ``state_dim``. Weights are stored ``(fan_out, fan_in)``.
    """

    accepts_guidance_scale = False

    def __init__(self, weights, biases, seed=0):
        if len(weights) != len(biases) or not weights:
            raise DimensionError("need matching, non-empty weight and bias lists")
        self.weights = [np.ascontiguousarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        for j, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimensionError(f"layer {j}: weight {W.shape} / bias {b.shape}")
            if j and W.shape[1] != self.weights[j - 1].shape[0]:
                raise DimensionError(f"layer {j} fan-in {W.shape[1]} breaks the shape chain")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {j} has non-finite parameters")
        self.seed = int(seed)
        self.state_dim = self.weights[-1].shape[0]
        self.cond_dim = self.weights[0].shape[1] - self.state_dim - 1
        if self.cond_dim < 0:
            raise DimensionError("input width must cover state, time and embedding")

    @classmethod
    def init(cls, widths, rng: Rng):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            weights.append((2.0 * rng.uniform(fan_out * fan_in) - 1.0).reshape(fan_out, fan_in) * lim)
            biases.append((2.0 * rng.uniform(fan_out) - 1.0) * lim)
        return cls(weights, biases, seed=rng.seed)

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpField":
        return MlpField([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.seed)

    def __repr__(self):
        return f"MlpField(widths={self.widths})"

    def velocity(self, x, tau, c):
        x = as_vec(x)
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        if x.shape != (self.state_dim,) or c.shape != (self.cond_dim,):
            raise DimensionError(f"expected x ({self.state_dim},), c ({self.cond_dim},)")
        return _backend.kernels.mlp_velocity(x, check_tau(tau), c, self.weights, self.biases)

    def forward_batch(self, inp):
        """Batched forward pass; returns output and per-layer activations."""
        acts = [inp]
        h = inp
        last = len(self.weights) - 1
        for j, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if j < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts


def _inputs(batch):
    z, y, c, tau = (np.asarray(a, dtype=np.float64) for a in batch)
    if z.ndim != 2 or z.shape != y.shape or tau.shape != (z.shape[0],) or c.shape[0] != z.shape[0]:
        raise DimensionError("batch arrays disagree in shape")
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    xt = (1.0 - tau)[:, None] * z + tau[:, None] * y
    inp = np.concatenate([xt, tau[:, None], c.reshape(z.shape[0], -1)], axis=1)
    return inp, y - z


def cfm_loss(f, batch) -> float:
    """Mean squared velocity-regression error on ``(z, y, c, tau)`` samples.

    ``f`` may be an :class:`MlpField` or any field with ``velocity``.
    """
    inp, target = _inputs(batch)
    if isinstance(f, MlpField):
        out, _ = f.forward_batch(inp)
    else:
        d = target.shape[1]
        out = np.array([f.velocity(r[:d], r[d], r[d + 1:]) for r in inp])
    return float(np.mean(np.sum((out - target) ** 2, axis=1)))


def backprop(f: MlpField, batch):
    """Loss and exact gradients ``[(dW, db), ...]`` of :func:`cfm_loss`."""
    inp, target = _inputs(batch)
    out, acts = f.forward_batch(inp)
    n = inp.shape[0]
    resid = out - target
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    delta = 2.0 * resid / n
    grads = [None] * len(f.weights)
    for j in range(len(f.weights) - 1, -1, -1):
        grads[j] = (delta.T @ acts[j], delta.sum(axis=0))
        if j:
            delta = (delta @ f.weights[j]) * (1.0 - acts[j] ** 2)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    means: tuple = ((1.0, 0.0), (-1.0, 0.0))
    variances: tuple = (0.25, 1.0)
    priors: tuple | None = None
    hidden: tuple = (64, 64)
    batch_size: int = 256
    iterations: int = 5000
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    null_prob: float = 0.2
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0 or self.log_every < 1:
            raise ValueError("batch_size, iterations and log_every must be positive")
        if self.lr < 0 or not 0 <= self.null_prob <= 1:
            raise ValueError("lr must be >= 0 and null_prob in [0, 1]")

    def mixture(self) -> GaussianMixtureField:
        return GaussianMixtureField(self.means, self.variances, self.priors)


def draw_batch(task: GaussianMixtureField, n: int, null_prob: float, rng: Rng):
    """Flow-matching samples; a ``null_prob`` share carry the null token.

    Null-token rows draw ``y`` from the full mixture, the rest are labelled
    with their class embedding.
    """
    y, cls = task.sample_data(rng, n)
    z = rng.normal(n * task.state_dim).reshape(n, task.state_dim)
    tau = rng.uniform(n)
    null = rng.uniform(n) < null_prob
    c = task.keys[cls].copy()
    c[null] = task.null_embedding()
    return z, y, c, tau


@dataclass
class TrainResult:
    field: MlpField
    losses: list = dc_field(default_factory=list)  # mean loss per log window


def train(f: MlpField, cfg: TrainConfig, rng: Rng | None = None) -> TrainResult:
    """Adam on the flow-matching loss; deterministic given the seed."""
    rng = rng if rng is not None else Rng(cfg.seed, 1)
    task = cfg.mixture()
    f = f.copy()
    params = f.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    window, losses = [], []
    for it in range(1, cfg.iterations + 1):
        batch = draw_batch(task, cfg.batch_size, cfg.null_prob, rng)
        loss, grads = backprop(f, batch)
        if not np.isfinite(loss):
            raise FloatingPointError(f"training diverged at iteration {it} (loss={loss})")
        flat = [g for pair in grads for g in pair]
        c1 = 1.0 - cfg.beta1**it
        c2 = 1.0 - cfg.beta2**it
        for p, g, mi, vi in zip(params, flat, m, v):
            mi *= cfg.beta1
            mi += (1.0 - cfg.beta1) * g
            vi *= cfg.beta2
            vi += (1.0 - cfg.beta2) * g * g
            p -= cfg.lr * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        window.append(loss)
        if it % cfg.log_every == 0:
            losses.append(float(np.mean(window)))
            window = []
            if it % (10 * cfg.log_every) == 0:
                log.info("iter %d loss %.5f", it, losses[-1])
    return TrainResult(f, losses)


def default_field(cfg: TrainConfig) -> MlpField:
    task = cfg.mixture()
    widths = [task.state_dim + 1 + task.cond_dim, *cfg.hidden, task.state_dim]
    return MlpField.init(widths, Rng(cfg.seed, 0))


def save_checkpoint(f: MlpField, path) -> None:
    """Binary layout: magic, u32 version, u32 layers, per layer u32 rows/cols,
    row-major little-endian f64 weights then biases, trailing u64 seed."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(f.weights)))
        for W, b in zip(f.weights, f.biases):
            fh.write(struct.pack("<II", *W.shape))
            fh.write(W.astype("<f8").tobytes(order="C"))
            fh.write(b.astype("<f8").tobytes())
        fh.write(struct.pack("<Q", f.seed))


def load_checkpoint(path) -> MlpField:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    try:
        return _parse_checkpoint(path, data)
    except struct.error:
        raise ValueError(f"{path}: truncated checkpoint") from None


def _parse_checkpoint(path, data) -> MlpField:
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        if pos + 8 * rows * (cols + 1) > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        weights.append(np.frombuffer(data, "<f8", rows * cols, pos).reshape(rows, cols).astype(np.float64))
        pos += 8 * rows * cols
        biases.append(np.frombuffer(data, "<f8", rows, pos).astype(np.float64))
        pos += 8 * rows
    (seed,) = struct.unpack_from("<Q", data, pos)
    if pos + 8 != len(data):
        raise ValueError(f"{path}: trailing bytes after seed")
    return MlpField(weights, biases, seed=seed)
