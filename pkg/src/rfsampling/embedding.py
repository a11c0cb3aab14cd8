"""Mixed and amplified text embeddings and the alignment coefficient."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerics import DimensionError, as_vec


@dataclass(frozen=True)
class GuidanceParams:
    """Knobs of the two guidance states plus the merge step.

    Defaults are the general-purpose settings; ``s_high=3.5, s_low=0`` is
    the lighter variant tuned for distilled-guidance models.
    """

    s_high: float = 9.0
    beta_high: float = 0.7
    s_low: float = -1.0
    beta_low: float = 0.3
    gamma: float = 0.5
    alpha: int = 1
    w: float = 1.0

    def __post_init__(self):
        for name in ("beta_high", "beta_low"):
            b = getattr(self, name)
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"{name}={b} outside [0, 1]")
        if self.gamma < 0:
            raise ValueError(f"gamma={self.gamma} must be >= 0")
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise ValueError(f"alpha={self.alpha} must be a positive integer")
        if self.w < 1:
            raise ValueError(f"w={self.w} must be >= 1")

    @property
    def alignment(self) -> float:
        return alignment_coefficient(self)

    def replace(self, **kw) -> "GuidanceParams":
        d = asdict(self)
        d.update(kw)
        return GuidanceParams(**d)


def _pair(c_text, c_uncond):
    c_text, c_uncond = as_vec(c_text, "c_text"), as_vec(c_uncond, "c_uncond")
    if c_text.shape != c_uncond.shape:
        raise DimensionError(f"embedding dims differ: {c_text.shape} vs {c_uncond.shape}")
    return c_text, c_uncond


def _check_beta(beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta={beta} outside [0, 1]")


def mix(c_text, c_uncond, beta: float) -> np.ndarray:
    """Convex blend ``beta*c_text + (1-beta)*c_uncond``."""
    c_text, c_uncond = _pair(c_text, c_uncond)
    _check_beta(beta)
    if beta == 1.0:
        return c_text.copy()
    if beta == 0.0:
        return c_uncond.copy()
    return beta * c_text + (1.0 - beta) * c_uncond


def weighted(c_text, c_uncond, s: float, beta: float) -> np.ndarray:
    """Amplified embedding ``c_text + s*mix(c_text, c_uncond, beta)``."""
    c_text, c_uncond = _pair(c_text, c_uncond)
    return c_text + s * mix(c_text, c_uncond, beta)


def semantic_direction(c_text, c_uncond) -> np.ndarray:
    c_text, c_uncond = _pair(c_text, c_uncond)
    return c_text - c_uncond


def alignment_coefficient(p: GuidanceParams) -> float:
    return p.s_high * p.beta_high - p.s_low * p.beta_low


def semantic_gain(s: float, beta: float) -> float:
    """Weight ``1 + s*beta`` carried by the semantic direction in ``weighted``.

    ``weighted(c_text, c_uncond, s, beta) == (1+s)*c_uncond + semantic_gain(s, beta)*u``.
    """
    return 1.0 + s * beta


def state_embeddings(c_text, c_uncond, p: GuidanceParams):
    """``(c_high, c_low)`` for a guidance setting."""
    return (
        weighted(c_text, c_uncond, p.s_high, p.beta_high),
        weighted(c_text, c_uncond, p.s_low, p.beta_low),
    )
