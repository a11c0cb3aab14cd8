"""Euler integration, flow inversion and reflective flow sampling.

Step ``k`` of a ``T``-step schedule sits at ``tau_k = k / T``. Denoising
moves forward in ``tau`` with ``dt = 1/T``; inversion moves backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .embedding import GuidanceParams, state_embeddings
from .fields import check_tau
from .numerics import DimensionError, as_vec


@dataclass(frozen=True)
class SamplerConfig:
    steps: int
    c_text: np.ndarray
    c_uncond: np.ndarray
    guidance: GuidanceParams = dc_field(default_factory=GuidanceParams)
    rf_mask: tuple | None = None
    record_diagnostics: bool = True

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps={self.steps} must be a positive integer")
        object.__setattr__(self, "c_text", as_vec(self.c_text, "c_text"))
        object.__setattr__(self, "c_uncond", as_vec(self.c_uncond, "c_uncond"))
        if self.c_text.shape != self.c_uncond.shape:
            raise DimensionError("c_text and c_uncond dims differ")
        mask = (True,) * self.steps if self.rf_mask is None else tuple(bool(m) for m in self.rf_mask)
        if len(mask) != self.steps:
            raise ValueError(f"rf_mask has {len(mask)} entries, expected {self.steps}")
        object.__setattr__(self, "rf_mask", mask)

    @property
    def dt(self) -> float:
        return 1.0 / self.steps

    def tau(self, k: int) -> float:
        return k / self.steps

    def burst_length(self, k: int) -> int:
        """Forward/inversion count at step ``k``; truncated at the data end."""
        return min(self.guidance.alpha, self.steps - k)

    def replace(self, **kw) -> "SamplerConfig":
        d = dict(steps=self.steps, c_text=self.c_text, c_uncond=self.c_uncond,
                 guidance=self.guidance, rf_mask=self.rf_mask,
                 record_diagnostics=self.record_diagnostics)
        if "steps" in kw and "rf_mask" not in kw:
            d["rf_mask"] = None
        d.update(kw)
        return SamplerConfig(**d)


def leading_mask(steps: int, fraction: float) -> tuple:
    """Reflective stages on the first ``round(fraction*steps)`` steps."""
    n = int(round(fraction * steps))
    return tuple(k < n for k in range(steps))


def nfe_budget(cfg: SamplerConfig) -> int:
    """Field evaluations: ``2*alpha + 1`` per reflective step, 1 otherwise."""
    if cfg.guidance.gamma == 0:
        return cfg.steps
    return sum(2 * cfg.burst_length(k) + 1 if m else 1 for k, m in enumerate(cfg.rf_mask))


@dataclass
class Trajectory:
    taus: np.ndarray
    latents: np.ndarray  # (T+1, d)
    drf: np.ndarray  # (T, d); zero rows on plain steps
    drf_norm: np.ndarray  # (T,); nan on plain steps
    drf_dot_score: np.ndarray  # (T,); nan when no score is supplied
    nfe: int

    @property
    def final(self) -> np.ndarray:
        return self.latents[-1]


class _Counter:
    __slots__ = ("field", "calls")

    def __init__(self, field):
        self.field = field
        self.calls = 0

    def __call__(self, x, tau, c):
        self.calls += 1
        return self.field.velocity(x, tau, c)


def _velocity(f):
    return f if isinstance(f, _Counter) else f.velocity


def euler_step(f, x, tau, c, dt):
    """One explicit Euler step ``x + v(x, tau, c) * dt``."""
    tau = check_tau(tau)
    check_tau(tau + dt)
    x = np.asarray(x, dtype=np.float64)
    if dt == 0:
        return as_vec(x).copy()
    return x + _velocity(f)(x, tau, c) * dt  # the field validates x


def denoise_burst(f, x, k, c, alpha, steps):
    """``alpha`` forward Euler steps from ``tau_k``."""
    if k < 0 or k + alpha > steps:
        raise ValueError(f"burst from step {k} with alpha={alpha} leaves [0, {steps}]")
    dt = 1.0 / steps
    for i in range(alpha):
        x = euler_step(f, x, (k + i) / steps, c, dt)
    return x


def invert_burst(f, x, k, c, alpha, steps):
    """``alpha`` backward Euler steps from ``tau_{k+alpha}`` down to ``tau_k``.

    The step from ``tau_{j+1}`` to ``tau_j`` evaluates the field at ``tau_j``,
    so the inversion retraces the times of :func:`denoise_burst` in reverse
    and undoes it exactly whenever the field ignores ``x``.
    """
    if k < 0 or k + alpha > steps:
        raise ValueError(f"burst from step {k} with alpha={alpha} leaves [0, {steps}]")
    dt = 1.0 / steps
    v = _velocity(f)
    x = as_vec(x)
    for j in range(k + alpha - 1, k - 1, -1):
        x = x - v(x, j / steps, c) * dt
    return x


def reflective_displacement(f, x, k, cfg: SamplerConfig, embeddings=None):
    """``invert(denoise(x, c_high), c_low) - x`` at step ``k``."""
    c_high, c_low = embeddings or state_embeddings(cfg.c_text, cfg.c_uncond, cfg.guidance)
    a = cfg.burst_length(k)
    x = as_vec(x)
    fwd = denoise_burst(f, x, k, c_high, a, cfg.steps)
    back = invert_burst(f, fwd, k, c_low, a, cfg.steps)
    return back - x


def _stage3_embedding(field, cfg):
    if getattr(field, "accepts_guidance_scale", False):
        return cfg.guidance.w * cfg.c_text
    return cfg.c_text


def _check_noise(field, noise):
    x = as_vec(noise, "noise")
    if x.shape != (field.state_dim,):
        raise DimensionError(f"noise dim {x.shape} != state_dim {field.state_dim}")
    return x


def rf_sample(field, noise, cfg: SamplerConfig, score=None) -> Trajectory:
    """Reflective flow sampling.

    On masked steps the latent is pushed by ``gamma * Delta_RF`` before the
    ordinary Euler step, which is evaluated at the step's own time. With
    ``gamma == 0`` the push is a no-op, so the displacement is not computed
    and the result (diagnostics and NFE included) is standard sampling.
    ``score(x, tau)``, when given, fills the ``drf_dot_score`` diagnostics.
    """
    x = _check_noise(field, noise)
    f = _Counter(field)
    T, dt = cfg.steps, cfg.dt
    gamma = cfg.guidance.gamma
    embs = state_embeddings(cfg.c_text, cfg.c_uncond, cfg.guidance)
    c_std = _stage3_embedding(field, cfg)
    d = x.size
    latents = np.empty((T + 1, d))
    drf = np.zeros((T, d))
    norms = np.full(T, np.nan)
    dots = np.full(T, np.nan)
    latents[0] = x
    for k in range(T):
        tau = k / T
        if cfg.rf_mask[k] and gamma != 0:
            delta = reflective_displacement(f, x, k, cfg, embs)
            if cfg.record_diagnostics:
                drf[k] = delta
                norms[k] = np.linalg.norm(delta)
                if score is not None:
                    dots[k] = float(delta @ score(x, tau))
            x = x + gamma * delta
        x = euler_step(f, x, tau, c_std, dt)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"latent diverged at step {k}")
        latents[k + 1] = x
    return Trajectory(np.arange(T + 1) / T, latents, drf, norms, dots, f.calls)


def standard_sample(field, noise, cfg: SamplerConfig) -> Trajectory:
    """Plain Euler integration from ``tau=0`` to ``tau=1`` with ``c_text``."""
    x = _check_noise(field, noise)
    f = _Counter(field)
    T, dt = cfg.steps, cfg.dt
    c_std = _stage3_embedding(field, cfg)
    latents = np.empty((T + 1, x.size))
    latents[0] = x
    for k in range(T):
        x = euler_step(f, x, k / T, c_std, dt)
        latents[k + 1] = x
    nan = np.full(T, np.nan)
    return Trajectory(np.arange(T + 1) / T, latents, np.zeros((T, x.size)), nan, nan.copy(), f.calls)
