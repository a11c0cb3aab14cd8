"""Numerical checks of the gradient-ascent reading of reflective sampling.

* first order: the reflective displacement lines up with the alignment
  score gradient and scales with the alignment coefficient;
* remainder: the deviation from the first-order term shrinks quadratically
  with the semantic direction;
* second order: the gain along the displacement is a concave parabola in
  the merge ratio, with a closed-form optimum;
* sweeps: paired-seed experiments over one sampler knob.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .embedding import alignment_coefficient
from .fields import cond_jvp
from .numerics import (FD_GRAD_STEP, FD_HESS_STEP, Rng, as_vec, central_diff_grad,
                       directional_hessian)
from .sampler import SamplerConfig, euler_step, reflective_displacement, rf_sample

AXES = ("gamma", "gap", "rf_fraction", "steps")


def exact_score(field, class_id=0):
    """``(x, tau) -> grad log p(class | x_tau)`` for fields that know it."""
    return lambda x, tau: field.posterior_score(x, tau, class_id)


def proxy_score(field, cfg: SamplerConfig):
    """Velocity difference ``v(c_text) - v(c_uncond)`` as a score stand-in."""
    return lambda x, tau: field.velocity(x, tau, cfg.c_text) - field.velocity(x, tau, cfg.c_uncond)


def draw_probes(field, cfg: SamplerConfig, n: int, rng: Rng, tau_range=(0.2, 0.8)):
    """On-trajectory probes ``(x, k)`` from standard sampling with ``c_text``."""
    T = cfg.steps
    lo, hi = math.ceil(tau_range[0] * T), math.floor(tau_range[1] * T)
    if lo > hi or hi >= T:
        raise ValueError(f"no step of a {T}-step grid falls in tau range {tau_range}")
    probes = []
    for _ in range(n):
        x = rng.normal(field.state_dim)
        k = lo + int(rng.integers(hi - lo + 1, 1)[0])
        for j in range(k):
            x = euler_step(field, x, j / T, cfg.c_text, cfg.dt)
        probes.append((x, k))
    return probes


@dataclass
class FirstOrderReport:
    cosine: float  # mean cosine between displacement and score
    ascent_fraction: float
    proportionality_residual: float  # max relative deviation from the linear term
    probes: int
    alignment: float
    score_scale: float  # least-squares factor from score to velocity difference
    flagged: bool = False  # alignment <= 0: the ascent premise does not hold
    inner_products: np.ndarray = dc_field(default=None, repr=False)


def check_first_order(field, cfg: SamplerConfig, probes, rng: Rng, score=None,
                      tau_range=(0.2, 0.8)) -> FirstOrderReport:
    """Compare the reflective displacement with ``alignment * dt * dv/dc . u``.

    ``probes`` is a count, or a list of ``(x, k)`` pairs from
    :func:`draw_probes` to reuse states across settings.
    """
    A = alignment_coefficient(cfg.guidance)
    score = score or proxy_score(field, cfg)
    u = cfg.c_text - cfg.c_uncond
    cos, dots, resid = [], [], []
    num = den = 0.0
    if isinstance(probes, int):
        probes = draw_probes(field, cfg, probes, rng, tau_range)
    for x, k in probes:
        tau = k / cfg.steps
        delta = reflective_displacement(field, x, k, cfg)
        g = score(x, tau)
        dots.append(float(delta @ g))
        nd, ng = np.linalg.norm(delta), np.linalg.norm(g)
        cos.append(float(delta @ g / (nd * ng)) if nd > 0 and ng > 0 else 0.0)
        lin = cfg.burst_length(k) * cfg.dt * A * cond_jvp(field, x, tau, cfg.c_uncond, u)
        nl = np.linalg.norm(lin)
        resid.append(float(np.linalg.norm(delta - lin) / nl) if nl > 0 else float(nd > 0) * math.inf)
        dv = field.velocity(x, tau, cfg.c_text) - field.velocity(x, tau, cfg.c_uncond)
        num += float(dv @ g)
        den += float(g @ g)
    dots = np.array(dots)
    return FirstOrderReport(
        cosine=float(np.mean(cos)),
        ascent_fraction=float(np.mean(dots > 0)),
        proportionality_residual=float(np.max(resid)) if resid else 0.0,
        probes=len(dots),
        alignment=A,
        score_scale=num / den if den > 0 else math.nan,
        flagged=A <= 0,
        inner_products=dots,
    )


def uncond_scale_gap(field, cfg: SamplerConfig, probes) -> dict:
    """Relative gap between ``v(x, (1+s) c_uncond)`` and ``v(x, c_uncond)``.

    The first-order expansion treats the amplified null embedding as the
    unconditional field; this measures how far that holds, for both
    guidance scales, as ``{s: mean ||gap|| / mean ||v_uncond||}``.
    """
    out = {}
    for s in (cfg.guidance.s_high, cfg.guidance.s_low):
        num = den = 0.0
        for x, k in probes:
            tau = k / cfg.steps
            v0 = field.velocity(x, tau, cfg.c_uncond)
            num += float(np.linalg.norm(field.velocity(x, tau, (1.0 + s) * cfg.c_uncond) - v0))
            den += float(np.linalg.norm(v0))
        out[s] = num / den if den > 0 else math.nan
    return out


@dataclass
class RemainderReport:
    slope: float  # nan when the remainder is at the rounding floor
    scales: np.ndarray
    residuals: np.ndarray
    exact: bool


def check_remainder_scaling(field, cfg: SamplerConfig, scales, rng: Rng, probes: int = 50,
                            fd_step: float = 1e-4, floor: float = 1e-11) -> RemainderReport:
    """Log-log slope of the non-linear part of the displacement in ``||u||``.

    ``c_text`` is moved to ``c_uncond + s*u`` for each scale ``s``. The
    linear part is the central difference of the displacement in ``s`` at
    ``s = 0``; residuals are summed over on-trajectory probes.
    """
    scales = np.asarray(scales, dtype=np.float64)
    if scales.size < 2 or np.any(scales <= 0) or np.any(np.diff(scales) >= 0):
        raise ValueError("scales must be positive and strictly decreasing")
    u = cfg.c_text - cfg.c_uncond
    pts = draw_probes(field, cfg, probes, rng)

    def disp(s, x, k):
        return reflective_displacement(field, x, k, cfg.replace(c_text=cfg.c_uncond + s * u))

    res = np.zeros(scales.size)
    ref = 0.0
    for x, k in pts:
        d0 = disp(0.0, x, k)
        lin = (disp(fd_step, x, k) - disp(-fd_step, x, k)) / (2 * fd_step)
        for i, s in enumerate(scales):
            full = disp(s, x, k)
            res[i] += np.linalg.norm(full - d0 - s * lin)
            ref = max(ref, float(np.linalg.norm(full - d0)))
    if np.all(res <= floor * max(ref, 1e-300) * len(pts)):
        return RemainderReport(math.nan, scales, res, True)
    if np.any(res <= 0):
        raise ValueError("degenerate fit: a residual is exactly zero")
    slope = float(np.polyfit(np.log(scales), np.log(res), 1)[0])
    return RemainderReport(slope, scales, res, False)


@dataclass
class SecondOrderReport:
    gamma_grid: np.ndarray
    delta_j: np.ndarray
    gain: float  # <d, grad J>
    curvature: float  # d^T H d
    gamma_star_closed: float | None
    gamma_star_empirical: float
    quadratic_fit_r2: float
    concave: bool  # curvature below the rounding floor and positive gain
    hessian_h_sensitivity: float  # |curvature(h) - curvature(h/10)|


def check_second_order(J, x, d, gamma_grid, h_grad=FD_GRAD_STEP, h_hess=FD_HESS_STEP) -> SecondOrderReport:
    """Gain ``J(x + g d) - J(x)`` over a grid against the parabola optimum."""
    x, d = as_vec(x), as_vec(d, "d")
    grid = np.asarray(gamma_grid, dtype=np.float64)
    if grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise ValueError("gamma grid needs >= 3 strictly increasing values")
    if not np.linalg.norm(d) > 0:
        raise ValueError("direction must be non-zero")
    j0 = float(J(x))
    dj = np.array([float(J(x + g * d)) - j0 for g in grid])
    if not np.all(np.isfinite(dj)):
        raise ValueError("objective is non-finite on the probed segment")
    gain = float(d @ central_diff_grad(J, x, h_grad))
    curv = directional_hessian(J, x, d, h_hess)
    sens = abs(curv - directional_hessian(J, x, d, h_hess / 10))
    # the second difference carries ~eps |J| / h^2 of rounding noise
    floor = 16.0 * np.finfo(float).eps * max(abs(j0), np.finfo(float).tiny) / (h_hess * h_hess)
    concave = curv < -floor and gain > 0
    coef = np.polyfit(grid, dj, 2)
    fit = np.polyval(coef, grid)
    ss_tot = float(np.sum((dj - dj.mean()) ** 2))
    r2 = 1.0 - float(np.sum((dj - fit) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return SecondOrderReport(
        gamma_grid=grid,
        delta_j=dj,
        gain=gain,
        curvature=curv,
        gamma_star_closed=gain / abs(curv) if concave else None,
        gamma_star_empirical=float(grid[int(np.argmax(dj))]),
        quadratic_fit_r2=min(max(r2, 0.0), 1.0),
        concave=concave,
        hessian_h_sensitivity=sens,
    )


def second_order_scan(J, x, d, points: int = 41, max_doublings: int = 16, h_grad=FD_GRAD_STEP,
                      h_hess=FD_HESS_STEP) -> SecondOrderReport:
    """:func:`check_second_order` on ``[0, G]`` with ``G`` doubled from
    ``2 gamma*`` (or 1 when flagged) until the gain has turned down."""
    coarse = check_second_order(J, x, d, [0.0, 0.5, 1.0], h_grad, h_hess)
    top = 2.0 * coarse.gamma_star_closed if coarse.concave else 1.0
    for _ in range(max_doublings):
        rep = check_second_order(J, x, d, np.linspace(0.0, top, points), h_grad, h_hess)
        if rep.delta_j[-1] < rep.delta_j.max():
            return rep
        top *= 2.0
    return rep


def spread_mask(steps: int, fraction: float) -> tuple:
    """``round(fraction*steps)`` reflective steps spaced evenly over the grid."""
    n = int(round(fraction * steps))
    on = set(np.floor(np.arange(n) * steps / n).astype(int).tolist()) if n else set()
    return tuple(k in on for k in range(steps))


def configure(cfg: SamplerConfig, axis: str, value) -> SamplerConfig:
    """Template config with one knob set."""
    g = cfg.guidance
    if axis == "gamma":
        return cfg.replace(guidance=g.replace(gamma=float(value)))
    if axis == "gap":
        return cfg.replace(guidance=g.replace(s_high=g.s_low + float(value)))
    if axis == "rf_fraction":
        return cfg.replace(rf_mask=spread_mask(cfg.steps, float(value)))
    if axis == "steps":
        if int(value) != value:
            raise ValueError(f"steps must be an integer, got {value}")
        return cfg.replace(steps=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


def seed_noise(seed: int, dim: int) -> np.ndarray:
    """Prior draw for a seed: stream 0 of ``Rng(seed)``."""
    return Rng(seed, 0).normal(dim)


def final_scores(field, objective, cfg: SamplerConfig, seeds):
    """``(scores, nfe)`` of reflective sampling for each seed, in seed order."""
    out = np.empty(len(seeds))
    nfe = 0
    for i, s in enumerate(seeds):
        tr = rf_sample(field, seed_noise(s, field.state_dim), cfg)
        out[i] = objective(tr.final)
        nfe = tr.nfe
    return out, nfe


def _final_scores_job(args):
    return final_scores(*args)


@dataclass
class SweepResult:
    axis: str
    values: list
    scores: np.ndarray  # (n_values, n_seeds)
    nfe: list
    seeds: list

    def rows(self):
        n = self.scores.shape[1]
        for v, s, nfe in zip(self.values, self.scores, self.nfe):
            sd = float(s.std(ddof=1)) if n > 1 else 0.0
            yield {"value": v, "mean_j": float(s.mean()), "std_j": sd,
                   "sem_j": sd / math.sqrt(n), "nfe": nfe}

    def paired(self, i: int, j: int):
        """Mean and standard error of ``scores[i] - scores[j]`` over seeds."""
        d = self.scores[i] - self.scores[j]
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


class GaussianObjective:
    """Picklable final-sample alignment score ``log p(class | x)`` at ``tau=1``."""

    def __init__(self, task, class_id=0):
        self.task = task
        self.class_id = class_id

    def __call__(self, x):
        return self.task.log_posterior(x, 1.0, self.class_id)


def sweep(field, objective, cfg: SamplerConfig, axis: str, values, seeds, workers: int = 1) -> SweepResult:
    """Paired-seed reflective sampling over one knob; order-deterministic."""
    values = list(values)
    seeds = [int(s) for s in seeds]
    if len(values) < 2:
        raise ValueError("a sweep needs at least two values")
    if len(seeds) < 30:
        raise ValueError(f"a sweep needs at least 30 seeds, got {len(seeds)}")
    cfgs = [configure(cfg, axis, v) for v in values]
    if workers > 1:
        jobs = [(field, objective, c, seeds) for c in cfgs]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_final_scores_job, jobs))
    else:
        results = [final_scores(field, objective, c, seeds) for c in cfgs]
    scores = np.vstack([r[0] for r in results])
    return SweepResult(axis, values, scores, [r[1] for r in results], seeds)
