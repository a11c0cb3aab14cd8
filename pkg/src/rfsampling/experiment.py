"""Config-driven builders and seed-parallel runs shared by the CLI and tests."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import Config
from .embedding import GuidanceParams
from .fields import GaussianMixtureField
from .outputs import RunRecord, trajectory_columns, trajectory_rows, write_csv
from .sampler import SamplerConfig, rf_sample, standard_sample
from .theory import GaussianObjective, exact_score, seed_noise, spread_mask
from .train import TrainConfig, default_field, load_checkpoint, train

log = logging.getLogger(__name__)

MODES = ("standard", "rf")


def task(cfg: Config, embed_map=None) -> GaussianMixtureField:
    return GaussianMixtureField(cfg["task.means"], cfg["task.variances"],
                                embed_map=embed_map or cfg["field.embed_map"], kappa=cfg["field.kappa"])


def field(cfg: Config):
    if cfg["field.kind"] == "mlp":
        f = load_checkpoint(cfg["field.checkpoint"])
        t = task(cfg)
        if (f.state_dim, f.cond_dim) != (t.state_dim, t.cond_dim):
            raise ValueError(f"{cfg['field.checkpoint']}: checkpoint dims {(f.state_dim, f.cond_dim)} "
                             f"do not match the task {(t.state_dim, t.cond_dim)}")
        return f
    return task(cfg)


def guidance(cfg: Config) -> GuidanceParams:
    return GuidanceParams(s_high=cfg["guidance.s_high"], beta_high=cfg["guidance.beta_high"],
                          s_low=cfg["guidance.s_low"], beta_low=cfg["guidance.beta_low"],
                          gamma=cfg["guidance.gamma"], alpha=cfg["guidance.alpha"], w=cfg["guidance.w"])


def uncond_embedding(cfg: Config, t: GaussianMixtureField) -> np.ndarray:
    return t.null_embedding() if cfg["embedding.uncond"] == "null" else np.zeros(t.cond_dim)


def sampler_config(cfg: Config, steps=None) -> SamplerConfig:
    """``c_text`` keys the target class; ``c_uncond`` per ``embedding.uncond``."""
    t = task(cfg)
    T = steps or cfg["sampler.steps"]
    return SamplerConfig(T, t.class_embedding(cfg["task.target_class"]), uncond_embedding(cfg, t),
                         guidance(cfg), rf_mask=spread_mask(T, cfg["sampler.rf_fraction"]))


def objective(cfg: Config) -> GaussianObjective:
    return GaussianObjective(task(cfg, "onehot"), cfg["task.target_class"])


def train_config(cfg: Config) -> TrainConfig:
    return TrainConfig(means=cfg["task.means"], variances=cfg["task.variances"], hidden=cfg["train.hidden"],
                       batch_size=cfg["train.batch_size"], iterations=cfg["train.iterations"],
                       lr=cfg["train.lr"], null_prob=cfg["train.null_prob"], seed=cfg["seed"])


def run_training(cfg: Config):
    tc = train_config(cfg)
    return train(default_field(tc), tc)


def seed_list(cfg: Config, n: int):
    return [cfg["seed"] + i for i in range(n)]


def sample_one(cfg: Config, mode: str, seed: int, f=None):
    """Trajectory for one seed; the diagnostics score is the exact posterior score."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    f = f if f is not None else field(cfg)
    sc = sampler_config(cfg)
    noise = seed_noise(seed, f.state_dim)
    if mode == "standard":
        return standard_sample(f, noise, sc)
    return rf_sample(f, noise, sc, score=exact_score(task(cfg, "onehot"), cfg["task.target_class"]))


_fields = {}


def _cached_field(cfg: Config, snap: dict):
    key = tuple(sorted(snap.items()))
    if key not in _fields:
        _fields.clear()
        _fields[key] = field(cfg)
    return _fields[key]


def _job(args):
    snap, mode, seed, path = args
    cfg = Config(snap, env=False)
    tr = sample_one(cfg, mode, seed, _cached_field(cfg, snap))
    if path:
        write_csv(path, trajectory_columns(tr.latents.shape[1]), trajectory_rows(tr), seed)
    return {"seed": seed, "final_j": float(objective(cfg)(tr.final)), "nfe": tr.nfe,
            "final": [float(v) for v in tr.final], "trajectory": path or ""}


def run_samples(cfg: Config, mode: str, seeds, outdir=None, workers=1, command="") -> RunRecord:
    """Sample every seed; metrics come back in seed order whatever the scheduling."""
    t0 = time.perf_counter()
    snap = cfg.snapshot()
    if outdir:
        os.makedirs(os.path.join(outdir, "trajectories"), exist_ok=True)
    jobs = [(snap, mode, s, os.path.join(outdir, "trajectories", f"seed_{s}.csv") if outdir else None)
            for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            metrics = list(ex.map(_job, jobs))
    else:
        metrics = [_job(j) for j in jobs]
    rec = RunRecord(config=snap, seeds=list(seeds), mode=mode, metrics=metrics,
                    wall_clock=time.perf_counter() - t0, command=command or f"sample {mode}")
    log.info("%d seeds in %.2fs, mean J %.4f", len(seeds), rec.wall_clock,
             np.mean([m["final_j"] for m in metrics]))
    return rec


def replay(rec: RunRecord, outdir=None) -> RunRecord:
    """Re-run a record from its config snapshot."""
    return run_samples(Config(rec.config, env=False), rec.mode, rec.seeds, outdir, command=rec.command)
