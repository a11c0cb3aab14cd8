"""Flat ``section.key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key has a default, a
parser and a provenance note that :func:`render` writes next to it. The
``RF_SEED`` environment variable overrides ``seed``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _float(s):
    v = float(s)
    if not np.isfinite(v):
        raise ValueError("must be finite")
    return v


def _nonneg(s):
    v = _float(s)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


def _posint(s):
    v = int(s)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _seed(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError("must be an unsigned 64-bit integer")
    return v


def _unit(s):
    v = _float(s)
    if not 0 <= v <= 1:
        raise ValueError("must lie in [0, 1]")
    return v


def _floats(s):
    vals = tuple(_float(t) for t in s.split(",") if t.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _ints(s):
    vals = tuple(_posint(t) for t in s.split(",") if t.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _rows(s):
    rows = tuple(_floats(r) for r in s.split(";") if r.strip())
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("rows must be non-empty and equally long")
    return rows


def _choice(*opts):
    def parse(s):
        s = s.strip()
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return s
    return parse


def _fmt(v):
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(_fmt(r) for r in v)
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    parse: object
    note: str


PUBLISHED, PILOT, CHOICE = "published default", "pilot-tuned", "artifact choice"

SCHEMA = [
    Key("seed", 0, _seed, CHOICE + "; RF_SEED overrides"),
    Key("task.means", ((1.0, 0.0), (-1.0, 0.0)), _rows, PILOT + "; rows split by ';'"),
    Key("task.variances", (0.25, 1.0), _floats, PILOT + "; unequal spreads keep the score informative"),
    Key("task.target_class", 0, int, CHOICE),
    Key("field.kind", "gm", _choice("gm", "mlp"), CHOICE + "; gm is the exact mixture field"),
    Key("field.checkpoint", "model.rfck", str, CHOICE + "; read when field.kind = mlp"),
    Key("field.embed_map", "onehot", _choice("onehot", "softmax"), CHOICE),
    Key("field.kappa", 0.5, _float, PILOT + "; softmax map only"),
    Key("embedding.uncond", "null", _choice("null", "zero"), CHOICE + "; designated null token or the zero vector"),
    Key("guidance.s_high", 9.0, _float, PUBLISHED),
    Key("guidance.beta_high", 0.7, _unit, PUBLISHED),
    Key("guidance.s_low", -1.0, _float, PUBLISHED),
    Key("guidance.beta_low", 0.3, _unit, PUBLISHED),
    Key("guidance.gamma", 0.5, _nonneg, PUBLISHED),
    Key("guidance.alpha", 1, _posint, PUBLISHED),
    Key("guidance.w", 1.0, _float, CHOICE + "; scales c_text only where exact"),
    Key("sampler.steps", 20, _posint, PILOT),
    Key("sampler.rf_fraction", 1.0, _unit, PUBLISHED + "; masked steps are spread evenly"),
    Key("train.hidden", (64, 64), _ints, CHOICE),
    Key("train.batch_size", 256, _posint, PILOT),
    Key("train.iterations", 5000, _posint, PILOT),
    Key("train.lr", 2e-3, _nonneg, PILOT),
    Key("train.null_prob", 0.2, _unit, PILOT),
    Key("verify.steps", 100, _posint, PILOT + "; keeps the Euler round-trip defect small"),
    Key("verify.probes", 500, _posint, CHOICE),
    Key("run.workers", 1, _posint, CHOICE),
]
KEYS = {k.name: k for k in SCHEMA}


class Config:
    """Resolved key/value map; ``cfg["guidance.gamma"]``."""

    def __init__(self, values=None, env=True):
        self.values = {k.name: k.default for k in SCHEMA}
        if values:
            self.update(values)
        if env and os.environ.get("RF_SEED", "") != "":
            self.update({"seed": os.environ["RF_SEED"]})

    def __getitem__(self, key):
        return self.values[key]

    def update(self, raw: dict) -> "Config":
        """Parse string (or typed) values; errors name the first bad key."""
        for key, val in raw.items():
            if key not in KEYS:
                raise ConfigError(key, "unknown key")
            try:
                self.values[key] = KEYS[key].parse(val) if isinstance(val, str) else KEYS[key].parse(_fmt(val))
            except (TypeError, ValueError) as e:
                raise ConfigError(key, f"invalid value {val!r} ({e})") from None
        self.check()
        return self

    def check(self):
        v = self.values
        K = len(v["task.means"])
        if K < 2:
            raise ConfigError("task.means", "need at least two classes")
        if len(v["task.variances"]) != K:
            raise ConfigError("task.variances", f"need {K} entries, one per class")
        if any(s <= 0 for s in v["task.variances"]):
            raise ConfigError("task.variances", "must be positive")
        if not 0 <= v["task.target_class"] < K:
            raise ConfigError("task.target_class", f"must lie in [0, {K})")
        if v["guidance.w"] < 1:
            raise ConfigError("guidance.w", "must be >= 1")

    def snapshot(self) -> dict:
        return {k: _fmt(v) for k, v in self.values.items()}

    def copy(self) -> "Config":
        return Config(self.snapshot(), env=False)


def parse_text(text: str, env=True) -> Config:
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected 'key = value', got {line!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if key in raw:
            raise ConfigError(key, "duplicate key")
        raw[key] = val
    return Config(raw, env=env)


def load(path, env=True) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), env=env)


def render(cfg: Config | None = None) -> str:
    """Config text with a provenance comment on every key."""
    cfg = cfg or Config(env=False)
    lines, section = [], None
    for k in SCHEMA:
        head = k.name.split(".")[0] if "." in k.name else None
        if head != section:
            lines.append("")
            section = head
        lines.append(f"{k.name} = {_fmt(cfg[k.name])}  # {k.note}")
    return "\n".join(lines).lstrip("\n") + "\n"
