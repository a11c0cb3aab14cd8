"""Output files: commented CSV tables, key/value reports, run records, SVG.

Every file opens with ``# rfsampling <version> seed=<seed>`` (an XML
comment for SVG). CSV uses commas, ``.`` decimals, LF endings and one
header row after the comment lines.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from . import __version__


def header(seed, extra=None) -> str:
    line = f"rfsampling {__version__} seed={seed}"
    return line + (f" {extra}" if extra else "")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def write_csv(path, columns, rows, seed, extra=None) -> None:
    """``path="-"`` writes to stdout."""
    if path == "-":
        _csv_to(sys.stdout, columns, rows, seed, extra)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _csv_to(fh, columns, rows, seed, extra)


def _csv_to(fh, columns, rows, seed, extra):
    fh.write(f"# {header(seed, extra)}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])


def read_csv(path):
    """``(columns, rows)`` with numeric cells converted to float."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rd = csv.reader(io.StringIO("".join(lines)))
    cols = next(rd)
    rows = []
    for r in rd:
        out = []
        for v in r:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
        rows.append(out)
    return cols, rows


def write_report(path, items: dict, seed) -> None:
    """``key: value`` summary lines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {header(seed)}\n")
        for k, v in items.items():
            fh.write(f"{k}: {_cell(v)}\n")


def read_report(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if ln.startswith("#") or ":" not in ln:
                continue
            k, v = ln.split(":", 1)
            out[k.strip()] = v.strip()
    return out


def trajectory_rows(tr):
    """Rows ``step, tau, x_0.., drf_norm, drf_dot_score`` of a trajectory.

    The last row (the final sample) has no reflective stage and carries nan.
    """
    T = len(tr.taus) - 1
    for k in range(T + 1):
        norm = tr.drf_norm[k] if k < T else math.nan
        dot = tr.drf_dot_score[k] if k < T else math.nan
        yield [k, float(tr.taus[k]), *map(float, tr.latents[k]), float(norm), float(dot)]


def trajectory_columns(dim):
    return ["step", "tau", *[f"x_{i}" for i in range(dim)], "drf_norm", "drf_dot_score"]


@dataclass
class RunRecord:
    """Everything needed to replay a batch of samples bit for bit."""

    config: dict  # resolved snapshot, string values
    seeds: list
    mode: str = "rf"
    metrics: list = dc_field(default_factory=list)  # per seed: seed, final_j, nfe, trajectory
    wall_clock: float = 0.0
    version: str = __version__
    command: str = ""

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# {header(self.config.get('seed', '?'))}\n")
            json.dump(asdict(self), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunRecord":
        with open(path, encoding="utf-8") as fh:
            body = "".join(ln for ln in fh if not ln.startswith("#"))
        return cls(**json.loads(body))


def svg_plot(path, series, seed, title="", xlabel="", ylabel="", scatter=False,
             width=640, height=420) -> None:
    """Minimal SVG 1.1 line or scatter chart.

    ``series`` maps a label to ``(xs, ys)``. Non-finite points are dropped.
    """
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    pts = {}
    for name, (xs, ys) in series.items():
        xy = [(float(a), float(b)) for a, b in zip(xs, ys) if math.isfinite(a) and math.isfinite(b)]
        pts[name] = xy
    allp = [p for v in pts.values() for p in v]
    if not allp:
        raise ValueError("nothing to plot: no finite points")
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 64, 120, 36, 48
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f"<!-- {header(seed)} -->",
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           'font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 16}" text-anchor="middle">{fx:.3g}</text>')
        out.append(f'<text x="{ml - 6}" y="{sy(fy) + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2}" y="20" text-anchor="middle" font-size="13">{_esc(title)}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{_esc(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2})">{_esc(ylabel)}</text>')
    for i, (name, xy) in enumerate(pts.items()):
        col = colours[i % len(colours)]
        if scatter:
            out += [f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="{col}"/>' for a, b in xy]
        else:
            p = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in xy)
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{p}"/>')
        ly = mt + 14 * i + 8
        out.append(f'<rect x="{ml + pw + 10}" y="{ly - 8}" width="10" height="10" fill="{col}"/>')
        out.append(f'<text x="{ml + pw + 24}" y="{ly + 1}">{_esc(name)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(out) + "\n")


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
