"""``rfsampling`` command line: configs, training, sampling, checks, sweeps, plots."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__, experiment as ex
from .config import ConfigError, Config, load, render
from .fields import LinearEmbeddingField
from .numerics import Rng
from .outputs import (RunRecord, header, read_csv, svg_plot, trajectory_columns, trajectory_rows,
                      write_csv, write_report)
from .sampler import SamplerConfig, reflective_displacement
from .theory import (AXES, check_first_order, draw_probes, exact_score, second_order_scan, sweep,
                     uncond_scale_gap)
from .train import save_checkpoint

log = logging.getLogger("rfsampling")


def _floats(s):
    return [float(t) for t in s.split(",") if t.strip()]


def _common(p):
    p.add_argument("--config", help="config file (see gen-config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="base seed (RF_SEED also overrides)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="rfsampling", description=__doc__)
    ap.add_argument("--version", action="version", version=f"rfsampling {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-config", help="write the default config with provenance notes")
    _common(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("train", help="fit the MLP velocity field to the task mixture")
    _common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", default="model.rfck")
    p.add_argument("--loss-csv", default=None, help="defaults to <out>.loss.csv")

    p = sub.add_parser("sample", help="sample a batch of seeds")
    _common(p)
    p.add_argument("mode", choices=ex.MODES)
    p.add_argument("--gamma", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--checkpoint", help="sample the trained MLP instead of the exact field")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="samples")

    p = sub.add_parser("verify-first-order", help="displacement vs score gradient at probes")
    _common(p)
    p.add_argument("--field", choices=("linear", "gm", "mlp"), default="gm")
    p.add_argument("--checkpoint", help="trained field for --field mlp")
    p.add_argument("--probes", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--shrink", type=float, default=1.0, help="divide the semantic direction by this")
    p.add_argument("--out", default="first_order")

    p = sub.add_parser("verify-second-order", help="gain along the displacement vs the parabola optimum")
    _common(p)
    p.add_argument("--objective", choices=("gm", "quadratic"), default="gm")
    p.add_argument("--points", type=int, default=41, help="gamma grid size")
    p.add_argument("--out", default="second_order")

    p = sub.add_parser("sweep", help="paired-seed sweep of one sampler knob")
    _common(p)
    p.add_argument("--axis", required=True, choices=[a.replace("_", "-") for a in AXES])
    p.add_argument("--values", required=True, type=_floats)
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--checkpoint")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="sweep.csv")

    p = sub.add_parser("dump-trajectory", help="write one trajectory as CSV")
    _common(p)
    p.add_argument("--mode", choices=ex.MODES, default="rf")
    p.add_argument("--checkpoint")
    p.add_argument("--out", default="-")

    p = sub.add_parser("plot", help="CSV columns to an SVG line or scatter chart")
    p.add_argument("csv")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True, help="comma-separated columns")
    p.add_argument("--scatter", action="store_true")
    p.add_argument("--title", default="")
    p.add_argument("--out", default=None, help="defaults to the CSV name with .svg")

    p = sub.add_parser("replay", help="re-run a run record and compare metrics")
    p.add_argument("record")
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve(args) -> Config:
    cfg = load(args.config) if args.config else Config()
    raw = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        raw["seed"] = str(args.seed)
    for flag, key in (("gamma", "guidance.gamma"), ("steps", "sampler.steps"),
                      ("iterations", "train.iterations"), ("workers", "run.workers")):
        if getattr(args, flag, None) is not None:
            raw[key] = str(getattr(args, flag))
    if getattr(args, "checkpoint", None):
        raw["field.kind"] = "mlp"
        raw["field.checkpoint"] = args.checkpoint
    cfg.update(raw)  # RF_SEED already beat the file; an explicit --seed beats both
    if cfg["field.kind"] == "mlp":
        cfg.update({"field.checkpoint": os.path.abspath(cfg["field.checkpoint"])})
    return cfg


def _stem(path):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    return path


def cmd_gen_config(args, cfg):
    text = f"# {header(cfg['seed'])}\n" + render(cfg)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(_stem(args.out), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return 0


def cmd_train(args, cfg):
    res = ex.run_training(cfg)
    save_checkpoint(res.field, _stem(args.out))
    every = ex.train_config(cfg).log_every
    loss_csv = args.loss_csv or args.out + ".loss.csv"
    write_csv(loss_csv, ["iteration", "loss"], [((i + 1) * every, l) for i, l in enumerate(res.losses)], cfg["seed"])
    print(f"wrote {args.out} and {loss_csv}; final window loss {res.losses[-1]:.4f}")
    return 0


def cmd_sample(args, cfg):
    seeds = ex.seed_list(cfg, args.seeds)
    os.makedirs(args.out, exist_ok=True)
    rec = ex.run_samples(cfg, args.mode, seeds, args.out, cfg["run.workers"], command=f"sample {args.mode}")
    rec.save(os.path.join(args.out, "record.json"))
    d = len(rec.metrics[0]["final"])
    write_csv(os.path.join(args.out, "samples.csv"), ["seed", *[f"x_{i}" for i in range(d)], "final_j", "nfe"],
              [[m["seed"], *m["final"], m["final_j"], m["nfe"]] for m in rec.metrics], cfg["seed"])
    js = np.array([m["final_j"] for m in rec.metrics])
    summary = {"mode": args.mode, "seeds": len(seeds), "mean_j": float(js.mean()),
               "std_j": float(js.std(ddof=1)) if js.size > 1 else 0.0,
               "nfe": rec.metrics[0]["nfe"], "wall_clock_s": rec.wall_clock}
    write_report(os.path.join(args.out, "summary.txt"), summary, cfg["seed"])
    print(f"{args.mode}: {len(seeds)} seeds, mean J {summary['mean_j']:.4f}, NFE {summary['nfe']} -> {args.out}")
    return 0


def _linear_setup(cfg, rng):
    # no x or tau dependence, so the round trip carries no Euler defect
    d, m = 3, 4
    f = LinearEmbeddingField(np.zeros((d, d)), rng.normal(d), rng.normal(d * m).reshape(d, m))
    return f, rng.normal(m), np.zeros(m)


def cmd_first_order(args, cfg):
    rng = Rng(cfg["seed"], 2)
    steps = args.steps or cfg["verify.steps"]
    probes = args.probes or cfg["verify.probes"]
    if args.shrink <= 0:
        raise ConfigError("--shrink", "must be positive")
    if args.field == "linear":
        f, c_text, c_uncond = _linear_setup(cfg, rng)
        score = None
    else:
        if args.field == "mlp" and cfg["field.kind"] != "mlp":
            raise ConfigError("--checkpoint", "required with --field mlp")
        f = ex.field(cfg) if args.field == "mlp" else ex.task(cfg)
        t = ex.task(cfg)
        c_text, c_uncond = t.class_embedding(cfg["task.target_class"]), ex.uncond_embedding(cfg, t)
        score = exact_score(ex.task(cfg, "onehot"), cfg["task.target_class"])
    c_text = c_uncond + (c_text - c_uncond) / args.shrink
    sc = SamplerConfig(steps, c_text, c_uncond, ex.guidance(cfg))
    pts = draw_probes(f, sc, probes, rng)
    rep = check_first_order(f, sc, pts, rng, score)
    gap = uncond_scale_gap(f, sc, pts)
    items = {"field": args.field, "steps": steps, "shrink": args.shrink, "probes": rep.probes,
             "alignment": rep.alignment, "ascent_fraction": rep.ascent_fraction, "cosine": rep.cosine,
             "proportionality_residual": rep.proportionality_residual, "score_scale": rep.score_scale,
             "flagged": rep.flagged, "uncond_gap_high": gap[sc.guidance.s_high],
             "uncond_gap_low": gap[sc.guidance.s_low]}
    write_report(_stem(args.out + ".txt"), items, cfg["seed"])
    write_csv(args.out + ".csv", ["probe", "inner_product"], enumerate(rep.inner_products), cfg["seed"])
    for k, v in items.items():
        print(f"{k}: {v}")
    return 0


def cmd_second_order(args, cfg):
    rng = Rng(cfg["seed"], 3)
    if args.objective == "quadratic":
        d = 3
        L = rng.normal(d * d).reshape(d, d)
        H = L @ L.T + np.eye(d)
        mu = rng.normal(d)
        x = rng.normal(d)
        J = lambda y: -0.5 * (y - mu) @ H @ (y - mu)
        direction = -0.3 * H @ (x - mu)
    else:
        t = ex.task(cfg, "onehot")
        sc = SamplerConfig(cfg["sampler.steps"], t.class_embedding(cfg["task.target_class"]),
                           ex.uncond_embedding(cfg, t), ex.guidance(cfg))
        x, k = draw_probes(t, sc, 1, rng)[0]
        tau = k / sc.steps
        J = lambda y: t.log_posterior(y, tau, cfg["task.target_class"])
        direction = reflective_displacement(t, x, k, sc)
    rep = second_order_scan(J, x, direction, args.points)
    items = {"objective": args.objective, "gain": rep.gain, "curvature": rep.curvature,
             "concave": rep.concave, "gamma_star_closed": rep.gamma_star_closed if rep.concave else "none",
             "gamma_star_empirical": rep.gamma_star_empirical, "quadratic_fit_r2": rep.quadratic_fit_r2,
             "hessian_h_sensitivity": rep.hessian_h_sensitivity}
    write_report(_stem(args.out + ".txt"), items, cfg["seed"])
    write_csv(args.out + ".csv", ["gamma", "delta_j"], zip(rep.gamma_grid, rep.delta_j), cfg["seed"])
    for k, v in items.items():
        print(f"{k}: {v}")
    return 0


def cmd_sweep(args, cfg):
    axis = args.axis.replace("-", "_")
    seeds = ex.seed_list(cfg, args.seeds)
    res = sweep(ex.field(cfg), ex.objective(cfg), ex.sampler_config(cfg), axis, args.values, seeds,
                workers=cfg["run.workers"])
    cols = ["value", "mean_j", "std_j", "sem_j", "nfe"]
    write_csv(_stem(args.out), cols, ([r[c] for c in cols] for r in res.rows()), cfg["seed"],
              extra=f"axis={axis} seeds={len(seeds)}")
    for r in res.rows():
        print(f"{axis}={r['value']:g}  mean_j={r['mean_j']:.4f}  sem={r['sem_j']:.4f}  nfe={r['nfe']}")
    return 0


def cmd_dump(args, cfg):
    tr = ex.sample_one(cfg, args.mode, cfg["seed"])
    out = args.out if args.out == "-" else _stem(args.out)
    write_csv(out, trajectory_columns(tr.latents.shape[1]), trajectory_rows(tr), cfg["seed"])
    return 0


def cmd_plot(args):
    cols, rows = read_csv(args.csv)
    ys = [c.strip() for c in args.y.split(",")]
    for c in [args.x, *ys]:
        if c not in cols:
            raise ConfigError(c, f"no such column; have {', '.join(cols)}")
    ix = cols.index(args.x)
    series = {y: ([r[ix] for r in rows], [r[cols.index(y)] for r in rows]) for y in ys}
    seed = _seed_from_header(args.csv)
    out = args.out or os.path.splitext(args.csv)[0] + ".svg"
    svg_plot(out, series, seed, title=args.title, xlabel=args.x, ylabel=",".join(ys), scatter=args.scatter)
    print(f"wrote {out}")
    return 0


def _seed_from_header(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    for tok in first.split():
        if tok.startswith("seed="):
            return tok[5:]
    return "?"


def cmd_replay(args):
    rec = RunRecord.load(args.record)
    again = ex.replay(rec, args.out)
    same = [a["final"] == b["final"] and a["final_j"] == b["final_j"] and a["nfe"] == b["nfe"]
            for a, b in zip(rec.metrics, again.metrics)]
    print(f"replayed {len(same)} seeds: {sum(same)} identical")
    return 0 if all(same) and len(same) == len(rec.metrics) else 1


COMMANDS = {"gen-config": cmd_gen_config, "train": cmd_train, "sample": cmd_sample,
            "verify-first-order": cmd_first_order, "verify-second-order": cmd_second_order,
            "sweep": cmd_sweep, "dump-trajectory": cmd_dump}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "plot":
            return cmd_plot(args)
        if args.cmd == "replay":
            return cmd_replay(args)
        return COMMANDS[args.cmd](args, resolve(args))
    except ConfigError as e:
        print(f"rfsampling: invalid config: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"rfsampling: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
