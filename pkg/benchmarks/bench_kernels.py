"""Compiled vs numpy kernels, per call and end to end.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]
"""

import argparse
import sys
import timeit

import numpy as np

from rfsampling import _backend
from rfsampling.fields import GaussianMixtureField
from rfsampling.numerics import Rng
from rfsampling.sampler import SamplerConfig, rf_sample
from rfsampling.train import MlpField


def cases():
    f = GaussianMixtureField([[1, 0], [-1, 0]], [0.25, 1.0])
    x = np.array([0.3, -0.2])
    c = 10.0 * f.class_embedding(0) - 9.0 * f.null_embedding()
    z = f.keys @ c
    net = MlpField.init([2 + 1 + 3, 64, 64, 2], Rng(0))
    cfg = SamplerConfig(20, f.class_embedding(0), f.null_embedding())
    noise = Rng(1).normal(2)

    return [
        ("gm_class_terms", lambda: _backend.kernels.gm_class_terms(x, 0.4, 0.6, f.means, f.variances), 20000),
        ("gm_velocity", lambda: _backend.kernels.gm_velocity(x, 0.4, 0.6, f.means, f.variances, f.log_priors, z, False), 20000),
        ("gm_posterior", lambda: _backend.kernels.gm_posterior(x, 0.4, 0.6, f.means, f.variances, f.log_priors, 0), 20000),
        ("mlp_velocity", lambda: _backend.kernels.mlp_velocity(x, 0.4, c, net.weights, net.biases), 5000),
        ("rf_sample gm T=20", lambda: rf_sample(f, noise, cfg), 300),
        ("rf_sample mlp T=20", lambda: rf_sample(net, noise, cfg), 100),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled kernels not built; only the numpy path is timed", file=sys.stderr)
    rows = []
    saved = _backend.kernels
    try:
        for name, fn, n in cases():
            times = {}
            for b, mod in backends.items():
                _backend.kernels = mod
                times[b] = min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n * 1e6
            rows.append((name, times.get("python"), times.get("compiled")))
    finally:
        _backend.kernels = saved
    print(f"{'case':<22}{'python us':>12}{'compiled us':>13}{'speedup':>9}")
    for name, py, cc in rows:
        sp = f"{py / cc:8.1f}x" if cc else "      -"
        print(f"{name:<22}{py:12.2f}{(cc or float('nan')):13.2f}{sp}")
    if args.csv:
        from rfsampling.outputs import write_csv
        write_csv(args.csv, ["case", "python_us", "compiled_us"], rows, seed=0)


if __name__ == "__main__":
    main()
