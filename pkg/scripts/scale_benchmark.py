"""Wall-clock cost of generation, observation and estimation as the number
of CBGs grows, with the pre-clamp hourly conservation error."""

from __future__ import annotations

import argparse
import time

import numpy as np

from fluxpop.estimator import run_pipeline
from fluxpop.ingest import Dataset
from fluxpop.synth import SynthConfig, generate_world, observe


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[200, 1000, 2500, 5000])
    parser.add_argument("--month", type=int, default=1)
    args = parser.parse_args()

    print(f"{'n':>6} {'world s':>8} {'observe s':>10} {'pipeline s':>11} {'conservation':>13} {'clamped':>9}")
    for n in args.sizes:
        cfg = SynthConfig(preset="metro", n_cbgs=n, month=args.month)
        t0 = time.perf_counter()
        world = generate_world(cfg)
        t1 = time.perf_counter()
        b = observe(world, cfg)
        t2 = time.perf_counter()
        ds = Dataset(b.universe, b.time, b.patterns, b.panel, b.population)
        res = run_pipeline(ds)
        t3 = time.perf_counter()
        pre = ds.population.values[None, :] - res.surface.outbound.cells + res.surface.inbound.cells
        err = float(np.max(np.abs(pre.sum(axis=1) - ds.population.total)) / ds.population.total)
        print(f"{n:6d} {t1 - t0:8.2f} {t2 - t1:10.2f} {t3 - t2:11.2f} {err:13.1e} {res.surface.clamped_cells:9d}")


if __name__ == "__main__":
    main()
