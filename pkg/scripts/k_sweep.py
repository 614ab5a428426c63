"""Sweep the adjusting coefficient on a synthetic metro month and report the
weighted relative difference against the truth-derived reference."""

from __future__ import annotations

import argparse

from fluxpop.analysis import sweep_k
from fluxpop.ingest import Dataset
from fluxpop.synth import SynthConfig, generate_world, observe


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=400)
    parser.add_argument("--k", type=float, nargs="+", default=[0.5, 1.0, 2.0, 3.0, 4.0, 6.0])
    parser.add_argument("--sampling-rate", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = SynthConfig(preset="metro", n_cbgs=args.n, sampling_rate=args.sampling_rate, rng_seed=args.seed, month=9)
    world = generate_world(cfg)
    b = observe(world, cfg)
    ds = Dataset(b.universe, b.time, b.patterns, b.panel, b.population, b.reference, b.crosswalk)
    print(f"{'k':>5} {'noon %':>8} {'midnight %':>11} {'negative CBGs':>14} {'clamped cells':>14}")
    for row in sweep_k(ds, args.k):
        print(
            f"{row.k:5.2f} {row.report.day_percent:8.1f} {row.report.night_percent:11.1f} "
            f"{row.negative_cbg_fraction:14.1%} {row.clamped_cells:14d}"
        )


if __name__ == "__main__":
    main()
