"""Day/night, semester/break and festival contrasts for the scenario presets,
on the estimated place series and on the simulator's truth."""

from __future__ import annotations

import argparse

import numpy as np

from fluxpop.analysis import aggregate_places, calendar_day_means
from fluxpop.estimator import EstimatorConfig, run_pipeline
from fluxpop.ingest import Dataset
from fluxpop.synth import SynthConfig, generate_world, observe, true_population


def dataset(bundle) -> Dataset:
    return Dataset(bundle.universe, bundle.time, bundle.patterns, bundle.panel, bundle.population, bundle.reference, bundle.crosswalk)


def contrasts(series: np.ndarray, meta: dict) -> dict[str, float]:
    hod = np.arange(series.size) % 24
    daytime = (hod >= 7) & (hod < 19)
    days = calendar_day_means(series)
    out = {"day/night": series[daytime].mean() / series[~daytime].mean(), "peak/median day": days.max() / np.median(days)}
    if "semester_days" in meta:
        (s0, s1), (b0, b1) = meta["semester_days"], meta["break_days"]
        out["semester/break"] = days[s0:s1].mean() / days[b0:b1].mean()
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--k", type=float, default=1.0)
    parser.add_argument("--month", type=int, default=9)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    for preset in ("bedroom", "industrial", "university", "festival"):
        cfg = SynthConfig(preset=preset, month=args.month, rng_seed=args.seed)
        world = generate_world(cfg)
        estimate = run_pipeline(dataset(observe(world, cfg)), EstimatorConfig(k=args.k)).population
        place = world.meta["place"]
        for label, surface in (("estimate", estimate), ("truth", true_population(world))):
            series = aggregate_places(surface, world.crosswalk)[place].values
            stats = "  ".join(f"{name} {value:6.2f}" for name, value in contrasts(series, world.meta).items())
            print(f"{preset:<11} {label:<9} {stats}")


if __name__ == "__main__":
    main()
