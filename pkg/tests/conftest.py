from __future__ import annotations

import sys

import numpy as np
import pytest
import scipy.sparse as sp

from fluxpop.ingest import Dataset, PanelTable, patterns_from_arrays
from fluxpop.model import PopulationTable, build_time_index, build_universe
from fluxpop.synth import SynthConfig, generate_world, observe


def make_dataset(
    population,
    panel,
    origins,
    stops=None,
    dwell_minutes=None,
    totals=None,
    *,
    year=2022,
    month=9,
    days=None,
    reference=None,
):
    """Dataset from plain arrays; ``origins[c][j]`` is devices from j stopping in c."""
    n = len(population)
    universe = build_universe([chr(ord("A") + i) if n <= 26 else f"c{i:05d}" for i in range(n)])
    time = build_time_index(year, month, days)
    if stops is None:
        stops = np.zeros((time.tau, n))
    if dwell_minutes is None:
        dwell_minutes = np.zeros(n)
    patterns = patterns_from_arrays(universe, time, np.asarray(stops, float), dwell_minutes, sp.csr_matrix(np.asarray(origins, float)), totals)
    return Dataset(
        universe,
        time,
        patterns,
        PanelTable(universe, np.asarray(panel, dtype=float)),
        PopulationTable(universe, np.asarray(population, dtype=float)),
        reference,
    )


def bundle_dataset(bundle):
    return Dataset(
        bundle.universe, bundle.time, bundle.patterns, bundle.panel, bundle.population, bundle.reference, bundle.crosswalk
    )


@pytest.fixture(scope="session")
def separable():
    cfg = SynthConfig(preset="separable", n_cbgs=12, rng_seed=7, month=9)
    world = generate_world(cfg)
    return cfg, world, observe(world, cfg)


@pytest.fixture(scope="session")
def mixed():
    cfg = SynthConfig(preset="mixed", n_cbgs=12, rng_seed=11, month=9)
    world = generate_world(cfg)
    return cfg, world, observe(world, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(20220919)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
