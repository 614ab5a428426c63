import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fluxpop.ingest import (
    PanelTable,
    load_crosswalk,
    load_dataset,
    load_panel,
    load_patterns,
    load_population,
    load_reference,
    load_surface,
    patterns_from_arrays,
    validate_dataset,
    write_panel,
    write_patterns,
    write_population,
    write_surface,
)
from fluxpop.model import HourMatrix, InputError, PopulationTable, build_time_index, build_universe

from conftest import make_dataset

U = build_universe(["A", "B", "C"])
SEPT = build_time_index(2022, 9)


def patterns_line(cbg, hourly, dwell=30, origins=None, total=None, month="2022-09"):
    origins = origins or {}
    total = sum(origins.values()) if total is None else total
    return ",".join(
        [
            cbg,
            month,
            '"' + json.dumps(hourly).replace('"', '""') + '"',
            str(dwell),
            '"' + json.dumps(origins).replace('"', '""') + '"',
            str(total),
        ]
    )


def write_lines(path, header, lines):
    path.write_text("\n".join([header, *lines]) + "\n")
    return path


PHEADER = "cbg,month,hourly_stops,median_dwell_minutes,origin_devices,total_origin_devices"


def test_patterns_720_values_accepted(tmp_path):
    hourly = [0] * 720
    hourly[5] = 3
    p = write_lines(tmp_path / "p.csv", PHEADER, [patterns_line("A", hourly, origins={"A": 8, "B": 2})])
    table = load_patterns(p, U)
    assert table.time.tau == 720
    assert table.stops[5, 0] == 3
    rec = table.record("A")
    assert rec.origin_ratios() == {"A": 0.8, "B": 0.2}
    # B and C have no row: no stops
    assert table.stops[:, 1:].sum() == 0


def test_patterns_wrong_length_names_line(tmp_path):
    p = write_lines(tmp_path / "p.csv", PHEADER, [patterns_line("A", [0] * 720), patterns_line("B", [0] * 700)])
    with pytest.raises(InputError, match=r":3: expected 720 hourly values"):
        load_patterns(p, U)


@pytest.mark.parametrize(
    "bad_cell,pattern",
    [
        ("[1,2", "bad JSON"),
        ("[-1" + ",0" * 719 + "]", "negative"),
    ],
)
def test_patterns_malformed_cells(tmp_path, bad_cell, pattern):
    hourly = '"' + bad_cell + '"'
    line = f'A,2022-09,{hourly},30,"{{}}",0'
    p = write_lines(tmp_path / "p.csv", PHEADER, [line])
    with pytest.raises(InputError, match=f":2: {pattern}"):
        load_patterns(p, U)


def test_patterns_rejects_nan(tmp_path):
    p = write_lines(tmp_path / "p.csv", PHEADER, [patterns_line("A", [0] * 720, dwell="nan")])
    with pytest.raises(InputError, match="not finite"):
        load_patterns(p, U)
    hourly = [0] * 719 + [float("inf")]
    p = write_lines(tmp_path / "q.csv", PHEADER, [patterns_line("A", hourly)])
    with pytest.raises(InputError):
        load_patterns(p, U)


def test_patterns_unknown_origins_dropped_and_counted(tmp_path):
    p = write_lines(
        tmp_path / "p.csv", PHEADER, [patterns_line("A", [1] * 720, origins={"A": 3, "ZZ": 4, "YY": 1}, total=8)]
    )
    table = load_patterns(p, U)
    assert table.dropped_origins == 2
    assert table.record("A").origin_devices == {"A": 3.0}
    # the file's total stays the ratio denominator
    assert table.totals[0] == 8


def test_patterns_unknown_rows_strict_and_lenient(tmp_path):
    p = write_lines(tmp_path / "p.csv", PHEADER, [patterns_line("Q", [0] * 720)])
    with pytest.raises(InputError, match="unknown CBG"):
        load_patterns(p, U, strict=True)
    assert load_patterns(p, U).unknown_rows == ("Q",)


def test_panel_examples(tmp_path):
    p = write_lines(tmp_path / "panel.csv", "cbg,panel_devices", ["A,20", "B,0"])
    panel = load_panel(p, U)
    assert panel.devices.tolist() == [20.0, 0.0, 0.0]
    assert panel.zero_panel.tolist() == [False, True, True]
    p = write_lines(tmp_path / "bad.csv", "cbg,panel_devices", ["A,-3"])
    with pytest.raises(InputError, match="negative"):
        load_panel(p, U)


def test_population_examples(tmp_path):
    p = write_lines(tmp_path / "pop.csv", "cbg,population", ["A,1500", "B,10", "C,0"])
    assert load_population(p, U).values.tolist() == [1500.0, 10.0, 0.0]
    p = write_lines(tmp_path / "missing.csv", "cbg,population", ["A,1500"])
    with pytest.raises(InputError, match="B, C"):
        load_population(p, U)
    p = write_lines(tmp_path / "neg.csv", "cbg,population", ["A,-5", "B,1", "C,1"])
    with pytest.raises(InputError):
        load_population(p, U)
    p = write_lines(tmp_path / "nan.csv", "cbg,population", ["A,nan", "B,1", "C,1"])
    with pytest.raises(InputError, match="not finite"):
        load_population(p, U)


def test_reference_examples(tmp_path):
    p = write_lines(tmp_path / "r.csv", "cbg,daytime_pop,nighttime_pop", ["A,1200,900", "B,0,0", "C,5,5"])
    ref = load_reference(p, U)
    assert ref.daytime.tolist() == [1200.0, 0.0, 5.0]
    assert ref.nighttime.tolist() == [900.0, 0.0, 5.0]
    p = write_lines(tmp_path / "bad.csv", "cbg,daytime_pop,nighttime_pop", ["A,lots,1", "B,0,0", "C,5,5"])
    with pytest.raises(InputError, match="not numeric"):
        load_reference(p, U)


def test_crosswalk_examples(tmp_path):
    p = write_lines(tmp_path / "x.csv", "cbg,place,area_fraction", ["A,place1,0.9", "B,place1,0.4"])
    recs = load_crosswalk(p, U)
    assert [(r.cbg, r.place, r.area_fraction) for r in recs] == [("A", "place1", 0.9), ("B", "place1", 0.4)]
    p = write_lines(tmp_path / "big.csv", "cbg,place,area_fraction", ["A,place1,1.2"])
    with pytest.raises(InputError, match="exceeds 1"):
        load_crosswalk(p, U)
    p = write_lines(tmp_path / "sum.csv", "cbg,place,area_fraction", ["A,p1,0.7", "A,p2,0.7"])
    with pytest.raises(InputError, match="sum to"):
        load_crosswalk(p, U)
    p = write_lines(tmp_path / "dup.csv", "cbg,place,area_fraction", ["A,p1,0.2", "A,p1,0.3"])
    with pytest.raises(InputError, match="duplicate pair"):
        load_crosswalk(p, U)


def test_missing_column_rejected(tmp_path):
    p = write_lines(tmp_path / "panel.csv", "cbg,devices", ["A,1"])
    with pytest.raises(InputError, match="missing columns"):
        load_panel(p, U)


def _random_patterns(rng, n, time):
    universe = build_universe([f"{i:012d}" for i in range(n)])
    stops = rng.integers(0, 5, (time.tau, n)).astype(float)
    dense = rng.integers(0, 6, (n, n)) * (rng.random((n, n)) < 0.5)
    return patterns_from_arrays(universe, time, stops, rng.integers(5, 200, n), sp.csr_matrix(dense))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_patterns_round_trip_byte_identical(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    table = _random_patterns(rng, n, build_time_index(2022, 2))
    d = tmp_path_factory.mktemp("rt")
    write_patterns(d / "a.csv", table)
    again = load_patterns(d / "a.csv", table.universe)
    write_patterns(d / "b.csv", again)
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()
    assert np.array_equal(again.stops, table.stops)
    assert (again.origins != table.origins).nnz == 0


@given(st.lists(st.floats(0, 1e7, allow_nan=False), min_size=3, max_size=3))
@settings(max_examples=30, deadline=None)
def test_flat_tables_round_trip(tmp_path_factory, values):
    d = tmp_path_factory.mktemp("flat")
    write_population(d / "pop.csv", PopulationTable(U, values))
    first = (d / "pop.csv").read_bytes()
    write_population(d / "pop2.csv", load_population(d / "pop.csv", U))
    assert (d / "pop2.csv").read_bytes() == first
    assert load_population(d / "pop.csv", U).values.tolist() == list(values)
    write_panel(d / "panel.csv", PanelTable(U, np.array(values)))
    assert load_panel(d / "panel.csv", U).devices.tolist() == list(values)


def test_surface_round_trip(tmp_path, rng):
    t = build_time_index(2022, 2)
    m = HourMatrix(t, U, rng.normal(100, 50, (t.tau, 3)))
    write_surface(tmp_path / "s.csv", m)
    back = load_surface(tmp_path / "s.csv", U, t)
    assert np.array_equal(back.cells, m.cells)


def test_gzip_output_is_deterministic(tmp_path, rng):
    t = build_time_index(2022, 2)
    m = HourMatrix(t, U, rng.random((t.tau, 3)))
    write_surface(tmp_path / "a.csv.gz", m)
    write_surface(tmp_path / "b.csv.gz", m)
    assert (tmp_path / "a.csv.gz").read_bytes() == (tmp_path / "b.csv.gz").read_bytes()
    assert np.array_equal(load_surface(tmp_path / "a.csv.gz", U, t).cells, m.cells)


def test_load_dataset_missing_input(tmp_path):
    for name in ("p.csv", "x.csv"):
        (tmp_path / name).write_text("cbg\n")
    with pytest.raises(InputError, match="missing input: panel"):
        load_dataset({"patterns": tmp_path / "p.csv", "population": tmp_path / "x.csv"})


def _toy():
    stops = np.zeros((720, 2))
    stops[10] = [4, 6]
    return make_dataset([1000, 500], [20, 10], [[3, 1], [2, 4]], stops=stops, dwell_minutes=[30, 30])


def test_validate_consistent_toy_is_clean():
    report = validate_dataset(_toy())
    assert report.ok and report.issues == ()
    assert report.coverage["n_cbgs"] == 2


def test_validate_flags_zero_panel_and_degenerate_month():
    ds = make_dataset([1000, 500], [20, 0], [[0, 0], [0, 0]])
    codes = {i.code: i for i in validate_dataset(ds).issues}
    assert codes["zero_panel"].message == "zero panel: fallback P applies"
    assert codes["zero_panel"].cbgs == ("B",)
    assert codes["degenerate_month"].message.startswith("degenerate month")


def test_validate_stop_mismatch_and_purity():
    ds = _toy()
    stops = np.zeros((720, 2))
    stops[:, 0] = 1  # 720 stops against 4 devices
    stops[10, 1] = 6
    bad = make_dataset([1000, 500], [20, 10], [[3, 1], [2, 4]], stops=stops)
    r1, r2 = validate_dataset(bad), validate_dataset(bad)
    assert r1 == r2
    assert [i.code for i in r1.issues] == ["stop_total_mismatch"]
    assert r1.issues[0].cbgs == ("A",)
    assert validate_dataset(ds).ok
