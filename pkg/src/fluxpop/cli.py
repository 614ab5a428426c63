"""Command line: ``fluxpop {estimate,synth,evaluate,sweep-k,aggregate,validate}``.

A run is described by one JSON document (``--config``); long-form flags
override its fields. Relative input paths resolve against the config
file's directory. Exit status: 0 success, 1 pipeline/numeric failure,
2 usage or input failure (with a JSON error object on stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import analysis, estimator, ingest, synth
from .model import FluxpopError, InputError, NumericalError

log = logging.getLogger("fluxpop")

INPUT_KEYS = ("patterns", "panel", "population", "reference", "crosswalk", "estimate")
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


@dataclass
class RunConfig:
    inputs: list[dict] = field(default_factory=list)
    estimator: estimator.EstimatorConfig = field(default_factory=estimator.EstimatorConfig)
    evaluation: analysis.EvalConfig = field(default_factory=analysis.EvalConfig)
    out: Path = Path("run")
    log: str = "WARNING"
    threads: int = 1
    k_values: list[float] = field(default_factory=lambda: [4.0])
    places: list[str] | None = None
    daily: bool = False
    gzip: bool = False
    synth: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "estimator": self.estimator.to_dict(),
            "evaluation": asdict(self.evaluation),
            "out": str(self.out),
            "log": self.log,
            "threads": self.threads,
            "k_values": self.k_values,
            "places": self.places,
            "daily": self.daily,
            "gzip": self.gzip,
            "synth": self.synth,
        }


def _bundle_inputs(directory: str) -> dict:
    d = Path(directory)
    inputs = {key: str(d / f"{key}.csv") for key in ("patterns", "panel", "population")}
    for key in ("reference", "crosswalk"):
        if (d / f"{key}.csv").exists():
            inputs[key] = str(d / f"{key}.csv")
    return inputs


def _resolve_inputs(raw, base: Path) -> list[dict]:
    if raw is None:
        return []
    items = raw if isinstance(raw, list) else [raw]
    out = []
    for item in items:
        if isinstance(item, str):
            item = _bundle_inputs(str(base / item))
        unknown = set(item) - set(INPUT_KEYS)
        if unknown:
            raise InputError(f"unknown input keys {sorted(unknown)}")
        out.append({k: str(base / v) for k, v in item.items() if v})
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    base = Path.cwd()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"missing config file {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc.msg})") from None
        base = path.parent
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise InputError(f"unknown config fields {sorted(unknown)}")

    est = estimator.EstimatorConfig.from_dict(doc.get("estimator", {}))
    overrides = {}
    if args.k is not None:
        overrides["k"] = args.k
    if args.floor is not None:
        overrides["floor_frac"] = args.floor
    if args.rebalance_passes is not None:
        overrides["rebalance_iterations"] = args.rebalance_passes
    if overrides:
        est = replace(est, **overrides)

    cfg = RunConfig(
        inputs=_resolve_inputs(doc.get("inputs"), base),
        estimator=est,
        evaluation=analysis.EvalConfig.from_dict(doc.get("evaluation", {})),
        out=Path(doc.get("out", "run")) if "out" in doc else Path("run"),
        log=doc.get("log", os.environ.get("FLUXPOP_LOG", "WARNING")),
        threads=int(doc.get("threads", 1)),
        k_values=[float(k) for k in doc.get("k_values", [est.k])],
        places=doc.get("places"),
        daily=bool(doc.get("daily", False)),
        gzip=bool(doc.get("gzip", False)),
        synth=dict(doc.get("synth", {})),
    )
    if "out" in doc and not Path(doc["out"]).is_absolute():
        cfg.out = base / doc["out"]
    if args.bundle:
        cfg.inputs = [_bundle_inputs(b) for b in args.bundle]
    for key in ("patterns", "panel", "population", "reference", "crosswalk", "estimate"):
        value = getattr(args, key, None)
        if value:
            if not cfg.inputs:
                cfg.inputs = [{}]
            for item in cfg.inputs:
                item[key] = value
    if args.out:
        cfg.out = Path(args.out)
    if args.threads is not None:
        cfg.threads = args.threads
    if getattr(args, "k_values", None):
        cfg.k_values = [float(k) for k in args.k_values]
    if getattr(args, "places", None):
        cfg.places = args.places
    if getattr(args, "daily", False):
        cfg.daily = True
    if getattr(args, "gzip", False):
        cfg.gzip = True
    if cfg.threads < 1:
        raise InputError("threads must be >= 1")
    return cfg


def _write_json(path: Path, data) -> None:
    with ingest.atomic_open(path) as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _require_inputs(cfg: RunConfig) -> None:
    if not cfg.inputs:
        raise InputError("missing input: patterns")


def _load(item: dict) -> ingest.Dataset:
    return ingest.load_dataset(item)


def _map(cfg: RunConfig, fn, items):
    if cfg.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _month_dir(cfg: RunConfig, ds: ingest.Dataset, multi: bool) -> Path:
    return cfg.out / f"month_{ds.time.label}" if multi else cfg.out


def cmd_estimate(cfg: RunConfig) -> int:
    _require_inputs(cfg)
    datasets = [_load(item) for item in cfg.inputs]
    multi = len(datasets) > 1
    results = _map(cfg, lambda ds: estimator.run_pipeline(ds, cfg.estimator), datasets)
    for ds, res in zip(datasets, results):
        target = _month_dir(cfg, ds, multi)
        name = "population.csv.gz" if cfg.gzip else "population.csv"
        ingest.write_surface(target / name, res.population)
        _write_json(target / "diagnostics.json", res.diagnostics)
        log.info("%s: wrote %d rows to %s", ds.time.label, res.population.cells.size, target / name)
    return EXIT_OK


def _surface_for(cfg: RunConfig, item: dict, ds: ingest.Dataset):
    if item.get("estimate"):
        return ingest.load_surface(item["estimate"], ds.universe, ds.time)
    return estimator.run_pipeline(ds, cfg.estimator).population


def cmd_evaluate(cfg: RunConfig) -> int:
    _require_inputs(cfg)
    for item in cfg.inputs:
        if not item.get("reference"):
            raise InputError("missing input: reference")
    datasets = [_load(item) for item in cfg.inputs]
    pairs = list(zip(cfg.inputs, datasets))
    surfaces = _map(cfg, lambda p: _surface_for(cfg, *p), pairs)
    reports = [analysis.monthly_report(s, ds.reference, cfg.evaluation) for s, ds in zip(surfaces, datasets)]
    analysis.write_report(cfg.out / "report.csv", reports)
    _write_json(cfg.out / "report.json", [r.summary() for r in reports])
    return EXIT_OK


def cmd_sweep_k(cfg: RunConfig) -> int:
    _require_inputs(cfg)
    rows = []
    for item in cfg.inputs:
        ds = _load(item)
        for row in analysis.sweep_k(ds, cfg.k_values, ds.reference, cfg.estimator, cfg.evaluation):
            rows.append((ds.time.label, row))
    analysis.write_sweep(cfg.out / "sweep.csv", [r for _, r in rows])
    summary = {
        "months": sorted({m for m, _ in rows}),
        "inbound_linearity_spread": analysis.inbound_linearity([r for _, r in rows]) if len(cfg.inputs) == 1 else None,
        "rows": [
            {"month": m, "k": r.k, **(r.report.summary() if r.report else {}), "inbound_per_k": r.inbound_per_k}
            for m, r in rows
        ],
    }
    _write_json(cfg.out / "sweep.json", summary)
    return EXIT_OK


def cmd_aggregate(cfg: RunConfig) -> int:
    _require_inputs(cfg)
    for item in cfg.inputs:
        if not item.get("crosswalk"):
            raise InputError("missing input: crosswalk")
    multi = len(cfg.inputs) > 1
    for item in cfg.inputs:
        ds = _load(item)
        surface = _surface_for(cfg, item, ds)
        agg = analysis.aggregate_places(surface, ds.crosswalk)
        target = _month_dir(cfg, ds, multi)
        analysis.write_places(target / "places.csv", agg)
        selection = cfg.places or list(agg.places)
        if selection:
            analysis.export_profile(agg, selection, target / "profile.csv", daily=cfg.daily)
        _write_json(target / "unassigned.json", {"cbgs": list(agg.unassigned)})
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    _require_inputs(cfg)
    reports = []
    for item in cfg.inputs:
        ds = _load(item)
        report = ingest.validate_dataset(ds)
        reports.append({"month": ds.time.label, **report.to_dict()})
        for issue in report.issues:
            log.warning("%s: %s", ds.time.label, issue.message)
    _write_json(cfg.out / "validation.json", reports if len(reports) > 1 else reports[0])
    print(json.dumps({"issues": sum(len(r["issues"]) for r in reports)}))
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    settings = dict(cfg.synth)
    if args.preset:
        settings["preset"] = args.preset
    if args.seed is not None:
        settings["rng_seed"] = args.seed
    if args.months is not None:
        settings["months"] = args.months
    scfg = synth.SynthConfig.from_dict(settings)
    cfg.synth = scfg.to_dict()
    paths = synth.synthesize(scfg, cfg.out)
    log.info("wrote %d bundle(s) under %s", len(paths), cfg.out)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "sweep-k": cmd_sweep_k,
    "aggregate": cmd_aggregate,
    "validate": cmd_validate,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--k", type=float, help="adjusting coefficient (default 4)")
    p.add_argument("--floor", type=float, help="minimum population as a fraction of residents (default 0.10)")
    p.add_argument("--rebalance-passes", type=int, help="floor/rebalance passes before the hard clamp (default 1)")
    p.add_argument("--seed", type=int, help="random seed (synth)")
    p.add_argument("--threads", type=int, help="worker threads for multi-month runs")
    p.add_argument("--bundle", action="append", help="directory holding patterns/panel/population[/reference/crosswalk].csv; repeat per month")
    for key in INPUT_KEYS:
        p.add_argument(f"--{key}", help=f"path to {key}.csv")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxpop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("estimate", "synth", "evaluate", "sweep-k", "aggregate", "validate"):
        p = sub.add_parser(name)
        _common(p)
        if name == "estimate":
            p.add_argument("--gzip", action="store_true", help="write population.csv.gz")
        if name == "synth":
            p.add_argument("--preset", help=f"one of {', '.join(synth.preset_names())}")
            p.add_argument("--months", type=int, help="number of consecutive months")
        if name == "sweep-k":
            p.add_argument("--k-values", type=float, nargs="+", help="k values to sweep")
        if name == "aggregate":
            p.add_argument("--places", nargs="+", help="place ids to export as profiles")
            p.add_argument("--daily", action="store_true", help="export 24-hour moving averages")
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": message, "kind": kind}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        logging.basicConfig(level=getattr(logging, str(cfg.log).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
        if args.command == "synth":
            code = cmd_synth(cfg, args)
        else:
            code = COMMANDS[args.command](cfg)
        _write_json(cfg.out / "config.json", cfg.to_dict())
        return code
    except (InputError, FileNotFoundError) as exc:
        return _fail(EXIT_USAGE, "input", str(exc))
    except (NumericalError, ZeroDivisionError) as exc:
        return _fail(EXIT_FAILURE, "numeric", str(exc))
    except FluxpopError as exc:
        return _fail(EXIT_FAILURE, "pipeline", str(exc))


if __name__ == "__main__":
    sys.exit(main())
