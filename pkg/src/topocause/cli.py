"""Command line entry point: ``topocause [global flags] <subcommand> [options]``.

Exit codes: 0 on success, 2 on a configuration error, 1 on any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import harness
from .complexes import read_outcome
from .harness import ConfigError, ExperimentConfig
from .metrics import distance_report, stability_check
from .persistence import PersistenceDiagram, diagram_from_csv, diagram_to_csv
from .summaries import PipelineConfig, SummaryGrid, _apply_cap, build_filtration, diagrams_for, silhouette

log = logging.getLogger("topocause")


def _global_flags(parser: argparse.ArgumentParser, default) -> None:
    parser.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
    parser.add_argument("--config", default=default, help="JSON experiment config")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--threads", type=int, default=default, help="worker processes for silhouettes")


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--n-points", type=int, default=201)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topocause", description=__doc__.splitlines()[0])
    _global_flags(parser, None)
    # repeated on each subcommand so the flags may follow it; SUPPRESS keeps the top-level value
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    common.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override one config key, e.g. --set n=100 --set 'degrees=[1]'")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset directory")

    p = sub.add_parser("persist", parents=[common], help="persistence diagram of one outcome file")
    p.add_argument("input")
    p.add_argument("--kind", choices=("cloud", "image", "graph"), required=True)
    p.add_argument("--filtration", choices=("alpha", "rips", "cubical", "graph"))
    p.add_argument("--max-dim", type=int, default=1, choices=(0, 1))

    p = sub.add_parser("silhouette", parents=[common], help="silhouette of a diagram CSV")
    p.add_argument("diagram")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--cap", default="drop", help="'drop', 'fixed:C' or 'uniform:LO:HI'")
    _grid_flags(p)

    p = sub.add_parser("distance", parents=[common], help="Wasserstein distance between two diagrams")
    p.add_argument("diagram_a")
    p.add_argument("diagram_b")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--r", type=float, default=None, help="also certify silhouette stability for this r")
    _grid_flags(p)

    p = sub.add_parser("estimate", parents=[common], help="PI/IPW/AIPW on a dataset directory")
    p.add_argument("data")
    p = sub.add_parser("test", parents=[common], help="sup-norm test of no effect on a dataset directory")
    p.add_argument("data")
    sub.add_parser("experiment", parents=[common], help="replicated experiment with reports")
    p = sub.add_parser("bench", parents=[common], help="per-stage runtime of the silhouette pipeline")
    p.add_argument("--units", type=int, default=None)
    return parser


# ---------------------------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected KEY=JSON")
        try:
            base[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            base[key.strip()] = raw
    if args.seed is not None:
        base["seed"] = args.seed
    return ExperimentConfig.from_dict(base)


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        (out / name).write_text(text if text.endswith("\n") else text + "\n")
        log.info("wrote %s", out / name)


def _read_diagram(path: str, degree: int) -> PersistenceDiagram:
    return diagram_from_csv(Path(path).read_text()).degree(degree)


def _grid_from(args, pairs: np.ndarray) -> SummaryGrid:
    t_min = args.t_min
    t_max = args.t_max
    if t_min is None:
        t_min = float(pairs[:, 0].min()) if len(pairs) else 0.0
    if t_max is None:
        t_max = float(pairs[:, 1].max()) if len(pairs) else 1.0
    try:
        return SummaryGrid(t_min, t_max, args.n_points)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _parse_cap(text: str):
    parts = text.split(":")
    if parts[0] == "drop" and len(parts) == 1:
        return "drop"
    try:
        if parts[0] == "fixed" and len(parts) == 2:
            return ("fixed", float(parts[1]))
        if parts[0] == "uniform" and len(parts) == 3:
            return ("uniform", float(parts[1]), float(parts[2]))
    except ValueError:
        pass
    raise ConfigError(f"--cap {text!r}: expected 'drop', 'fixed:C' or 'uniform:LO:HI'")


def cmd_gen_data(args) -> None:
    config = _load_config(args)
    out = _out_dir(args) or Path("dataset")
    harness.write_dataset(config, out)
    print(out)


def cmd_persist(args) -> None:
    filtration = args.filtration or {"cloud": "alpha", "image": "cubical", "graph": "graph"}[args.kind]
    outcome = read_outcome(args.input, args.kind)
    pipe = PipelineConfig(filtration, SummaryGrid(0.0, 1.0), degrees=tuple(range(args.max_dim + 1)))
    cx = build_filtration(outcome, pipe)
    diags = diagrams_for(cx, pipe.degrees)
    pts = np.vstack([diags[d].points for d in pipe.degrees])
    _emit(diagram_to_csv(PersistenceDiagram(pts)), _out_dir(args), "diagram.csv")


def cmd_silhouette(args) -> None:
    if not args.r > 0:
        raise ConfigError("--r: must be positive")
    cap = _parse_cap(args.cap)
    diag = _read_diagram(args.diagram, args.degree)
    capped = _apply_cap(diag, cap, np.random.default_rng(args.seed))
    grid = _grid_from(args, capped.pairs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        curve = silhouette(capped.pairs, args.r, grid, degree=args.degree)
    out = _out_dir(args)
    _emit(curve.to_csv(), out, "silhouette.csv")
    if out is not None:
        _emit(curve.to_json(), out, "silhouette.json")


def cmd_distance(args) -> None:
    D1 = _read_diagram(args.diagram_a, args.degree)
    D2 = _read_diagram(args.diagram_b, args.degree)
    if not (D1.is_finite() and D2.is_finite()):
        raise ValueError("diagrams contain infinite deaths; cap them first (silhouette --cap)")
    cert = None
    if args.r is not None:
        both = np.vstack([D1.pairs, D2.pairs]) if len(D1) + len(D2) else np.zeros((0, 2))
        cert = stability_check(D1, D2, args.r, _grid_from(args, both))
    _emit(distance_report(D1, D2, args.q, cert), _out_dir(args), "distance.json")


def cmd_estimate(args) -> None:
    config = _load_config(args) if (args.config or args.set or args.seed is not None) else None
    config, data = harness.load_dataset(args.data, config)
    estimates = harness.estimate_dataset(config, data)
    out = _out_dir(args)
    records = []
    for (kind, d), est in sorted(estimates.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        rec = json.loads(est.to_json())
        records.append(rec)
        if out is not None:
            rows = ["t,value"] + [f"{t!r},{v!r}" for t, v in zip(est.grid.values.tolist(), est.curve.tolist())]
            (out / f"{kind}_H{d}.csv").write_text("\n".join(rows) + "\n")
    _emit(json.dumps(records, indent=2, sort_keys=True), out, "estimates.json")


def cmd_test(args) -> None:
    config = _load_config(args) if (args.config or args.set or args.seed is not None) else None
    config, data = harness.load_dataset(args.data, config)
    reports = harness.test_dataset(config, data)
    _emit(harness.test_reports_json(reports), _out_dir(args), "test.json")


def cmd_experiment(args) -> None:
    config = _load_config(args)
    report = harness.run_experiment(config, threads=args.threads or 1)
    out = _out_dir(args) or Path("results")
    for p in harness.emit_report(report, out):
        log.info("wrote %s", p)
    with open(out / "table.csv") as fh:
        sys.stdout.write(fh.read())


def cmd_bench(args) -> None:
    config = _load_config(args)
    bench = harness.benchmark_runtime(config, args.units)
    out = _out_dir(args)
    _emit(harness.timing_table(bench), out, "bench.csv")
    if out is not None:
        _emit(json.dumps(bench, indent=2, sort_keys=True), out, "bench.json")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "persist": cmd_persist,
    "silhouette": cmd_silhouette,
    "distance": cmd_distance,
    "estimate": cmd_estimate,
    "test": cmd_test,
    "experiment": cmd_experiment,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is also our config-error code
        return int(exc.code or 0)
    if args.threads is not None and args.threads < 1:
        print("error: --threads: must be >= 1", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface any failure as exit code 1
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
