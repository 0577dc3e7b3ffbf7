"""Experiment orchestration: counterfactual pools, replicated estimation, reports.

A run fixes one counterfactual pool (both potential outcomes for every unit),
whose silhouette difference averaged over units is the truth curve.  Each
replicate re-draws covariates and treatment on that pool with a seed derived
from the master seed and the replicate index, so replicates can be re-run in
isolation.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datagen
from .estimators import (
    estimate_aipw,
    estimate_all,
    l1_distance,
    std_summary,
    sup_test,
)
from .complexes import read_outcome, write_outcome
from .nuisance import FULL_FEATURES, MISSPECIFIED_FEATURES, CausalData, FeatureSpec
from .summaries import (
    PipelineConfig,
    SummaryGrid,
    _apply_cap,
    build_filtration,
    diagrams_for,
    pipeline_silhouette,
    silhouette,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "CounterfactualPool",
    "ExperimentReport",
    "build_pool",
    "draw_replicate",
    "run_experiment",
    "run_test",
    "emit_report",
    "benchmark_runtime",
    "DATASET_DEFAULTS",
    "write_dataset",
    "load_dataset",
    "estimate_dataset",
    "test_dataset",
]

log = logging.getLogger(__name__)

DATASETS = ("orbit", "synth-image", "synth-graph")
SCENARIOS = ("none", "mis-pi", "mis-mu")
ESTIMATORS = ("PI", "IPW", "AIPW")

# per-dataset defaults; r follows the weight choices used for each data type
DATASET_DEFAULTS = {
    "orbit": {"filtration": "alpha", "r": 3.0, "grid": {"t_min": 0.0, "t_max": 0.25, "n_points": 201},
              "J": 3, "mis_J": 2, "cap": {}},
    "synth-image": {"filtration": "cubical", "r": 0.1, "grid": {"t_min": 0.0, "t_max": 1.0, "n_points": 201},
                    "J": 10, "mis_J": 7, "cap": {}},
    "synth-graph": {"filtration": "graph", "r": 1.0, "grid": {"t_min": 0.0, "t_max": 8.5, "n_points": 201},
                    "J": 5, "mis_J": 2, "cap": {"1": ["uniform", 6.5, 8.5]}},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


def _features_from(value) -> FeatureSpec:
    if value == "full":
        return FULL_FEATURES
    if value == "misspecified":
        return MISSPECIFIED_FEATURES
    return FeatureSpec.from_dict(value)


@dataclass
class ExperimentConfig:
    dataset: str = "orbit"
    n: int = 300
    replicates: int = 20
    seed: int = 0
    degrees: tuple = (0, 1)
    filtration: str | None = None
    r: float | None = None
    grid: dict | None = None
    cap: dict | None = None
    n_points: int = 300
    orbit_order: str = "sequential"
    p_higher: float = 0.7
    image_size: int = 20
    mix: float = 0.75
    propensity_features: object = "full"
    eps: float = 0.01
    J: int | None = None
    mis_J: int | None = None
    lam: float = 1e-6
    K: int = 2
    estimators: tuple = ESTIMATORS
    scenario: str = "none"
    alpha: float = 0.05
    B: int = 1000
    multiplier: str = "rademacher"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset: expected one of {DATASETS}, got {self.dataset!r}")
        defaults = DATASET_DEFAULTS[self.dataset]
        for key in ("filtration", "r", "grid", "J", "mis_J", "cap"):
            if getattr(self, key) is None:
                setattr(self, key, copy.deepcopy(defaults[key]))
        self.degrees = tuple(int(d) for d in self.degrees)
        self.estimators = tuple(self.estimators)
        self.validate()

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(isinstance(self.n, int) and self.n >= 8, "n", "must be an integer >= 8")
        need(isinstance(self.replicates, int) and self.replicates >= 1, "replicates", "must be >= 1")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(len(self.degrees) > 0 and all(d in (0, 1) for d in self.degrees), "degrees",
             "must be a non-empty subset of {0, 1}")
        need(self.filtration in ("alpha", "rips", "cubical", "graph"), "filtration",
             f"unknown filtration {self.filtration!r}")
        need(self.r > 0, "r", "must be positive")
        try:
            SummaryGrid(**self.grid)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from None
        for k, v in self.cap.items():
            ok = v == "drop" or (isinstance(v, (list, tuple)) and (
                (len(v) == 2 and v[0] == "fixed") or (len(v) == 3 and v[0] == "uniform" and v[1] < v[2])))
            need(ok, f"cap.{k}", "expected 'drop', ['fixed', c] or ['uniform', lo, hi]")
        need(self.n_points >= 1, "n_points", "must be >= 1")
        need(self.orbit_order in ("sequential", "simultaneous"), "orbit_order",
             "must be 'sequential' or 'simultaneous'")
        need(0.0 <= self.p_higher <= 1.0, "p_higher", "must lie in [0, 1]")
        need(self.image_size >= 4, "image_size", "must be >= 4")
        need(0.0 <= self.mix <= 1.0, "mix", "must lie in [0, 1]")
        try:
            _features_from(self.propensity_features)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"propensity_features: {exc!r}") from None
        need(0.0 < self.eps < 0.5, "eps", "must lie in (0, 0.5)")
        need(self.J >= 1 and self.mis_J >= 1, "J", "basis sizes must be >= 1")
        need(self.lam >= 0, "lam", "must be >= 0")
        need(self.K >= 2 and self.n >= 2 * self.K, "K", "need K >= 2 and n >= 2K")
        need(set(self.estimators) <= set(ESTIMATORS) and self.estimators, "estimators",
             f"must be a non-empty subset of {ESTIMATORS}")
        need(self.scenario in SCENARIOS, "scenario", f"must be one of {SCENARIOS}")
        need(0.0 < self.alpha < 1.0, "alpha", "must lie in (0, 1)")
        need(self.B >= 200, "B", "use at least 200 bootstrap draws")
        need(self.multiplier in ("rademacher", "gaussian"), "multiplier", "must be 'rademacher' or 'gaussian'")

    # -- derived settings
    @property
    def summary_grid(self) -> SummaryGrid:
        return SummaryGrid(**self.grid)

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig.from_dict({"filtration": self.filtration, "grid": self.grid, "r": self.r,
                                         "degrees": list(self.degrees), "cap": self.cap})

    def nuisance_kwargs(self) -> dict:
        features = _features_from(self.propensity_features)
        J = self.J
        if self.scenario == "mis-pi":
            features = MISSPECIFIED_FEATURES
        elif self.scenario == "mis-mu":
            J = self.mis_J
        return {"K": self.K, "features": features, "J": J, "lam": self.lam, "eps": self.eps}

    # -- serialisation
    def to_dict(self) -> dict:
        d = asdict(self)
        d["degrees"] = list(self.degrees)
        d["estimators"] = list(self.estimators)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown key")
        try:
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_json(text)


# ---------------------------------------------------------------------------
# counterfactual pools


@dataclass
class CounterfactualPool:
    """Both potential outcomes per unit, raw and as silhouettes on the grid."""

    raw0: list
    raw1: list
    labels: list
    Y0: dict
    Y1: dict
    grid: SummaryGrid
    flags: list = field(default_factory=list)

    def truth(self, d: int) -> np.ndarray:
        return (self.Y1[d] - self.Y0[d]).mean(axis=0)

    def __len__(self):
        return len(self.raw0)


def _silhouette_task(args):
    outcome, pipeline, seed = args
    return pipeline_silhouette(outcome, pipeline, seed=seed)


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))
    return [fn(x) for x in items]


def raw_pairs(config: ExperimentConfig, seed: int):
    """Raw potential-outcome pairs and labels for ``config.n`` units."""
    n = config.n
    if config.dataset == "orbit":
        pools = datagen.gen_orbit_pools(n, config.n_points, datagen.derive_seed(seed, 0),
                                        order=config.orbit_order)
        return datagen.pair_orbit(pools, n, datagen.derive_seed(seed, 1), config.p_higher)
    if config.dataset == "synth-image":
        return datagen.synth_image_pairs(n, config.mix, datagen.derive_seed(seed, 0), size=config.image_size)
    return datagen.synth_graph_pairs(n, config.mix, datagen.derive_seed(seed, 0))


def build_pool(config: ExperimentConfig, seed: int | None = None, threads: int = 1) -> CounterfactualPool:
    """Generate the pool and its silhouettes; seeds derive from ``seed`` (default: master)."""
    seed = config.seed if seed is None else seed
    pairs, labels = raw_pairs(config, seed)
    pipe = config.pipeline
    tasks = [(pair[a], pipe, datagen.derive_seed(seed, 2, a, i)) for a in (0, 1) for i, pair in enumerate(pairs)]
    curves = _map(_silhouette_task, tasks, threads)
    n = len(pairs)
    Y = {a: {d: np.array([curves[a * n + i][d].values for i in range(n)]) for d in config.degrees}
         for a in (0, 1)}
    flags = sorted({f for c in curves for s in c.values() for f in s.flags})
    return CounterfactualPool([p[0] for p in pairs], [p[1] for p in pairs], labels,
                              Y[0], Y[1], config.summary_grid, flags)


def draw_replicate(pool: CounterfactualPool, seed: int) -> CausalData:
    """Covariates and treatment for one replicate on a fixed pool."""
    n = len(pool)
    X = datagen.gen_covariates(n, datagen.derive_seed(seed, 0))
    A = datagen.assign_treatment(datagen.true_propensity(X), datagen.derive_seed(seed, 1))
    Y = {d: np.where(A[:, None] == 1, pool.Y1[d], pool.Y0[d]) for d in pool.Y0}
    return CausalData(X, A, Y, pool.grid)


def replicate_seed(master: int, k: int) -> int:
    return datagen.derive_seed(master, 1000, k)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    grid: SummaryGrid
    truth: dict
    curves: dict
    summary: list
    tests: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    partial: bool = False

    def l1(self, kind: str, d: int) -> float:
        for row in self.summary:
            if row["estimator"] == kind and row["degree"] == d:
                return row["l1_dist"]
        raise KeyError((kind, d))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "grid": self.grid.to_dict(),
            "truth": {str(d): v.tolist() for d, v in self.truth.items()},
            "estimators": [
                {"estimator": k, "degree": d, "mean": v.mean(axis=0).tolist(),
                 "std": _band_sd(v).tolist()}
                for (k, d), v in sorted(self.curves.items(), key=lambda kv: (kv[0][1], kv[0][0]))
            ],
            "summary": self.summary,
            "tests": self.tests,
            "diagnostics": self.diagnostics,
            "partial": self.partial,
        }


def _band_sd(curves: np.ndarray) -> np.ndarray:
    return curves.std(axis=0, ddof=1) if curves.shape[0] > 1 else np.zeros(curves.shape[1])


def run_experiment(config: ExperimentConfig, pool: CounterfactualPool | None = None,
                   threads: int = 1, replicates=None) -> ExperimentReport:
    """Replicated PI/IPW/AIPW estimation on one fixed counterfactual pool.

    ``replicates`` restricts the run to the given replicate indices.
    """
    timings = {}
    t0 = time.perf_counter()
    pool = pool or build_pool(config, threads=threads)
    timings["pool"] = time.perf_counter() - t0
    kw = config.nuisance_kwargs()
    ks = range(config.replicates) if replicates is None else list(replicates)
    curves: dict = {(k, d): [] for k in config.estimators for d in config.degrees}
    diagnostics = []
    t1 = time.perf_counter()
    for k in ks:
        seed = replicate_seed(config.seed, k)
        try:
            data = draw_replicate(pool, seed)
            est = estimate_all(data, config.degrees, config.estimators,
                               seed=datagen.derive_seed(seed, 2), **kw)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("replicate %d failed: %s", k, exc)
            diagnostics.append({"replicate": k, "error": f"{type(exc).__name__}: {exc}"})
            continue
        for key in curves:
            curves[key].append(est[key].curve)
    timings["estimation"] = time.perf_counter() - t1
    done = len(ks) - len(diagnostics)
    if done == 0:
        raise RuntimeError("every replicate failed: " + "; ".join(d["error"] for d in diagnostics))
    curves = {key: np.array(v) for key, v in curves.items()}
    truth = {d: pool.truth(d) for d in config.degrees}
    summary = []
    for d in config.degrees:
        for kind in config.estimators:
            c = curves[(kind, d)]
            summary.append({"dataset": config.dataset, "degree": d, "estimator": kind,
                            "l1_dist": l1_distance(c.mean(axis=0), truth[d], pool.grid),
                            "std": std_summary(c)})
    timings["total"] = time.perf_counter() - t0
    return ExperimentReport(config, pool.grid, truth, curves, summary, [], diagnostics + [
        {"pool_flags": pool.flags}] if pool.flags else diagnostics, timings, partial=bool(diagnostics))


def run_test(config: ExperimentConfig, pool: CounterfactualPool | None = None, threads: int = 1,
             replicate: int = 0) -> dict:
    """AIPW sup-norm test of a zero effect, one report per degree, on one dataset."""
    pool = pool or build_pool(config, threads=threads)
    seed = replicate_seed(config.seed, replicate)
    data = draw_replicate(pool, seed)
    kw = config.nuisance_kwargs()
    reports = {}
    for d in config.degrees:
        est = estimate_aipw(data, d, seed=datagen.derive_seed(seed, 2), **kw)
        reports[d] = sup_test(est, config.alpha, config.B, config.multiplier,
                              seed=datagen.derive_seed(seed, 3, d))
    return reports


# ---------------------------------------------------------------------------
# output


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json")) -> list:
    """Write table.csv, report.json, per-curve band CSVs and timings.json.

    Everything except ``timings.json`` is a deterministic function of the report.
    """
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            rows = [[r["dataset"], r["degree"], r["estimator"], _fmt(r["l1_dist"]), _fmt(r["std"])]
                    for r in report.summary]
            p = out / "table.csv"
            p.write_text(_csv_text(["dataset", "degree", "estimator", "l1_dist", "std"], rows))
            written.append(p)
            bands = out / "bands"
            bands.mkdir(exist_ok=True)
            t = report.grid.values
            for (kind, d), c in sorted(report.curves.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                mean, sd = c.mean(axis=0), _band_sd(c)
                rows = [[_fmt(t[i]), _fmt(report.truth[d][i]), _fmt(mean[i]), _fmt(mean[i] - sd[i]),
                         _fmt(mean[i] + sd[i])] for i in range(len(t))]
                p = bands / f"{kind}_H{d}.csv"
                p.write_text(_csv_text(["t", "truth", "mean", "lower", "upper"], rows))
                written.append(p)
        if "json" in formats:
            p = out / "report.json"
            p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
            written.append(p)
        p = out / "timings.json"
        p.write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
        written.append(p)
    except OSError as exc:
        raise OSError(f"could not write report under {out}: {exc}") from exc
    return written


def test_reports_json(reports: dict) -> str:
    return json.dumps({str(d): r.to_dict() for d, r in reports.items()}, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# dataset directories

OUTCOME_KIND = {"orbit": ("cloud", ".csv"), "synth-image": ("image", ".csv"), "synth-graph": ("graph", ".csv")}


def write_dataset(config: ExperimentConfig, out_dir) -> Path:
    """Write one dataset: covariates, treatment, both potential outcomes, manifest.

    Covariates and treatment are those of replicate 0 of an experiment with the
    same config, so ``estimate`` on the directory matches that replicate.
    """
    out = Path(out_dir)
    (out / "outcomes").mkdir(parents=True, exist_ok=True)
    pairs, labels = raw_pairs(config, config.seed)
    seed = replicate_seed(config.seed, 0)
    X = datagen.gen_covariates(config.n, datagen.derive_seed(seed, 0))
    p = datagen.true_propensity(X)
    A = datagen.assign_treatment(p, datagen.derive_seed(seed, 1))
    rows = [[f"x{j + 1}" for j in range(X.shape[1])]] + [[repr(v) for v in r] for r in X.tolist()]
    (out / "covariates.csv").write_text(_csv_text(rows[0], rows[1:]))
    (out / "treatment.csv").write_text(_csv_text(["a", "propensity"],
                                                 [[int(a), repr(float(q))] for a, q in zip(A, p)]))
    kind, ext = OUTCOME_KIND[config.dataset]
    for i, (y0, y1) in enumerate(pairs):
        write_outcome(y0, out / "outcomes" / f"unit_{i:04d}_y0{ext}")
        write_outcome(y1, out / "outcomes" / f"unit_{i:04d}_y1{ext}")
    manifest = {
        "config": config.to_dict(),
        "outcome_kind": kind,
        "n": config.n,
        "replicate_seed": seed,
        "labels": [list(lab) if isinstance(lab, tuple) else lab for lab in labels],
        "rng": datagen.RNG_ALGORITHM,
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"topocause": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def load_dataset(data_dir, config: ExperimentConfig | None = None):
    """Read a dataset directory into observed silhouettes.

    Returns ``(config, CausalData)``; the config stored in the manifest is used
    unless one is passed explicitly.
    """
    d = Path(data_dir)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except OSError as exc:
        raise FileNotFoundError(f"{d}: no readable manifest.json ({exc.strerror})") from None
    config = config or ExperimentConfig.from_dict(manifest["config"])
    X = np.loadtxt(d / "covariates.csv", delimiter=",", skiprows=1, ndmin=2)
    A = np.loadtxt(d / "treatment.csv", delimiter=",", skiprows=1, ndmin=2)[:, 0].astype(int)
    kind, ext = OUTCOME_KIND[config.dataset]
    pipe = config.pipeline
    curves = []
    for i, a in enumerate(A.tolist()):
        outcome = read_outcome(d / "outcomes" / f"unit_{i:04d}_y{a}{ext}", kind)
        curves.append(pipeline_silhouette(outcome, pipe, seed=datagen.derive_seed(config.seed, 2, a, i)))
    Y = {deg: np.array([c[deg].values for c in curves]) for deg in config.degrees}
    return config, CausalData(X, A, Y, config.summary_grid)


def estimate_dataset(config: ExperimentConfig, data: CausalData) -> dict:
    seed = datagen.derive_seed(replicate_seed(config.seed, 0), 2)
    return estimate_all(data, config.degrees, config.estimators, seed=seed, **config.nuisance_kwargs())


def test_dataset(config: ExperimentConfig, data: CausalData) -> dict:
    seed = replicate_seed(config.seed, 0)
    reports = {}
    for d in config.degrees:
        est = estimate_aipw(data, d, seed=datagen.derive_seed(seed, 2), **config.nuisance_kwargs())
        reports[d] = sup_test(est, config.alpha, config.B, config.multiplier,
                              seed=datagen.derive_seed(seed, 3, d))
    return reports


# ---------------------------------------------------------------------------
# benchmarking


def benchmark_runtime(config: ExperimentConfig, n_units: int | None = None) -> dict:
    """Wall-clock seconds per pipeline stage over the pool's outcomes."""
    n_units = config.n if n_units is None else n_units
    cfg = copy.deepcopy(config)
    cfg.n = n_units
    pairs, _ = raw_pairs(cfg, cfg.seed)
    pipe = cfg.pipeline
    stages = {"filtration": 0.0, "persistence": 0.0, "silhouette": 0.0, "estimation": 0.0}
    t_start = time.perf_counter()
    Y = {a: {d: [] for d in cfg.degrees} for a in (0, 1)}
    rng = np.random.default_rng(cfg.seed)
    for pair in pairs:
        for a in (0, 1):
            t0 = time.perf_counter()
            cx = build_filtration(pair[a], pipe)
            t1 = time.perf_counter()
            diags = diagrams_for(cx, pipe.degrees)
            t2 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                for d in cfg.degrees:
                    capped = _apply_cap(diags[d], pipe.cap.get(d, "drop"), rng)
                    Y[a][d].append(silhouette(capped.pairs, pipe.r, pipe.grid, d).values)
            t3 = time.perf_counter()
            stages["filtration"] += t1 - t0
            stages["persistence"] += t2 - t1
            stages["silhouette"] += t3 - t2
    t0 = time.perf_counter()
    pool = CounterfactualPool([p[0] for p in pairs], [p[1] for p in pairs], [],
                              {d: np.array(Y[0][d]) for d in cfg.degrees},
                              {d: np.array(Y[1][d]) for d in cfg.degrees}, cfg.summary_grid)
    data = draw_replicate(pool, replicate_seed(cfg.seed, 0))
    estimate_all(data, cfg.degrees, cfg.estimators, seed=0, **cfg.nuisance_kwargs())
    stages["estimation"] = time.perf_counter() - t0
    total = time.perf_counter() - t_start
    return {"dataset": cfg.dataset, "n_units": n_units, "n_outcomes": 2 * n_units,
            "stages": stages, "total": total}


def timing_table(bench: dict) -> str:
    rows = [[k, f"{v:.4f}"] for k, v in bench["stages"].items()] + [["total", f"{bench['total']:.4f}"]]
    return _csv_text(["stage", "seconds"], rows)
