"""Plug-in, IPW and cross-fitted AIPW estimators of the silhouette treatment effect.

All three share one per-unit representation: the estimate is the mean over units
of a contribution curve, and for IPW/AIPW that contribution is the (uncentered)
influence value used for inference.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nuisance import (
    FULL_FEATURES,
    CausalData,
    FeatureSpec,
    FoldPlan,
    OutcomeModel,
    PropensityModel,
    fit_outcome,
    fit_propensity,
    make_folds,
)
from .summaries import SummaryGrid

__all__ = [
    "EffectEstimate",
    "CovarianceEstimate",
    "TestReport",
    "NuisanceDeviation",
    "TruthModel",
    "CrossFit",
    "unit_contributions",
    "crossfit_nuisances",
    "estimate_pi",
    "estimate_ipw",
    "eif_values",
    "estimate_aipw",
    "estimate_all",
    "covariance",
    "sup_test",
    "bias_oracle",
    "variance_oracle",
    "l1_distance",
    "std_summary",
]


@dataclass
class EffectEstimate:
    kind: str
    curve: np.ndarray
    grid: SummaryGrid
    n: int
    degree: int | None = None
    if_matrix: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def se(self) -> np.ndarray:
        return covariance(self).se

    def to_json(self) -> str:
        rec = {
            "estimator": self.kind,
            "degree": self.degree,
            "grid": self.grid.to_dict(),
            "curve": self.curve.tolist(),
            "n": self.n,
            "metadata": self.metadata,
        }
        if self.if_matrix is not None:
            rec["se"] = self.se().tolist()
        return json.dumps(rec, indent=2, sort_keys=True)


@dataclass
class CovarianceEstimate:
    grid: SummaryGrid
    matrix: np.ndarray
    n: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.matrix), 0.0) / self.n)


@dataclass
class TestReport:
    T_n: float
    critical_value: float
    alpha: float
    B: int
    multiplier: str
    reject: bool
    bootstrap_summary: dict
    degree: int | None = None

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "T_n": self.T_n,
            "critical_value": self.critical_value,
            "alpha": self.alpha,
            "B": self.B,
            "multiplier": self.multiplier,
            "reject": self.reject,
            "bootstrap_summary": self.bootstrap_summary,
        }


# ---------------------------------------------------------------------------
# per-unit contributions


def unit_contributions(kind: str, A, Y, pi1, mu0=None, mu1=None, pi0=None) -> np.ndarray:
    """Per-unit curves whose mean is the estimate.

    ``pi1`` is the treated propensity and ``pi0`` the control one (default
    ``1 - pi1``); they are kept separate so deviations of each can be studied.
    """
    A = np.asarray(A, dtype=float)[:, None]
    Y = np.asarray(Y, dtype=float)
    if kind == "PI":
        return np.asarray(mu1) - np.asarray(mu0)
    pi1 = np.asarray(pi1, dtype=float)[:, None]
    pi0 = 1.0 - pi1 if pi0 is None else np.asarray(pi0, dtype=float)[:, None]
    if kind in ("IPW", "IPW-known-pi"):
        return (A / pi1 - (1.0 - A) / pi0) * Y
    if kind == "AIPW":
        mu0, mu1 = np.asarray(mu0), np.asarray(mu1)
        return mu1 - mu0 + A / pi1 * (Y - mu1) - (1.0 - A) / pi0 * (Y - mu0)
    raise ValueError(f"unknown estimator {kind!r}")


def _propensity_values(prop, X) -> np.ndarray:
    if isinstance(prop, PropensityModel):
        return prop.predict(X)
    if callable(prop):
        return np.asarray(prop(X), dtype=float)
    return np.asarray(prop, dtype=float)


def _outcome_values(outcome, X, d=None):
    if isinstance(outcome, OutcomeModel):
        return outcome.predict(X, 0), outcome.predict(X, 1)
    if isinstance(outcome, dict):
        outcome = outcome[d]
    mu0, mu1 = outcome
    return np.asarray(mu0, dtype=float), np.asarray(mu1, dtype=float)


def _check_grid(data: CausalData, arr: np.ndarray) -> None:
    if arr.shape[-1] != data.grid.n_points:
        raise ValueError(f"curve length {arr.shape[-1]} does not match grid ({data.grid.n_points})")


def estimate_pi(data: CausalData, outcome, d: int) -> EffectEstimate:
    """Plug-in estimate: mean of ``mu1_hat(x_i) - mu0_hat(x_i)``.

    ``outcome`` is a fitted :class:`OutcomeModel` (trained on other units) or a
    pair of prediction arrays ``(mu0, mu1)``.
    """
    mu0, mu1 = _outcome_values(outcome, data.X, d)
    _check_grid(data, mu1)
    contrib = unit_contributions("PI", data.A, data.Y[d], None, mu0, mu1)
    return EffectEstimate("PI", contrib.mean(axis=0), data.grid, len(data), d)


def estimate_ipw(data: CausalData, propensity, d: int, known: bool = False) -> EffectEstimate:
    """IPW estimate; ``known=True`` marks a true propensity (randomised design)."""
    p = _propensity_values(propensity, data.X)
    if np.any(p <= 0) or np.any(p >= 1):
        if not (np.all(p[data.A == 1] > 0) and np.all(p[data.A == 0] < 1)):
            raise ValueError("propensity predictions must lie in (0, 1)")
    # a degenerate weight on the arm a unit did not receive contributes nothing
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(data.A == 1, 1.0 / p, -1.0 / (1.0 - p))
    contrib = w[:, None] * data.Y[d]
    kind = "IPW-known-pi" if known else "IPW"
    return EffectEstimate(kind, contrib.mean(axis=0), data.grid, len(data), d, if_matrix=contrib)


def eif_values(data: CausalData, propensity, outcome, d: int) -> np.ndarray:
    """Uncentered efficient influence curves, one row per unit."""
    p = _propensity_values(propensity, data.X)
    mu0, mu1 = _outcome_values(outcome, data.X, d)
    _check_grid(data, mu1)
    return unit_contributions("AIPW", data.A, data.Y[d], p, mu0, mu1)


# ---------------------------------------------------------------------------
# cross-fitting


@dataclass
class CrossFit:
    """Out-of-fold nuisance predictions for every unit."""

    pi: np.ndarray
    mu0: dict
    mu1: dict
    plan: FoldPlan
    models: list = field(default_factory=list, repr=False)


def _fold_ok(A: np.ndarray, plan: FoldPlan, min_arm: int) -> bool:
    n = A.size
    for f in plan.folds:
        mask = np.ones(n, dtype=bool)
        mask[f] = False
        if len(np.unique(A[f])) < 2:
            return False
        if min(np.sum(A[mask] == 0), np.sum(A[mask] == 1)) < min_arm:
            return False
    return True


def _plan_for(A: np.ndarray, K: int, seed, plan: FoldPlan | None, min_arm: int,
              max_retries: int = 10) -> FoldPlan:
    if plan is not None:
        if not _fold_ok(A, plan, min_arm):
            raise ValueError("fold plan leaves a fold or its training complement without both arms")
        return plan
    for attempt in range(max_retries + 1):
        s = seed if attempt == 0 else np.random.SeedSequence([int(seed or 0), attempt]).generate_state(1)[0]
        cand = make_folds(A.size, K, int(s) if s is not None else None)
        if _fold_ok(A, cand, min_arm):
            return cand
    raise ValueError(f"could not draw {K} folds with both arms in every fold and >= {min_arm} "
                     f"training units per arm after {max_retries} retries")


def crossfit_nuisances(
    data: CausalData,
    degrees=None,
    K: int = 2,
    seed=0,
    plan: FoldPlan | None = None,
    features: FeatureSpec = FULL_FEATURES,
    J: int = 5,
    lam: float = 1e-6,
    eps: float = 0.01,
) -> CrossFit:
    """Fit nuisances on each fold's complement and predict on the fold."""
    degrees = tuple(data.Y) if degrees is None else tuple(degrees)
    plan = _plan_for(data.A, K, seed, plan, min_arm=data.X.shape[1] + 2)
    n, m = len(data), data.grid.n_points
    pi = np.empty(n)
    mu0 = {d: np.empty((n, m)) for d in degrees}
    mu1 = {d: np.empty((n, m)) for d in degrees}
    models = []
    for fold in plan.folds:
        train = np.ones(n, dtype=bool)
        train[fold] = False
        prop = fit_propensity(data.X[train], data.A[train], features, eps)
        pi[fold] = prop.predict(data.X[fold])
        fold_models = {"propensity": prop}
        for d in degrees:
            om = fit_outcome(data.X[train], data.A[train], data.Y[d][train], data.grid, J, lam)
            mu0[d][fold] = om.predict(data.X[fold], 0)
            mu1[d][fold] = om.predict(data.X[fold], 1)
            fold_models[d] = om
        models.append(fold_models)
    return CrossFit(pi, mu0, mu1, plan, models)


def _meta(cf: CrossFit, **extra) -> dict:
    meta = {"K": cf.plan.K, "fold_seed": cf.plan.seed,
            "fold_sizes": [int(len(f)) for f in cf.plan.folds]}
    meta.update(extra)
    return meta


def estimate_aipw(
    data: CausalData,
    d: int,
    K: int = 2,
    seed=0,
    plan: FoldPlan | None = None,
    features: FeatureSpec = FULL_FEATURES,
    J: int = 5,
    lam: float = 1e-6,
    eps: float = 0.01,
    oracle: tuple | None = None,
    crossfit: CrossFit | None = None,
) -> EffectEstimate:
    """Cross-fitted AIPW: grand mean of out-of-fold influence curves.

    ``oracle=(pi, mu0, mu1)`` injects known nuisance values and skips fitting.
    """
    if oracle is not None:
        pi, mu0, mu1 = oracle
        contrib = unit_contributions("AIPW", data.A, data.Y[d], _propensity_values(pi, data.X), mu0, mu1)
        return EffectEstimate("AIPW", contrib.mean(axis=0), data.grid, len(data), d,
                              if_matrix=contrib, metadata={"nuisance": "oracle"})
    cf = crossfit or crossfit_nuisances(data, (d,), K, seed, plan, features, J, lam, eps)
    contrib = unit_contributions("AIPW", data.A, data.Y[d], cf.pi, cf.mu0[d], cf.mu1[d])
    meta = _meta(cf, J=J, lam=lam, eps=eps, features=features.to_dict())
    return EffectEstimate("AIPW", contrib.mean(axis=0), data.grid, len(data), d,
                          if_matrix=contrib, metadata=meta)


def estimate_all(data: CausalData, degrees=None, kinds=("PI", "IPW", "AIPW"), **nuisance_kw) -> dict:
    """PI, IPW and AIPW on shared out-of-fold nuisances; keyed by ``(kind, degree)``."""
    degrees = tuple(data.Y) if degrees is None else tuple(degrees)
    cf = crossfit_nuisances(data, degrees, **nuisance_kw)
    out = {}
    for d in degrees:
        for kind in kinds:
            contrib = unit_contributions(kind, data.A, data.Y[d], cf.pi, cf.mu0[d], cf.mu1[d])
            out[(kind, d)] = EffectEstimate(
                kind, contrib.mean(axis=0), data.grid, len(data), d,
                if_matrix=None if kind == "PI" else contrib, metadata=_meta(cf),
            )
    return out


# ---------------------------------------------------------------------------
# inference


def covariance(est: EffectEstimate) -> CovarianceEstimate:
    """Empirical covariance of the influence curves across units."""
    if est.if_matrix is None:
        raise ValueError(f"{est.kind} estimate carries no influence values")
    n = est.if_matrix.shape[0]
    if n < 2:
        raise ValueError("need at least two units")
    return CovarianceEstimate(est.grid, np.cov(est.if_matrix, rowvar=False, ddof=1).reshape(
        est.grid.n_points, est.grid.n_points), n)


def sup_test(est: EffectEstimate, alpha: float = 0.05, B: int = 1000,
             multiplier: str = "rademacher", seed=None) -> TestReport:
    """Multiplier-bootstrap test of a zero effect curve in sup norm.

    ``T_n = sqrt(n) max_t |psi_hat(t)|`` is compared with the ``1 - alpha``
    quantile of ``max_t |n^{-1/2} sum_i xi_i (IF_i(t) - psi_hat(t))|``.
    """
    if est.if_matrix is None:
        raise ValueError("the sup test needs influence values (use an AIPW estimate)")
    if B < 200:
        raise ValueError("use at least 200 bootstrap draws")
    IF = est.if_matrix
    n = IF.shape[0]
    centered = IF - est.curve[None, :]
    if not np.any(centered) and not np.any(est.curve):
        raise ValueError("degenerate influence matrix: all zero")
    rng = np.random.default_rng(seed)
    if multiplier == "rademacher":
        xi = rng.choice(np.array([-1.0, 1.0]), size=(B, n))
    elif multiplier == "gaussian":
        xi = rng.standard_normal((B, n))
    else:
        raise ValueError(f"unknown multiplier {multiplier!r}")
    sups = np.max(np.abs(xi @ centered), axis=1) / np.sqrt(n)
    crit = float(np.quantile(sups, 1.0 - alpha))
    T_n = float(np.sqrt(n) * np.max(np.abs(est.curve)))
    summary = {
        "mean": float(sups.mean()),
        "sd": float(sups.std(ddof=1)),
        "q50": float(np.quantile(sups, 0.5)),
        "q90": float(np.quantile(sups, 0.9)),
        "q95": float(np.quantile(sups, 0.95)),
        "q99": float(np.quantile(sups, 0.99)),
        "max": float(sups.max()),
    }
    return TestReport(T_n, crit, alpha, B, multiplier, T_n > crit, summary, est.degree)


# ---------------------------------------------------------------------------
# bias / variance under fixed nuisance deviations


@dataclass
class TruthModel:
    """True regressions ``mu(a, X) -> (n x grid)`` and propensity ``pi(X) -> (n,)``."""

    mu: Callable
    pi: Callable


def _as_matrix(v, n, m):
    return np.broadcast_to(np.asarray(v, dtype=float), (n, m)) if np.ndim(v) != 2 else np.asarray(v, float)


@dataclass
class NuisanceDeviation:
    """Additive outcome deviation ``Delta(a, X)`` and multiplicative propensity one ``delta(a, X)``.

    ``delta_a = 1 - pi_a / pi_hat_a``, so ``pi_hat_a = pi_a / (1 - delta_a)``.
    """

    Delta: Callable
    delta: Callable

    @classmethod
    def constant(cls, Delta1=0.0, delta1=0.0, Delta0=0.0, delta0=0.0) -> "NuisanceDeviation":
        Ds = {0: Delta0, 1: Delta1}
        ds = {0: delta0, 1: delta1}
        return cls(lambda a, X: Ds[a], lambda a, X: ds[a])

    def evaluate(self, X: np.ndarray, m: int):
        n = X.shape[0]
        D = {a: _as_matrix(self.Delta(a, X), n, m) for a in (0, 1)}
        dl = {a: np.broadcast_to(np.asarray(self.delta(a, X), dtype=float), (n,)) for a in (0, 1)}
        for a in (0, 1):
            if np.any(dl[a] >= 1):
                raise ValueError("delta_a >= 1 makes pi_hat_a non-positive")
        return D, dl

    def hat_nuisances(self, truth: TruthModel, X: np.ndarray, m: int):
        """``(pi1_hat, pi0_hat, mu0_hat, mu1_hat)`` implied by the deviation."""
        D, dl = self.evaluate(X, m)
        p1 = np.asarray(truth.pi(X), dtype=float)
        mu = {a: _as_matrix(truth.mu(a, X), X.shape[0], m) for a in (0, 1)}
        return p1 / (1 - dl[1]), (1 - p1) / (1 - dl[0]), mu[0] + D[0], mu[1] + D[1]


def _oracle_terms(dev: NuisanceDeviation, truth: TruthModel, X: np.ndarray, m: int):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    D, dl = dev.evaluate(X, m)
    mu = {a: _as_matrix(truth.mu(a, X), n, m) for a in (0, 1)}
    p1 = np.asarray(truth.pi(X), dtype=float)
    pa = {1: p1[:, None], 0: (1 - p1)[:, None]}
    dl = {a: dl[a][:, None] for a in (0, 1)}
    return D, dl, mu, pa


def bias_oracle(kind: str, dev: NuisanceDeviation, truth: TruthModel, X, m: int) -> np.ndarray:
    """Bias curve under fixed deviations, averaged over the covariate sample ``X``.

    AIPW: ``E(D1 d1 - D0 d0)``; PI: ``E(D1 - D0)``; IPW: ``-E(d1 mu1 - d0 mu0)``.
    """
    D, dl, mu, _ = _oracle_terms(dev, truth, X, m)
    if kind == "AIPW":
        return np.mean(D[1] * dl[1] - D[0] * dl[0], axis=0)
    if kind == "PI":
        return np.mean(D[1] - D[0], axis=0)
    if kind in ("IPW", "IPW-known-pi"):
        return -np.mean(dl[1] * mu[1] - dl[0] * mu[0], axis=0)
    raise ValueError(f"unknown estimator {kind!r}")


def variance_oracle(kind: str, dev: NuisanceDeviation, truth: TruthModel, X, m: int, n: int,
                    residual_var: Callable | None = None) -> np.ndarray:
    """Pointwise variance of the estimator for sample size ``n``.

    ``residual_var(a, X)`` gives ``Var(phi(t) | X, A=a)`` (n x grid); zero when
    omitted.  Expectations over X are sample means over ``X``.
    """
    D, dl, mu, pa = _oracle_terms(dev, truth, X, m)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    nx = X.shape[0]
    sig = {a: (np.zeros((nx, m)) if residual_var is None else _as_matrix(residual_var(a, X), nx, m))
           for a in (0, 1)}
    pihat = {a: pa[a] / (1 - dl[a]) for a in (0, 1)}
    # E{(eps_1 - eps_0)^2}: the arm indicators never overlap
    eps_term = np.mean(pa[1] * sig[1] / pihat[1] ** 2 + pa[0] * sig[0] / pihat[0] ** 2, axis=0)
    ratio10 = np.sqrt(pa[0] / pa[1])
    ratio01 = np.sqrt(pa[1] / pa[0])
    if kind == "PI":
        total = np.var(mu[1] + D[1] - mu[0] - D[0], axis=0)
    elif kind == "AIPW":
        first = np.var(mu[1] + D[1] * dl[1] - mu[0] - D[0] * dl[0], axis=0)
        third = np.mean((D[1] * (1 - dl[1]) * ratio10 + D[0] * (1 - dl[0]) * ratio01) ** 2, axis=0)
        total = first + eps_term + third
    elif kind in ("IPW", "IPW-known-pi"):
        first = np.var((1 - dl[1]) * mu[1] - (1 - dl[0]) * mu[0], axis=0)
        third = np.mean((mu[1] * (1 - dl[1]) * ratio10 + mu[0] * (1 - dl[0]) * ratio01) ** 2, axis=0)
        total = first + eps_term + third
    else:
        raise ValueError(f"unknown estimator {kind!r}")
    return total / n


# ---------------------------------------------------------------------------
# scoring


def l1_distance(curve, truth, grid: SummaryGrid) -> float:
    """Trapezoidal integral of ``|curve - truth|`` over the grid."""
    curve, truth = np.asarray(curve, dtype=float), np.asarray(truth, dtype=float)
    if curve.shape != truth.shape or curve.shape[-1] != grid.n_points:
        raise ValueError("curves must share the grid")
    return float(np.abs(curve - truth) @ grid.trapezoid_weights())


def std_summary(curves) -> float:
    """Square root of the average entry of the across-replicate covariance matrix."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    if curves.shape[0] < 2:
        return 0.0
    cov = np.cov(curves, rowvar=False, ddof=1)
    return float(np.sqrt(max(np.mean(cov), 0.0)))
