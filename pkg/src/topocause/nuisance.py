"""Nuisance learners: logistic propensity, Fourier function-on-scalar regression, folds."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .summaries import SummaryGrid

__all__ = [
    "CausalSample",
    "CausalData",
    "FeatureSpec",
    "PropensityModel",
    "OutcomeModel",
    "FoldPlan",
    "fourier_basis",
    "project_scores",
    "fit_outcome",
    "fit_propensity",
    "make_folds",
    "FULL_FEATURES",
    "MISSPECIFIED_FEATURES",
]


@dataclass
class CausalSample:
    x: np.ndarray
    a: int
    y: dict


@dataclass
class CausalData:
    """Covariates ``X`` (n x l), binary ``A`` and per-degree silhouette matrices.

    ``Y[d]`` is an (n x grid) array of observed silhouettes on ``grid``.
    """

    X: np.ndarray
    A: np.ndarray
    Y: dict
    grid: SummaryGrid

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.A = np.asarray(self.A).astype(int)
        if not np.isin(self.A, (0, 1)).all():
            raise ValueError("treatment must be binary")
        n = self.X.shape[0]
        if self.A.shape != (n,):
            raise ValueError("treatment length must match covariate rows")
        self.Y = {int(d): np.asarray(v, dtype=float) for d, v in self.Y.items()}
        for d, v in self.Y.items():
            if v.shape != (n, self.grid.n_points):
                raise ValueError(f"degree {d} outcomes have shape {v.shape}, expected {(n, self.grid.n_points)}")

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> CausalSample:
        return CausalSample(self.X[i], int(self.A[i]), {d: v[i] for d, v in self.Y.items()})

    def subset(self, idx) -> "CausalData":
        idx = np.asarray(idx)
        return CausalData(self.X[idx], self.A[idx], {d: v[idx] for d, v in self.Y.items()}, self.grid)

    @classmethod
    def from_samples(cls, samples, grid: SummaryGrid) -> "CausalData":
        samples = list(samples)
        degrees = samples[0].y.keys()
        return cls(
            np.array([s.x for s in samples]),
            np.array([s.a for s in samples]),
            {d: np.array([np.asarray(getattr(s.y[d], "values", s.y[d])) for s in samples]) for d in degrees},
            grid,
        )


# ---------------------------------------------------------------------------
# propensity


@dataclass(frozen=True)
class FeatureSpec:
    """Design columns: an optional intercept plus products of raw covariates.

    Each term is a tuple of 0-based covariate indices; ``(0,)`` is ``X1`` and
    ``(1, 2)`` the interaction ``X2 * X3``.
    """

    terms: tuple
    intercept: bool = True

    def design(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cols = [np.ones(X.shape[0])] if self.intercept else []
        for term in self.terms:
            cols.append(np.prod(X[:, list(term)], axis=1))
        return np.column_stack(cols) if cols else np.empty((X.shape[0], 0))

    def to_dict(self) -> dict:
        return {"terms": [list(t) for t in self.terms], "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(tuple(tuple(int(i) for i in t) for t in d["terms"]), bool(d.get("intercept", True)))


# the treatment mechanism's own terms, and the two-covariate misspecified model
FULL_FEATURES = FeatureSpec(((0,), (1,), (2,), (3,), (4,), (1, 2), (0, 2)), intercept=False)
MISSPECIFIED_FEATURES = FeatureSpec(((0,), (2,)), intercept=False)


@dataclass
class PropensityModel:
    features: FeatureSpec
    coef: np.ndarray
    eps: float = 0.01
    converged: bool = True
    warnings: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        p = expit(self.features.design(X) @ self.coef)
        return np.clip(p, self.eps, 1.0 - self.eps)

    def to_json(self) -> str:
        return json.dumps({
            "features": self.features.to_dict(),
            "coef": self.coef.tolist(),
            "eps": self.eps,
            "converged": self.converged,
            "warnings": self.warnings,
        })

    @classmethod
    def from_json(cls, text: str) -> "PropensityModel":
        d = json.loads(text)
        return cls(FeatureSpec.from_dict(d["features"]), np.asarray(d["coef"], dtype=float),
                   d["eps"], d["converged"], d["warnings"])


def fit_propensity(X, A, features: FeatureSpec = FULL_FEATURES, eps: float = 0.01,
                   max_iter: int = 100, tol: float = 1e-8) -> PropensityModel:
    """Logistic regression by iteratively reweighted least squares.

    Stops when the score (gradient of the log-likelihood) has max-norm below
    ``tol``.  Diverging coefficients signal separation; the fit is then returned
    with a warning and predictions stay clipped to ``[eps, 1 - eps]``.
    """
    if not 0 < eps < 0.5:
        raise ValueError("clip eps must lie in (0, 0.5)")
    A = np.asarray(A, dtype=float)
    if A.min() == A.max():
        raise ValueError("both treatment values must be present")
    Z = features.design(X)
    beta = np.zeros(Z.shape[1])
    notes = []
    converged = False
    for _ in range(max_iter):
        p = expit(Z @ beta)
        grad = Z.T @ (A - p)
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        w = np.maximum(p * (1 - p), 1e-12)
        H = Z.T @ (Z * w[:, None])
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(beta)) > 1e3:
            notes.append("coefficients diverging: treatment looks separable")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
            break
    if not notes:
        # the score can vanish before the coefficients blow up; check the margins too
        eta = Z @ beta
        if np.all((eta > 0) == (A == 1)) and np.min(np.abs(eta)) > 10:
            notes.append("fitted probabilities numerically 0 or 1: treatment looks separable")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    return PropensityModel(features, beta, eps, converged, notes)


# ---------------------------------------------------------------------------
# outcome regression


def fourier_basis(J: int, grid: SummaryGrid) -> np.ndarray:
    """J x n_points matrix: constant, then cos/sin pairs, orthonormal on the grid interval."""
    if J < 1:
        raise ValueError("basis size J must be >= 1")
    T = grid.length
    s = (grid.values - grid.t_min) / T
    rows = [np.full(grid.n_points, 1.0 / np.sqrt(T))]
    k = 1
    while len(rows) < J:
        rows.append(np.sqrt(2.0 / T) * np.cos(2 * np.pi * k * s))
        if len(rows) < J:
            rows.append(np.sqrt(2.0 / T) * np.sin(2 * np.pi * k * s))
        k += 1
    return np.vstack(rows)


def project_scores(curves: np.ndarray, basis: np.ndarray, grid: SummaryGrid) -> np.ndarray:
    """Basis scores of each curve by trapezoidal quadrature (n x J)."""
    return np.atleast_2d(curves) @ (basis * grid.trapezoid_weights()).T


@dataclass
class OutcomeModel:
    """Per-arm ridge regression of Fourier scores on ``[1, x]``.

    ``coef[a]`` is J x (l + 1); column 0 is the intercept.
    """

    grid: SummaryGrid
    J: int
    lam: float
    coef: dict
    train_design: dict = field(default_factory=dict, repr=False)
    train_curves: dict = field(default_factory=dict, repr=False)

    @property
    def basis(self) -> np.ndarray:
        return fourier_basis(self.J, self.grid)

    def predict(self, X, a: int) -> np.ndarray:
        """Predicted curves (n x grid) for arm ``a``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.column_stack([np.ones(X.shape[0]), X])
        return Z @ self.coef[a].T @ self.basis

    def smoother_weights(self, X, a: int) -> np.ndarray:
        """Weights ``L_j(x)`` on arm-``a`` training units (n x n_train).

        Predictions equal ``L @ P(train_curves)`` with ``P`` the basis projection.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.column_stack([np.ones(X.shape[0]), X])
        Zt = self.train_design[a]
        return Z @ _ridge_solve(Zt, np.eye(Zt.shape[0]), self.lam)

    def to_json(self) -> str:
        return json.dumps({
            "grid": self.grid.to_dict(),
            "J": self.J,
            "lam": self.lam,
            "coef": {str(a): c.tolist() for a, c in self.coef.items()},
        })

    @classmethod
    def from_json(cls, text: str) -> "OutcomeModel":
        d = json.loads(text)
        return cls(SummaryGrid(**d["grid"]), d["J"], d["lam"],
                   {int(a): np.asarray(c, dtype=float) for a, c in d["coef"].items()})


def _ridge_solve(Z: np.ndarray, S: np.ndarray, lam: float) -> np.ndarray:
    pen = lam * np.eye(Z.shape[1])
    pen[0, 0] = 0.0  # intercept unpenalised
    G = Z.T @ Z + pen
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise np.linalg.LinAlgError("singular design; use a positive ridge penalty")
    return np.linalg.solve(G, Z.T @ S)


def fit_outcome(X, A, curves: np.ndarray, grid: SummaryGrid, J: int = 5,
                lam: float = 1e-6) -> OutcomeModel:
    """Function-on-scalar regression of silhouettes on covariates, per arm."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.asarray(A).astype(int)
    curves = np.asarray(curves, dtype=float)
    basis = fourier_basis(J, grid)
    scores = project_scores(curves, basis, grid)
    coef, designs, train = {}, {}, {}
    for a in (0, 1):
        idx = np.flatnonzero(A == a)
        if idx.size == 0:
            raise ValueError(f"no training units in arm {a}")
        Z = np.column_stack([np.ones(idx.size), X[idx]])
        coef[a] = _ridge_solve(Z, scores[idx], lam).T
        designs[a] = Z
        train[a] = curves[idx]
    return OutcomeModel(grid, J, lam, coef, designs, train)


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int | None = None

    @property
    def K(self) -> int:
        return len(self.folds)

    def labels(self, n: int) -> np.ndarray:
        lab = np.empty(n, dtype=int)
        for k, f in enumerate(self.folds):
            lab[f] = k
        return lab


def make_folds(n: int, K: int = 2, seed=None) -> FoldPlan:
    """Shuffle ``range(n)`` and split into K near-equal folds."""
    if K < 2:
        raise ValueError("need at least two folds")
    if n < 2 * K:
        raise ValueError(f"n={n} too small for {K} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = tuple(np.sort(f) for f in np.array_split(perm, K))
    return FoldPlan(folds, seed if isinstance(seed, (int, np.integer)) else None)
