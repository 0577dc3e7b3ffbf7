import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from oracles import random_diagram
from topocause.datagen import assign_treatment, gen_covariates, true_propensity
from topocause.nuisance import (
    FULL_FEATURES,
    MISSPECIFIED_FEATURES,
    CausalData,
    CausalSample,
    FeatureSpec,
    OutcomeModel,
    PropensityModel,
    fit_outcome,
    fit_propensity,
    fourier_basis,
    make_folds,
    project_scores,
)
from topocause.summaries import SummaryGrid, silhouette

G = SummaryGrid(0.0, 1.0, 201)


# ---------------------------------------------------------------- basis

def test_basis_single_row_is_constant():
    B = fourier_basis(1, G)
    assert B.shape == (1, 201)
    assert np.all(B == 1.0)


def test_basis_three_rows():
    B = fourier_basis(3, G)
    s = G.values
    np.testing.assert_allclose(B[1], np.sqrt(2) * np.cos(2 * np.pi * s), atol=1e-12)
    np.testing.assert_allclose(B[2], np.sqrt(2) * np.sin(2 * np.pi * s), atol=1e-12)


@pytest.mark.parametrize("J", [1, 2, 3, 5, 10, 30])
@pytest.mark.parametrize("grid", [G, SummaryGrid(-0.3, 8.5, 201)])
def test_basis_orthonormal_under_quadrature(J, grid):
    B = fourier_basis(J, grid)
    gram = (B * grid.trapezoid_weights()) @ B.T
    np.testing.assert_allclose(gram, np.eye(J), atol=1e-3)


def test_basis_rejects_zero():
    with pytest.raises(ValueError):
        fourier_basis(0, G)


# ---------------------------------------------------------------- outcome regression

def two_arm(n=120, l=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, l))
    A = np.tile([0, 1], n // 2)
    return X, A


def test_constant_curves_predicted_exactly():
    X, A = two_arm()
    curves = np.full((len(A), G.n_points), 0.37)
    om = fit_outcome(X, A, curves, G, J=5)
    Xn = np.random.default_rng(9).normal(size=(10, 3)) * 5
    for a in (0, 1):
        np.testing.assert_allclose(om.predict(Xn, a), 0.37, atol=1e-9)


def test_linear_coefficient_recovered():
    X, A = two_arm()
    B = fourier_basis(5, G)
    c = 0.8
    curves = c * X[:, [0]] * B[1]
    om = fit_outcome(X, A, curves, G, J=5, lam=0.0)
    for a in (0, 1):
        expected = np.zeros((5, 4))
        expected[1, 1] = c
        np.testing.assert_allclose(om.coef[a], expected, atol=1e-8)


def test_span_reconstruction_exact():
    X, A = two_arm(seed=1)
    B = fourier_basis(7, G)
    beta = np.random.default_rng(2).normal(size=(4, 7))
    curves = np.column_stack([np.ones(len(A)), X]) @ beta @ B
    om = fit_outcome(X, A, curves, G, J=7, lam=0.0)
    for a in (0, 1):
        idx = A == a
        np.testing.assert_allclose(om.predict(X[idx], a), curves[idx], atol=1e-8)


def test_small_basis_has_larger_residual():
    X, A = two_arm(seed=3)
    t = G.values
    curves = np.exp(-((t - 0.3 - 0.05 * X[:, [0]]) ** 2) / 0.005)
    res = []
    for J in (2, 15):
        om = fit_outcome(X, A, curves, G, J=J)
        pred = np.where(A[:, None] == 1, om.predict(X, 1), om.predict(X, 0))
        res.append(np.sum((pred - curves) ** 2))
    assert res[0] > res[1]


def test_ridge_shrinks_coefficients():
    X, A = two_arm(seed=4)
    curves = np.random.default_rng(5).normal(size=(len(A), G.n_points))
    norms = []
    for lam in (0.0, 0.1, 1.0, 10.0, 100.0):
        om = fit_outcome(X, A, curves, G, J=5, lam=lam)
        norms.append(np.linalg.norm(om.coef[1][:, 1:]))
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


def test_singular_design_without_ridge():
    X = np.ones((10, 2))
    A = np.tile([0, 1], 5)
    with pytest.raises(np.linalg.LinAlgError, match="ridge"):
        fit_outcome(X, A, np.zeros((10, G.n_points)), G, J=3, lam=0.0)


def test_missing_arm():
    X, _ = two_arm(10)
    with pytest.raises(ValueError, match="arm 1"):
        fit_outcome(X, np.zeros(10, int), np.zeros((10, G.n_points)), G)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([3, 5, 9]))
def test_smoother_lipschitz_transfer(seed, J):
    rng = np.random.default_rng(seed)
    n = 40
    X = rng.normal(size=(n, 2))
    A = np.tile([0, 1], n // 2)
    grid = SummaryGrid(0.0, 6.0, 121)
    curves = np.array([silhouette(random_diagram(rng), 1.0, grid).values for _ in range(n)])
    om = fit_outcome(X, A, curves, grid, J=J)
    B = om.basis
    Xn = rng.normal(size=(5, 2))
    for a in (0, 1):
        L = om.smoother_weights(Xn, a)
        pred = om.predict(Xn, a)
        # predictions are the linear smoother applied to the projected training curves
        proj = project_scores(om.train_curves[a], B, grid) @ B
        np.testing.assert_allclose(pred, L @ proj, atol=1e-9)
        lip_train = np.max(np.abs(np.diff(proj, axis=1)))
        mod = np.max(np.abs(np.diff(pred, axis=1)), axis=1)
        assert np.all(mod <= np.abs(L).sum(axis=1) * lip_train + 1e-9)


def test_outcome_model_json_roundtrip():
    X, A = two_arm()
    om = fit_outcome(X, A, np.random.default_rng(0).normal(size=(len(A), G.n_points)), G, J=3)
    back = OutcomeModel.from_json(om.to_json())
    np.testing.assert_array_equal(back.predict(X, 1), om.predict(X, 1))


# ---------------------------------------------------------------- propensity

def test_independent_treatment_gives_flat_fit():
    rng = np.random.default_rng(0)
    n = 4000
    X = rng.normal(size=(n, 2))
    A = (rng.uniform(size=n) < 0.3).astype(int)
    feats = FeatureSpec(((0,), (1,)), intercept=True)
    m = fit_propensity(X, A, feats)
    assert m.converged
    se_int = 1 / np.sqrt(n * 0.3 * 0.7)
    assert abs(m.coef[0] - logit(A.mean())) < 3 * se_int
    assert np.all(np.abs(m.coef[1:]) < 3 * se_int)


def test_zero_coefficients_predict_half():
    m = PropensityModel(FULL_FEATURES, np.zeros(7))
    assert m.predict(np.zeros((1, 5)))[0] == 0.5


def test_correct_specification_recovers_truth():
    X = gen_covariates(4000, seed=1)
    p = true_propensity(X)
    A = assign_treatment(p, seed=2)
    m = fit_propensity(X, A, FULL_FEATURES)
    np.testing.assert_allclose(m.coef, [-0.5, -0.1, 0.6, 0.1, 0.1, 0.5, -0.7], atol=0.35)
    p_hat = expit(FULL_FEATURES.design(X) @ m.coef)
    assert np.sqrt(np.mean((p_hat - p) ** 2)) < 0.05


def test_misspecified_features_are_two_terms():
    Z = MISSPECIFIED_FEATURES.design(np.arange(10.0).reshape(2, 5))
    np.testing.assert_array_equal(Z, [[0, 2], [5, 7]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.01, 0.05, 0.2]))
def test_predictions_clipped(seed, eps):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 5)) * 3
    A = (X[:, 0] + 0.3 * rng.normal(size=200) > 0).astype(int)
    if A.min() == A.max():
        A[0] = 1 - A[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = fit_propensity(X, A, FULL_FEATURES, eps)
    p = m.predict(rng.normal(size=(500, 5)) * 10)
    assert np.all((p >= eps) & (p <= 1 - eps))


def test_separation_warns():
    X = np.linspace(-1, 1, 40)[:, None] * np.ones((1, 5))
    A = (X[:, 0] > 0).astype(int)
    with pytest.warns(RuntimeWarning, match="separable"):
        m = fit_propensity(X, A, FeatureSpec(((0,),)))
    assert m.warnings


def test_propensity_errors():
    X = np.zeros((4, 5))
    with pytest.raises(ValueError):
        fit_propensity(X, np.ones(4))
    with pytest.raises(ValueError):
        fit_propensity(X, [0, 1, 0, 1], eps=0.6)


def test_propensity_json_roundtrip():
    X = gen_covariates(200, seed=3)
    A = assign_treatment(true_propensity(X), seed=4)
    m = fit_propensity(X, A)
    back = PropensityModel.from_json(m.to_json())
    np.testing.assert_array_equal(back.predict(X), m.predict(X))


def test_feature_spec_roundtrip():
    assert FeatureSpec.from_dict(FULL_FEATURES.to_dict()) == FULL_FEATURES


# ---------------------------------------------------------------- folds and data

def test_folds_even_split():
    plan = make_folds(10, 2, seed=0)
    assert [len(f) for f in plan.folds] == [5, 5]
    assert sorted(np.concatenate(plan.folds).tolist()) == list(range(10))


def test_folds_deterministic():
    a, b = make_folds(37, 3, seed=5), make_folds(37, 3, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))


def test_folds_odd_n():
    assert sorted(len(f) for f in make_folds(11, 2, seed=1).folds) == [5, 6]


def test_folds_errors():
    with pytest.raises(ValueError):
        make_folds(3, 2)
    with pytest.raises(ValueError):
        make_folds(10, 1)


def test_fold_labels():
    plan = make_folds(9, 3, seed=2)
    lab = plan.labels(9)
    for k, f in enumerate(plan.folds):
        assert np.all(lab[f] == k)


def test_causal_data_validation_and_samples():
    Y = {1: np.zeros((4, G.n_points))}
    with pytest.raises(ValueError):
        CausalData(np.zeros((4, 2)), [0, 1, 2, 0], Y, G)
    with pytest.raises(ValueError):
        CausalData(np.zeros((4, 2)), [0, 1, 1, 0], {1: np.zeros((4, 3))}, G)
    data = CausalData(np.arange(8.0).reshape(4, 2), [0, 1, 1, 0], Y, G)
    s = data[2]
    assert isinstance(s, CausalSample) and s.a == 1
    back = CausalData.from_samples([data[i] for i in range(4)], G)
    np.testing.assert_array_equal(back.X, data.X)
    assert len(data.subset([0, 3])) == 2
