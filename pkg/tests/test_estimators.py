import json

import numpy as np
import pytest

from oracles import known_law
from topocause.datagen import gen_covariates
from topocause.estimators import (
    EffectEstimate,
    NuisanceDeviation,
    TestReport as SupTestReport,
    bias_oracle,
    covariance,
    crossfit_nuisances,
    eif_values,
    estimate_aipw,
    estimate_all,
    estimate_ipw,
    estimate_pi,
    l1_distance,
    std_summary,
    sup_test,
    unit_contributions,
    variance_oracle,
)
from topocause.nuisance import CausalData, FoldPlan, fit_outcome, fit_propensity
from topocause.summaries import SummaryGrid

G = SummaryGrid(0.0, 1.0, 51)
TRUTH, SAMPLE = known_law(G)


def dataset(n=400, seed=0):
    X, A, Y, mu0, mu1 = SAMPLE(n, seed)
    return CausalData(X, A, {1: Y}, G), mu0, mu1


# ---------------------------------------------------------------- PI

def test_pi_equal_regressions_is_zero():
    data, mu0, _ = dataset(50)
    assert not estimate_pi(data, (mu0, mu0), 1).curve.any()


def test_pi_constant_shift():
    data, mu0, _ = dataset(50)
    np.testing.assert_allclose(estimate_pi(data, (mu0, mu0 + 0.25), 1).curve, 0.25)


def test_pi_accepts_fitted_model():
    data, _, _ = dataset(200)
    om = fit_outcome(data.X, data.A, data.Y[1], G, J=5)
    est = estimate_pi(data, om, 1)
    np.testing.assert_allclose(est.curve, (om.predict(data.X, 1) - om.predict(data.X, 0)).mean(axis=0))


def test_grid_mismatch():
    data, mu0, _ = dataset(20)
    with pytest.raises(ValueError, match="grid"):
        estimate_pi(data, (mu0[:, :10], mu0[:, :10]), 1)
    with pytest.raises(ValueError):
        l1_distance(np.zeros(3), np.zeros(4), G)


# ---------------------------------------------------------------- IPW

def test_ipw_all_treated_is_treated_mean():
    Y = np.random.default_rng(0).uniform(size=(6, G.n_points))
    data = CausalData(np.zeros((6, 1)), np.ones(6), {0: Y}, G)
    est = estimate_ipw(data, np.ones(6), 0)
    np.testing.assert_allclose(est.curve, Y.mean(axis=0))


def test_ipw_rejects_invalid_propensity():
    data, _, _ = dataset(20)
    with pytest.raises(ValueError):
        estimate_ipw(data, np.full(20, 1.5), 1)


def test_known_pi_ipw_unbiased_under_no_effect():
    rng = np.random.default_rng(1)
    n, sims = 100, 200
    base = rng.uniform(size=(n, G.n_points))
    curves = []
    for _ in range(sims):
        A = (rng.uniform(size=n) < 0.5).astype(int)
        data = CausalData(np.zeros((n, 1)), A, {0: base}, G)
        curves.append(estimate_ipw(data, np.full(n, 0.5), 0, known=True).curve)
    curves = np.array(curves)
    se = curves.std(axis=0, ddof=1) / np.sqrt(sims)
    assert np.all(np.abs(curves.mean(axis=0)) <= 3 * se + 1e-12)


# ---------------------------------------------------------------- EIF and AIPW

def test_eif_treated_unit_on_its_regression():
    mu0, mu1 = np.zeros((1, G.n_points)), np.full((1, G.n_points), 0.4)
    data = CausalData(np.zeros((1, 1)), [1], {0: mu1.copy()}, G)
    np.testing.assert_allclose(eif_values(data, [0.3], (mu0, mu1), 0), mu1 - mu0)


def test_eif_control_unit_half_propensity():
    rng = np.random.default_rng(2)
    mu0, mu1, y = (rng.uniform(size=(1, G.n_points)) for _ in range(3))
    data = CausalData(np.zeros((1, 1)), [0], {0: y}, G)
    np.testing.assert_allclose(eif_values(data, [0.5], (mu0, mu1), 0), mu1 - mu0 - 2 * (y - mu0))


def test_eif_mean_with_true_nuisances_is_the_effect():
    data, mu0, mu1 = dataset(20000, seed=3)
    phi = eif_values(data, TRUTH.pi, (mu0, mu1), 1)
    psi = (mu1 - mu0).mean(axis=0)
    se = phi.std(axis=0, ddof=1) / np.sqrt(len(data))
    assert np.all(np.abs(phi.mean(axis=0) - psi) <= 3 * se)


def test_aipw_with_oracle_nuisances():
    data, mu0, mu1 = dataset(300)
    est = estimate_aipw(data, 1, oracle=(TRUTH.pi, mu0, mu1))
    np.testing.assert_allclose(est.curve, eif_values(data, TRUTH.pi, (mu0, mu1), 1).mean(axis=0))
    np.testing.assert_allclose(est.if_matrix.mean(axis=0), est.curve, atol=1e-12)


def test_aipw_reduces_to_pi_and_ipw():
    data, mu0, mu1 = dataset(300)
    p = TRUTH.pi(data.X)
    Y = data.Y[1]
    A = data.A[:, None]
    # residual term removed: outcomes replaced by the fitted regression of the received arm
    fitted = np.where(A == 1, mu1, mu0)
    no_resid = CausalData(data.X, data.A, {1: fitted}, G)
    np.testing.assert_allclose(estimate_aipw(no_resid, 1, oracle=(p, mu0, mu1)).curve,
                               estimate_pi(data, (mu0, mu1), 1).curve, atol=1e-12)
    zero = np.zeros_like(Y)
    np.testing.assert_allclose(estimate_aipw(data, 1, oracle=(p, zero, zero)).curve,
                               estimate_ipw(data, p, 1).curve, atol=1e-12)


def test_crossfit_uses_out_of_fold_models():
    data, _, _ = dataset(200)
    cf = crossfit_nuisances(data, (1,), K=2, seed=4, J=3)
    for fold, models in zip(cf.plan.folds, cf.models):
        np.testing.assert_allclose(cf.pi[fold], models["propensity"].predict(data.X[fold]))
        train = np.setdiff1d(np.arange(len(data)), fold)
        ref = fit_propensity(data.X[train], data.A[train])
        np.testing.assert_allclose(cf.pi[fold], ref.predict(data.X[fold]))


def test_fold_label_permutation_invariance():
    data, _, _ = dataset(200)
    plan = crossfit_nuisances(data, (1,), K=3, seed=5, J=3).plan
    swapped = FoldPlan(tuple(reversed(plan.folds)), plan.seed)
    a = estimate_aipw(data, 1, plan=plan, J=3)
    b = estimate_aipw(data, 1, plan=swapped, J=3)
    np.testing.assert_allclose(a.curve, b.curve, atol=1e-12)


def test_fold_retry_and_failure():
    n = 12
    A = np.zeros(n, int)
    A[:2] = 1
    data = CausalData(np.random.default_rng(0).normal(size=(n, 1)), A, {0: np.zeros((n, G.n_points))}, G)
    with pytest.raises(ValueError, match="retries"):
        crossfit_nuisances(data, (0,), K=2, seed=0)
    bad = FoldPlan((np.arange(6), np.arange(6, 12)))
    with pytest.raises(ValueError, match="both arms"):
        crossfit_nuisances(data, (0,), plan=bad)


def test_estimate_all_shares_nuisances():
    data, _, _ = dataset(300)
    out = estimate_all(data, (1,), K=2, seed=6, J=3)
    assert set(out) == {("PI", 1), ("IPW", 1), ("AIPW", 1)}
    ref = estimate_aipw(data, 1, seed=6, J=3)
    np.testing.assert_allclose(out[("AIPW", 1)].curve, ref.curve, atol=1e-12)
    assert out[("PI", 1)].if_matrix is None


def test_effect_estimate_json():
    data, mu0, mu1 = dataset(50)
    est = estimate_aipw(data, 1, oracle=(TRUTH.pi, mu0, mu1))
    rec = json.loads(est.to_json())
    assert rec["estimator"] == "AIPW"
    assert len(rec["curve"]) == len(rec["se"]) == G.n_points


# ---------------------------------------------------------------- covariance and tests

def est_from_if(IF):
    return EffectEstimate("AIPW", IF.mean(axis=0), G, IF.shape[0], 0, if_matrix=IF)


def test_covariance_identical_rows_is_zero():
    IF = np.tile(np.linspace(0, 1, G.n_points), (10, 1))
    np.testing.assert_allclose(covariance(est_from_if(IF)).matrix, 0.0, atol=1e-15)


def test_covariance_standard_normal():
    IF = np.random.default_rng(7).standard_normal((4000, G.n_points))
    cov = covariance(est_from_if(IF))
    np.testing.assert_allclose(np.diag(cov.matrix), 1.0, atol=4 * np.sqrt(2 / 4000))
    np.testing.assert_allclose(cov.se, np.sqrt(np.diag(cov.matrix) / 4000))


def test_covariance_psd_and_symmetric():
    IF = np.random.default_rng(8).normal(size=(30, G.n_points)).cumsum(axis=1)
    M = covariance(est_from_if(IF)).matrix
    np.testing.assert_allclose(M, M.T)
    assert np.linalg.eigvalsh(M).min() >= -1e-8


def test_covariance_errors():
    with pytest.raises(ValueError):
        covariance(EffectEstimate("PI", np.zeros(G.n_points), G, 5))
    with pytest.raises(ValueError):
        covariance(est_from_if(np.zeros((1, G.n_points))))


def test_sup_test_statistic_and_decision():
    rng = np.random.default_rng(9)
    IF = rng.normal(size=(200, G.n_points)) + 1.0
    rep = sup_test(est_from_if(IF), 0.05, 500, seed=1)
    assert isinstance(rep, SupTestReport)
    assert rep.T_n == pytest.approx(np.sqrt(200) * np.abs(IF.mean(axis=0)).max())
    assert rep.reject == (rep.T_n > rep.critical_value)
    assert rep.reject
    d = rep.to_dict()
    assert d["reject"] is True and d["B"] == 500


@pytest.mark.parametrize("multiplier", ["rademacher", "gaussian"])
def test_sup_test_size_under_null(multiplier):
    rng = np.random.default_rng(10)
    t = G.values
    rejections = 0
    sims = 200
    for k in range(sims):
        IF = rng.standard_normal((150, 1)) * np.sin(np.pi * t) + 0.3 * rng.standard_normal((150, G.n_points))
        rejections += sup_test(est_from_if(IF), 0.05, 300, multiplier, seed=k).reject
    assert abs(rejections / sims - 0.05) <= 0.05


def test_sup_test_errors():
    with pytest.raises(ValueError):
        sup_test(EffectEstimate("PI", np.zeros(G.n_points), G, 5))
    with pytest.raises(ValueError):
        sup_test(est_from_if(np.ones((5, G.n_points))), B=100)
    with pytest.raises(ValueError, match="degenerate"):
        sup_test(est_from_if(np.zeros((5, G.n_points))))
    with pytest.raises(ValueError):
        sup_test(est_from_if(np.ones((5, G.n_points))), multiplier="cauchy")


def test_pointwise_coverage_with_oracle_nuisances():
    hits, sims = 0, 200
    mid = G.n_points // 2
    for k in range(sims):
        data, mu0, mu1 = dataset(200, seed=100 + k)
        est = estimate_aipw(data, 1, oracle=(TRUTH.pi, mu0, mu1))
        se = covariance(est).se[mid]
        psi = (mu1 - mu0).mean(axis=0)[mid]
        hits += abs(est.curve[mid] - psi) <= 1.96 * se
    assert abs(hits / sims - 0.95) <= 0.05


# ---------------------------------------------------------------- bias and variance oracles

X_LAW = gen_covariates(4000, seed=11)


def test_bias_vanishes_without_outcome_deviation():
    dev = NuisanceDeviation.constant(delta1=0.2, delta0=-0.1)
    for kind in ("AIPW", "PI"):
        assert not bias_oracle(kind, dev, TRUTH, X_LAW, G.n_points).any()


def test_bias_vanishes_without_propensity_deviation():
    dev = NuisanceDeviation.constant(Delta1=0.1, Delta0=-0.3)
    for kind in ("AIPW", "IPW"):
        assert not bias_oracle(kind, dev, TRUTH, X_LAW, G.n_points).any()


def test_bias_closed_forms():
    dev = NuisanceDeviation.constant(Delta1=0.1, delta1=0.2)
    np.testing.assert_allclose(bias_oracle("AIPW", dev, TRUTH, X_LAW, G.n_points), 0.02)
    np.testing.assert_allclose(bias_oracle("PI", dev, TRUTH, X_LAW, G.n_points), 0.1)
    np.testing.assert_allclose(bias_oracle("IPW", dev, TRUTH, X_LAW, G.n_points),
                               -0.2 * TRUTH.mu(1, X_LAW).mean(axis=0))


def mc_bias(kind, dev, n=20000, seed=12):
    X, A, Y, mu0, mu1 = SAMPLE(n, seed)
    p1, p0, m0, m1 = dev.hat_nuisances(TRUTH, X, G.n_points)
    contrib = unit_contributions(kind, A, Y, p1, m0, m1, pi0=p0)
    err = contrib - (mu1 - mu0)
    return err.mean(axis=0), err.std(axis=0, ddof=1) / np.sqrt(n), X


@pytest.mark.parametrize("kind", ["AIPW", "PI", "IPW"])
def test_monte_carlo_bias_matches_closed_form(kind):
    dev = NuisanceDeviation.constant(Delta1=0.1, delta1=0.2)
    bias, se, X = mc_bias(kind, dev)
    closed = bias_oracle(kind, dev, TRUTH, X, G.n_points)
    idx = [5, 15, 25, 35, 45]
    assert np.all(np.abs(bias[idx] - closed[idx]) <= 3 * se[idx] + 1e-12)


def test_delta_must_stay_below_one():
    dev = NuisanceDeviation.constant(delta1=1.0)
    with pytest.raises(ValueError):
        bias_oracle("AIPW", dev, TRUTH, X_LAW, G.n_points)


def test_variance_degenerate_case():
    dev = NuisanceDeviation.constant()
    v = variance_oracle("AIPW", dev, TRUTH, X_LAW, G.n_points, n=100)
    mu0, mu1 = TRUTH.mu(0, X_LAW), TRUTH.mu(1, X_LAW)
    np.testing.assert_allclose(v[:1], 0.0, atol=1e-20)  # both mean curves vanish at t=0
    # with no residual noise and exact nuisances only the first term survives
    np.testing.assert_allclose(v, np.var(mu1 - mu0, axis=0) / 100)


def test_variance_delta_to_mu_substitution():
    Delta = lambda a, X: TRUTH.mu(a, X)
    delta = lambda a, X: np.full(X.shape[0], 0.1 if a else -0.2)
    aipw = NuisanceDeviation(Delta, delta)
    ipw = NuisanceDeviation(lambda a, X: 0.0, delta)
    m = G.n_points
    full_aipw = variance_oracle("AIPW", aipw, TRUTH, X_LAW, m, 1)
    full_ipw = variance_oracle("IPW", ipw, TRUTH, X_LAW, m, 1)
    # identical third terms: subtract the first terms and compare
    mu = {a: TRUTH.mu(a, X_LAW) for a in (0, 1)}
    first_aipw = np.var(mu[1] + mu[1] * 0.1 - mu[0] - mu[0] * -0.2, axis=0)
    first_ipw = np.var(0.9 * mu[1] - 1.2 * mu[0], axis=0)
    np.testing.assert_allclose(full_aipw - first_aipw, full_ipw - first_ipw, atol=1e-12)


def test_pi_has_smallest_variance():
    dev = NuisanceDeviation.constant()
    resid = lambda a, X: 0.04 * np.ones((X.shape[0], G.n_points))
    v = {k: variance_oracle(k, dev, TRUTH, X_LAW, G.n_points, 300, resid) for k in ("PI", "AIPW", "IPW")}
    assert np.all(v["PI"] <= v["AIPW"] + 1e-15)
    assert np.all(v["PI"] <= v["IPW"] + 1e-15)


def test_variance_oracle_matches_monte_carlo():
    dev = NuisanceDeviation.constant(Delta1=0.1, delta1=0.2)
    n, sims = 200, 400
    bump_var = lambda a, X: (0.2 * np.exp(-((G.values - 0.5) ** 2) / 0.1)) ** 2 * np.ones((X.shape[0], 1))
    rng_seeds = range(1000, 1000 + sims)
    for kind in ("PI", "AIPW", "IPW"):
        ests = []
        for s in rng_seeds:
            X, A, Y, mu0, mu1 = SAMPLE(n, s)
            p1, p0, m0, m1 = dev.hat_nuisances(TRUTH, X, G.n_points)
            ests.append(unit_contributions(kind, A, Y, p1, m0, m1, pi0=p0).mean(axis=0)[25])
        X_big = gen_covariates(20000, seed=5)
        v = variance_oracle(kind, dev, TRUTH, X_big, G.n_points, n, bump_var)[25]
        # sampling error of a variance from 400 draws is about 7%
        assert np.var(ests, ddof=1) == pytest.approx(v, rel=0.25)


# ---------------------------------------------------------------- scoring

def test_l1_identical_curves():
    c = np.random.default_rng(0).uniform(size=G.n_points)
    assert l1_distance(c, c, G) == 0.0


def test_l1_constant_gap():
    assert l1_distance(np.full(G.n_points, 0.3), np.zeros(G.n_points), G) == pytest.approx(0.3)


def test_std_summary_averages_covariance():
    curves = np.random.default_rng(1).normal(size=(20, G.n_points))
    assert std_summary(curves) == pytest.approx(np.sqrt(np.cov(curves, rowvar=False).mean()))
    assert std_summary(curves[:1]) == 0.0
