"""Fast invariant checks, kept under ten seconds as a group."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steam_eval import cli, glm
from steam_eval.accuracy import comparator_weighted, steam_ppv_npv, steam_report
from steam_eval.cv import cv_heldout, make_fold_plan
from steam_eval.data import save_study_csv
from steam_eval.density_ratio import calibrate_pi, pi_gradient_wrt_beta
from steam_eval.inference import perturb
from steam_eval.pipeline import SteamConfig, fit_point
from steam_eval.risk import RiskCurve

from conftest import make_study

fast = settings(max_examples=25)
seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(scope="module")
def tiny_fit():
    return fit_point(make_study(n=60, n_unlabeled=150, n_target=150, seed=3), SteamConfig())


@fast
@given(seeds, st.integers(100, 300))
def test_roc_shape_auc_range_and_predictive_values(seed, n_t):
    rng = np.random.default_rng(seed)
    P = (rng.permutation(n_t) + 1) / n_t
    rep = steam_report(P, 0.2 + 0.6 * rng.random(n_t))
    roc = rep.roc
    assert np.all(np.diff(roc.tpr) <= 0) and np.all(np.diff(roc.fpr) <= 0)
    assert (roc.tpr[0], roc.fpr[0], roc.tpr[-1], roc.fpr[-1]) == (1.0, 1.0, 0.0, 0.0)
    assert 0.0 <= rep.auc <= 1.0
    op = rep.at_fpr[0.05]
    mu = rep.prevalence
    ppv = mu * op.tpr / (mu * op.tpr + (1 - mu) * op.fpr)
    npv = (1 - mu) * (1 - op.fpr) / ((1 - mu) * (1 - op.fpr) + mu * (1 - op.tpr))
    assert (op.ppv, op.npv) == pytest.approx((ppv, npv), abs=1e-15)
    assert (op.ppv, op.npv) == steam_ppv_npv(op.tpr, op.fpr, mu)


@fast
@given(seeds)
def test_weight_scale_invariance(seed):
    c = 7.3
    rng = np.random.default_rng(seed)
    P = rng.random(40)
    y = (rng.random(40) < P).astype(float)
    y[:2] = (0.0, 1.0)
    w = rng.gamma(2.0, 0.5, 40) + 0.01
    q = np.linspace(0, 1, 21)
    np.testing.assert_allclose(RiskCurve(P, y, w, 0.1)(q), RiskCurve(P, y, c * w, 0.1)(q),
                               rtol=1e-12, atol=1e-15)
    a, b = comparator_weighted(P, y, w), comparator_weighted(P, y, c * w)
    assert a.auc == pytest.approx(b.auc, abs=1e-14)
    X = np.column_stack([np.ones(40), P - 0.5])
    np.testing.assert_allclose(glm.fit_logistic(X, y, w).values,
                               glm.fit_logistic(X, y, c * w).values, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("variant", ["exact", "approx"])
def test_unit_perturbation_weights(tiny_fit, variant):
    d = perturb(tiny_fit, variant, G=np.ones((1, tiny_fit.data.n)))
    np.testing.assert_allclose(d.draws[0], d.point, rtol=0, atol=1e-8)


def test_cv_collapse(tiny_fit):
    cv = cv_heldout(tiny_fit, make_fold_plan(tiny_fit.data.y, 5, 0), refit=False)
    P_T = tiny_fit.scored.target_percentiles
    a = steam_report(P_T, cv.risk).scalars()
    b = steam_report(P_T, tiny_fit.risk).scalars()
    assert all(abs(a[k] - b[k]) <= 1e-10 for k in a)


def test_gradient_against_finite_differences(tiny_fit):
    cal = tiny_fit.scored.calibrator
    beta = cal.beta.values if hasattr(cal.beta, "values") else np.asarray(cal.beta)
    grad = pi_gradient_wrt_beta(cal)
    xa, xb = cal.labeled_inputs()
    eps = 1e-5
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = eps
        up, _ = cal.with_beta(beta + e).raw(xa, xb)
        dn, _ = cal.with_beta(beta - e).raw(xa, xb)
        fd = (up - dn) / (2 * eps)
        # differencing noise is about 1e-16 / eps = 1e-11, far below the floor
        scale = max(np.abs(fd).max(), np.abs(grad[:, j]).max(), 1e-6)
        assert np.max(np.abs(grad[:, j] - fd)) <= 1e-4 * scale


@fast
@given(seeds)
def test_coordinate_descent_objective_never_decreases(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(80), rng.standard_normal((80, 4))])
    y = (rng.random(80) < 1 / (1 + np.exp(-X[:, 1]))).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    try:
        path = glm.fit_lasso_path(X, y, n_lambda=8)
    except glm.SeparationError:
        return
    for coef in path:
        t = np.asarray(coef.trace)
        t = t[np.isfinite(t)]
        assert np.all(np.diff(t) >= -1e-12 * np.maximum(1, np.abs(t[:-1])))


def test_evaluate_and_simulate_are_bitwise_deterministic(tmp_path):
    d = make_study(n=60, n_unlabeled=150, n_target=150, seed=9)
    save_study_csv(d, tmp_path / "s.csv")
    outs = []
    for k in range(2):
        out = tmp_path / f"e{k}"
        assert cli.main(["evaluate", "--input", str(tmp_path / "s.csv"), "--draws", "120",
                         "--methods", "weighted,steam", "--no-plot", "--seed", "2",
                         "--out", str(out)]) == 0
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1]
    json.loads(outs[0])
    tables = []
    for k in range(2):
        out = tmp_path / f"s{k}"
        assert cli.main(["simulate", "--n", "60", "--N", "300", "--replicates", "2",
                         "--oracle-draws", "5000", "--methods", "weighted,steam",
                         "--seed", "1", "--out", str(out)]) == 0
        tables.append((out / "table.csv").read_bytes())
    assert tables[0] == tables[1]
