import numpy as np
import pytest
from scipy.special import expit

from steam_eval import glm
from steam_eval.glm import Coefficients, SeparationError
from steam_eval.sim import MU_BASIS, SimScenario, draw_covariates, true_mu, true_pi


def newton_oracle(X, y, w=None, iters=50):
    """Plain Newton-Raphson on the weighted log-likelihood."""
    w = np.ones(len(y)) if w is None else w
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        p = expit(X @ b)
        g = X.T @ (w * (y - p))
        H = (X * (w * p * (1 - p))[:, None]).T @ X
        b = b + np.linalg.solve(H, g)
    return b, H


def logistic_sample(n, beta, seed, p_extra=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, len(beta) - 1 + p_extra))
    X = np.column_stack([np.ones(n), x])
    b = np.concatenate([beta, np.zeros(p_extra)])
    y = (rng.random(n) < expit(X @ b)).astype(float)
    return X, y


def test_constant_response_is_separation():
    X = np.ones((30, 1))
    with pytest.raises(SeparationError):
        glm.fit_logistic(X, np.ones(30))


def test_symmetric_data_gives_zero_intercept():
    # mirrored design: (x, y) and (-x, 1 - y) appear together
    rng = np.random.default_rng(4)
    x = np.abs(rng.standard_normal(200))
    y = (rng.random(200) < expit(1.5 * x)).astype(float)
    xs = np.concatenate([x, -x])
    xs = (xs - xs.mean()) / xs.std()
    X = np.column_stack([np.ones(400), xs])
    fit = glm.fit_logistic(X, np.concatenate([y, 1 - y]))
    assert fit.values[1] > 0
    assert abs(fit.values[0]) < 1e-6


def test_matches_independent_newton_and_truth():
    X, y = logistic_sample(500, np.array([-0.25, 0.8]), seed=11)
    fit = glm.fit_logistic(X, y)
    b, H = newton_oracle(X, y)
    np.testing.assert_allclose(fit.values, b, atol=1e-8)
    se = np.sqrt(np.diag(np.linalg.inv(H)))
    assert np.all(np.abs(fit.values - [-0.25, 0.8]) < 3 * se)


def test_weighted_fit_matches_weighted_newton():
    X, y = logistic_sample(300, np.array([0.3, -0.6, 0.4]), seed=2)
    w = np.random.default_rng(0).uniform(0.2, 3.0, 300)
    b, _ = newton_oracle(X, y, w)
    np.testing.assert_allclose(glm.fit_logistic(X, y, w).values, b, atol=1e-8)


def test_score_vanishes_at_optimum_and_matches_finite_differences():
    X, y = logistic_sample(300, np.array([0.2, 0.7, -0.4]), seed=5)
    fit = glm.fit_logistic(X, y)
    assert np.max(np.abs(glm.score(fit, X, y))) < 1e-6
    b = fit.values + np.array([0.1, -0.2, 0.05])
    n = len(y)
    ana = glm.score(b, X, y)
    eps = 1e-6
    fd = np.array([(glm.mean_loglik(b + eps * e, X, y) - glm.mean_loglik(b - eps * e, X, y))
                   * n / (2 * eps) for e in np.eye(3)])
    np.testing.assert_allclose(ana, fd, rtol=1e-4)


def test_zero_penalty_equals_unpenalized_fit():
    X, y = logistic_sample(400, np.array([-0.2, 0.8, 0.4, 0.0]), seed=7)
    lasso = glm.fit_adaptive_lasso(X, y, lambda_grid=[0.0])
    np.testing.assert_allclose(lasso.values, glm.fit_logistic(X, y).values, atol=1e-6)


def test_huge_penalty_zeroes_everything_but_the_intercept():
    X, y = logistic_sample(400, np.array([-0.2, 0.8, 0.4, 0.0]), seed=7)
    fit = glm.fit_adaptive_lasso(X, y, lambda_grid=[1e3])
    assert np.all(fit.values[1:] == 0.0)
    assert fit.support.size == 0
    assert fit.values[0] == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=1e-6)


def test_lambda_max_is_the_zeroing_threshold():
    X, y = logistic_sample(400, np.array([-0.2, 0.8, 0.4]), seed=9)
    init = glm.fit_initial(X, y)
    pen, _ = glm.adaptive_penalty(init, 1.0)
    lm = glm.lambda_max(X, y, None, pen)
    above = glm.fit_lasso_path(X, y, lambda_grid=[lm * 1.001], initial=init)[0]
    below = glm.fit_lasso_path(X, y, lambda_grid=[lm * 0.95], initial=init)[0]
    assert above.support.size == 0
    assert below.support.size > 0


def test_grid_default_shape():
    g = glm.make_lambda_grid(2.0)
    assert g.size == 50 and g[0] == 2.0
    assert g[-1] == pytest.approx(2e-4)
    assert np.all(np.diff(g) < 0)


def test_unsorted_grid_is_rejected():
    X, y = logistic_sample(100, np.array([0.0, 1.0]), seed=1)
    with pytest.raises(ValueError, match="descending"):
        glm.fit_adaptive_lasso(X, y, lambda_grid=[0.01, 0.1])


def test_bic_singleton_and_sparser_tie_break():
    X, y = logistic_sample(200, np.array([0.1, 0.9]), seed=3)
    X = np.column_stack([X, np.zeros((200, 2))])
    base = glm.fit_logistic(X, y).values
    sparse = Coefficients(base, lam=0.2)
    dense = Coefficients(base + np.array([0, 0, 1.0, -2.0]), lam=0.1)
    assert glm.select_lambda_bic([dense], X, y) is dense
    # equal likelihood, df 2 vs 4: the penalty decides in either order
    assert glm.mean_loglik(sparse, X, y) == glm.mean_loglik(dense, X, y)
    assert glm.select_lambda_bic([dense, sparse], X, y) is sparse
    assert glm.select_lambda_bic([sparse, dense], X, y) is sparse
    twin = Coefficients(base, lam=0.05)
    assert glm.select_lambda_bic([sparse, twin], X, y) is sparse


def test_bic_formula():
    X, y = logistic_sample(150, np.array([0.1, 0.9, 0.3]), seed=8)
    fit = glm.fit_logistic(X, y)
    p = expit(X @ fit.values)
    ll = np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert glm.bic(fit, X, y) == pytest.approx(-2 * ll + 3 * np.log(150), rel=1e-12)


def test_objective_is_monotone_across_sweeps():
    X, y = logistic_sample(300, np.array([-0.3, 0.9, 0.5, 0.0, 0.0]), seed=12)
    for coef in glm.fit_lasso_path(X, y, n_lambda=20):
        tr = np.array(coef.trace)
        assert np.all(np.diff(tr) >= -1e-12 * np.abs(tr[:-1]).max())


@pytest.mark.parametrize("c", [0.37, 7.3])
def test_constant_weights_leave_the_fit_unchanged(c):
    X, y = logistic_sample(300, np.array([-0.3, 0.9, 0.5, 0.0]), seed=13)
    a = glm.fit_adaptive_lasso(X, y)
    b = glm.fit_adaptive_lasso(X, y, np.full(300, c))
    np.testing.assert_allclose(a.values, b.values, atol=1e-8)
    assert a.lam == pytest.approx(b.lam, rel=1e-12)


def test_zero_initial_coefficient_is_capped_and_flagged():
    init = Coefficients(np.array([0.1, 0.0, 0.5]))
    pen, capped = glm.adaptive_penalty(init, 1.0)
    assert capped and pen[1] == glm.PENALTY_CAP and pen[0] == 0.0
    assert pen[2] == pytest.approx(2.0)


def test_separated_data_fall_back_to_ridge():
    x = np.linspace(-2, 2, 40)
    X = np.column_stack([np.ones(40), x])
    y = (x > 0).astype(float)
    with pytest.raises(SeparationError):
        glm.fit_logistic(X, y)
    init = glm.fit_initial(X, y)
    assert init.ridge_fallback and init.values[1] > 0


def test_refit_with_unit_weights_reproduces_the_fit():
    X, y = logistic_sample(250, np.array([-0.3, 0.9, 0.5, 0.0]), seed=14)
    fit = glm.fit_adaptive_lasso(X, y)
    again = glm.refit_at_lambda(X, y, np.ones(250), fit.gamma, fit.lam, start=fit.values)
    np.testing.assert_allclose(again.values, fit.values, atol=1e-8)


def _source_sample(n, rng):
    sc = SimScenario()
    xs = []
    while sum(len(x) for x in xs) < n:
        x = draw_covariates(4 * n, sc, rng)
        xs.append(x[rng.random(len(x)) < true_pi(x, sc.shift)])
    x = np.vstack(xs)[:n]
    y = (rng.random(n) < true_mu(x)).astype(float)
    return MU_BASIS.apply(np.column_stack([np.ones(n), x])), y


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="BIC keeps X1..X4 jointly in about 71% of replicates "
                   "(X3 92%, X4 84% separately); the zero-coefficient rate (about 82%) "
                   "does meet its 80% bar")
def test_oracle_selection_rates_at_n400():
    rng = np.random.default_rng(2024)
    zero_ok = support_ok = 0
    reps = 200
    for _ in range(reps):
        Z, y = _source_sample(400, rng)
        fit = glm.fit_adaptive_lasso(Z, y)
        zero_ok += np.all(fit.values[5:11] == 0.0)
        support_ok += np.all(fit.values[1:5] != 0.0)
    print(f"X5..X10 all zero in {zero_ok}/{reps}; X1..X4 selected in {support_ok}/{reps}")
    assert zero_ok >= 0.8 * reps
    assert support_ok >= 0.9 * reps


def test_path_starts_at_exact_null_model():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(4000), rng.standard_normal((4000, 10))])
    y = np.tile([0.0, 1.0], 2000)
    first = glm.fit_lasso_path(X, y)[0]
    assert first.support.size == 0
    assert first.df == 1
