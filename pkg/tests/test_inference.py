import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steam_eval.inference import (BAND_FPR, PerturbationDraws, draw_perturbation_weights,
                                  perturb, perturb_approx, perturb_exact, perturbation_matrix,
                                  roc_band, summarize_draws)


def test_weight_moments():
    g = draw_perturbation_weights(10**6, np.random.default_rng(0))
    assert abs(g.mean() - 1) < 0.01
    assert abs(g.var() - 1) < 0.02
    assert g.min() >= 0 and g.max() <= 4
    with pytest.raises(ValueError):
        draw_perturbation_weights(0, np.random.default_rng(0))


@pytest.mark.parametrize("variant", ["exact", "approx"])
def test_unit_weights_reproduce_point_estimate(small_fit, variant):
    d = perturb(small_fit, variant, G=np.ones((2, small_fit.data.n)))
    np.testing.assert_allclose(d.draws, np.tile(d.point, (2, 1)), rtol=0, atol=1e-8)
    np.testing.assert_allclose(d.roc[0], d.point_roc, atol=1e-8)


def test_draws_are_reproducible_and_worker_independent(small_fit):
    a = perturb_approx(small_fit, B=12, seed=5)
    b = perturb_approx(small_fit, B=12, seed=5)
    c = perturb_approx(small_fit, B=12, seed=5, workers=2)
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.draws, c.draws)
    np.testing.assert_array_equal(a.roc, c.roc)
    assert a.successful + len(a.failed) == a.B == 12
    assert not np.array_equal(a.draws, perturb_approx(small_fit, B=12, seed=6).draws)


def test_variants_share_weights_and_stay_close(small_fit):
    G = perturbation_matrix(small_fit.data.n, 6, 9)
    ex = perturb_exact(small_fit, G=G)
    ap = perturb_approx(small_fit, G=G)
    assert ex.names == ap.names
    auc = ex.names.index("auc")
    # linearization error is second order in the perturbation
    assert np.max(np.abs(ex.draws[:, auc] - ap.draws[:, auc])) < 0.02


def test_unknown_variant(small_fit):
    with pytest.raises(ValueError):
        perturb(small_fit, "jackknife", B=2)


def test_summaries_of_plain_arrays():
    out = summarize_draws(np.full(200, 0.7))["value"]
    assert out.se == 0 and out.lower == out.upper == 0.7
    z = np.random.default_rng(0).standard_normal(10**5)
    iv = summarize_draws(z)["value"]
    assert iv.lower == pytest.approx(-1.96, abs=0.02) and iv.upper == pytest.approx(1.96, abs=0.02)
    assert iv.se == pytest.approx(1.0, abs=0.01)
    with pytest.raises(ValueError):
        summarize_draws(np.ones(99))
    with pytest.raises(ValueError):
        summarize_draws(z, level=1.0)


@given(st.integers(0, 2**32 - 1))
def test_summary_ignores_draw_order(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(150)
    a = summarize_draws(x)["value"]
    b = summarize_draws(rng.permutation(x))["value"]
    assert a.lower == b.lower and a.upper == b.upper
    assert a.se == pytest.approx(b.se, rel=1e-12)


def _fake_draws(B=200):
    rng = np.random.default_rng(1)
    draws = rng.normal(0.8, 0.03, (B, 2))
    roc = np.clip(np.sqrt(BAND_FPR)[None, :] + rng.normal(0, 0.02, (B, BAND_FPR.size)), 0, 1)
    return PerturbationDraws(B, ("auc", "cutoff@0.05"), draws, roc, np.array([0.8, 0.9]), 1,
                             "approx", point_roc=np.sqrt(BAND_FPR))


def test_recentring_shifts_interval_by_estimate_gap():
    d = _fake_draws()
    plain = summarize_draws(d)
    moved = summarize_draws(d, center={"auc": 0.77, "cutoff@0.05": 0.9})
    assert moved["auc"].lower == pytest.approx(plain["auc"].lower - 0.03, abs=1e-15)
    assert moved["auc"].se == plain["auc"].se
    assert moved["cutoff@0.05"] == plain["cutoff@0.05"]
    with pytest.raises(ValueError):
        summarize_draws(d.draws[:, 0], center={"value": 0.0})


def test_roc_band_bounds():
    d = _fake_draws()
    u, lo, hi = roc_band(d)
    assert np.all(lo <= hi) and np.all(lo >= 0) and np.all(hi <= 1)
    _, lo2, hi2 = roc_band(d, center=np.clip(np.sqrt(BAND_FPR) + 0.5, 0, 1))
    assert np.all(hi2 <= 1) and np.all(lo2 >= lo)
    np.testing.assert_array_equal(u, BAND_FPR)


def test_too_many_failures_raise(small_fit, monkeypatch):
    from steam_eval import glm

    def broken(*a, **k):
        raise glm.SeparationError("forced")

    monkeypatch.setattr(glm, "refit_at_lambda", broken)
    with pytest.raises(RuntimeError, match="forced"):
        perturb_approx(small_fit, B=20)
