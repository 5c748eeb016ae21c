import numpy as np
import pytest
from numpy.testing import assert_allclose

from netlasso.data import standardize
from netlasso.screening import (
    ScreenPlan,
    kkt_satisfied,
    prescreen_scores,
    swindle_fit,
)
from netlasso.solver import CoefficientState, Inter, Main, SolverConfig, fit, term_key
from netlasso.weights import from_pairs
from tests.conftest import make_dataset


def test_screen_plan_defaults_and_validation():
    plan = ScreenPlan(s=7)
    assert plan.k == 70
    assert ScreenPlan(s=3, k=12).k == 12
    with pytest.raises(ValueError):
        ScreenPlan(s=0)
    with pytest.raises(ValueError):
        ScreenPlan(s=2, multiplier=1)


def test_prescreen_scores_match_direct_correlations(small_sd):
    scores, order = prescreen_scores(small_sd)
    direct = np.abs(small_sd.x.T @ small_sd.y)
    assert_allclose(scores, direct, rtol=1e-12)
    assert list(scores[order]) == sorted(scores, reverse=True)


def test_prescreen_order_breaks_ties_by_index():
    ds = make_dataset(n=40, p=3, seed=8)
    sd = standardize(ds)
    # duplicate column 0 into column 2: identical scores, index order wins
    x = sd.x.copy()
    x[:, 2] = x[:, 0]
    sd2 = type(sd)(x=np.asfortranarray(x), y=sd.y, x_mean=sd.x_mean,
                   x_norm=sd.x_norm, y_mean=sd.y_mean, y_norm=sd.y_norm,
                   snp_ids=sd.snp_ids)
    _, order = prescreen_scores(sd2)
    assert list(order).index(0) < list(order).index(2)


def _random_instance(seed, n=100, p=30):
    rng = np.random.default_rng(seed)
    beta = {int(j): float(b) for j, b in
            zip(rng.choice(p, size=3, replace=False),
                rng.uniform(0.4, 0.9, size=3))}
    pair_pool = [(j, k) for j in range(p) for k in range(j + 1, p)]
    chosen = [pair_pool[i] for i in rng.choice(len(pair_pool), size=12,
                                               replace=False)]
    pair_beta = {chosen[0]: 0.5}
    ds = make_dataset(n=n, p=p, seed=seed + 1000, beta=beta,
                      pair_beta=pair_beta)
    return standardize(ds), from_pairs(chosen, p)


def test_swindle_equals_full_fit_with_small_working_set():
    for seed in (0, 1, 2):
        sd, w = _random_instance(seed)
        cfg = SolverConfig(lambda1=0.05, lambda2=0.02, tol=1e-8)
        full = fit(sd, w, cfg)
        sw = swindle_fit(sd, w, cfg, ScreenPlan(s=1, k=5))
        terms = set(full.coeffs) | set(sw.coeffs)
        for t in sorted(terms, key=term_key):
            assert_allclose(sw.coeffs.value(t), full.coeffs.value(t),
                            atol=1e-8)


def test_swindle_with_k_at_p_is_plain_fit(small_sd, small_w):
    cfg = SolverConfig(lambda1=0.05, lambda2=0.02)
    full = fit(small_sd, small_w, cfg)
    sw = swindle_fit(small_sd, small_w, cfg, ScreenPlan(s=2, k=6))
    for t in set(full.coeffs) | set(sw.coeffs):
        assert sw.coeffs.value(t) == full.coeffs.value(t)


def test_kkt_accepts_converged_fit(small_sd, small_w):
    cfg = SolverConfig(lambda1=0.05, lambda2=0.02, tol=1e-8)
    sol = fit(small_sd, small_w, cfg)
    report = kkt_satisfied(small_sd, small_w, cfg, sol.coeffs, slack=1e-6)
    assert report.ok
    assert report.violations == []


def test_kkt_flags_perturbed_solutions(small_sd, small_w):
    cfg = SolverConfig(lambda1=0.05, lambda2=0.02, tol=1e-8)
    sol = fit(small_sd, small_w, cfg)

    bumped = CoefficientState(sol.coeffs)
    nz = [t for t, v in bumped.items() if isinstance(t, Main) and v != 0.0][0]
    bumped[nz] = bumped[nz] + 0.05
    report = kkt_satisfied(small_sd, small_w, cfg, bumped, slack=1e-6)
    assert not report.ok
    assert nz in report.violations

    # all-zero coefficients violate the entry bounds at this penalty level
    report0 = kkt_satisfied(small_sd, small_w, cfg, CoefficientState(),
                            slack=1e-6)
    assert not report0.ok
    assert len(report0.violations) >= 1


def test_kkt_zero_main_with_active_group_not_flagged():
    # a strong pair drags its zero main along: entry threshold is zero,
    # so the scan must treat the main as updatable rather than violating
    ds = make_dataset(n=300, p=4, seed=33, pair_beta={(0, 1): 1.0},
                      noise=0.25)
    sd = standardize(ds)
    w = from_pairs([(0, 1), (2, 3)], 4)
    cfg = SolverConfig(lambda1=0.3, lambda2=0.05, tol=1e-8)
    sol = fit(sd, w, cfg)
    assert sol.coeffs.value(Inter(0, 1)) != 0.0
    report = kkt_satisfied(sd, w, cfg, sol.coeffs, slack=1e-6)
    assert report.ok
