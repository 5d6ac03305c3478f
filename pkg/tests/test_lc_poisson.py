"""Poisson MLE: monotone deviance, recovery, finite-difference score oracle."""

import numpy as np
import pytest

from lcnet.errors import DataError
from lcnet.lc_poisson import (
    fit_lc_poisson,
    fit_lc_poisson_state,
    poisson_deviance,
    poisson_log_likelihood,
    poisson_score,
)
from lcnet.lc_svd import LcParameters, normalize_constraints


def make_instance(rng, n_ages=6, n_years=5, exposure=1e5):
    a = -4.0 + 0.1 * np.arange(n_ages) + 0.05 * rng.standard_normal(n_ages)
    b = rng.random(n_ages) + 0.2
    b /= b.sum()
    k = rng.standard_normal(n_years) * 2.0
    k -= k.mean()
    exposures = np.full((n_ages, n_years), exposure)
    lam = exposures * np.exp(a[:, None] + np.outer(b, k))
    return a, b, k, exposures, lam


def deviance_direct(deaths, dhat):
    """Independent cell-by-cell deviance summation."""
    total = 0.0
    for d, f in zip(deaths.ravel(), dhat.ravel()):
        if d > 0:
            total += 2.0 * (d * np.log(d / f) - (d - f))
        else:
            total += 2.0 * f
    return total


def fd_score(deaths, exposures, params, h=1e-6):
    """Central finite differences of the log-likelihood kernel."""
    grads = []
    for attr in ("a", "b", "k"):
        vec = getattr(params, attr)
        g = np.zeros_like(vec)
        for i in range(vec.size):
            for sign in (+1, -1):
                bumped = vec.copy()
                bumped[i] += sign * h
                p = LcParameters(
                    a=bumped if attr == "a" else params.a,
                    b=bumped if attr == "b" else params.b,
                    k=bumped if attr == "k" else params.k,
                )
                g[i] += sign * poisson_log_likelihood(deaths, exposures, p)
        grads.append(g / (2 * h))
    return grads


def test_exact_recovery_from_expected_counts():
    rng = np.random.default_rng(31)
    a, b, k, exposures, lam = make_instance(rng)
    p = fit_lc_poisson(lam, exposures, tol=1e-12, max_iter=5000)
    np.testing.assert_allclose(p.a, a, atol=1e-6)
    np.testing.assert_allclose(p.b, b, atol=1e-6)
    np.testing.assert_allclose(p.k, k, atol=1e-6)


def test_zero_k_generator():
    rng = np.random.default_rng(33)
    a = -3.0 + 0.1 * rng.standard_normal(8)
    exposures = np.full((8, 6), 1e4)
    deaths = exposures * np.exp(a)[:, None]
    p = fit_lc_poisson(deaths, exposures, tol=1e-12, max_iter=5000)
    np.testing.assert_allclose(p.k, 0.0, atol=1e-6)
    np.testing.assert_allclose(p.fitted(), np.log(deaths / exposures), atol=1e-6)


def test_score_near_zero_at_solution():
    rng = np.random.default_rng(35)
    for _ in range(5):
        n_ages, n_years = 5, 4
        exposures = np.full((n_ages, n_years), 1e4) * (
            0.5 + rng.random((n_ages, n_years))
        )
        a, b, k, _, _ = make_instance(rng, n_ages, n_years)
        lam = exposures * np.exp(a[:, None] + np.outer(b, k))
        deaths = rng.poisson(lam).astype(float)
        p = fit_lc_poisson(deaths, exposures, tol=1e-12, max_iter=5000)
        da, db, dk = poisson_score(deaths, exposures, p)
        bound = 1e-6 * deaths.sum()
        assert max(np.abs(da).max(), np.abs(db).max(), np.abs(dk).max()) <= bound


def test_score_matches_finite_differences():
    rng = np.random.default_rng(37)
    a, b, k, exposures, lam = make_instance(rng, 4, 3, exposure=1e3)
    deaths = rng.poisson(lam).astype(float)
    params = LcParameters(a=a, b=b, k=k)
    da, db, dk = poisson_score(deaths, exposures, params)
    fa, fb, fk = fd_score(deaths, exposures, params)
    scale = max(1.0, deaths.sum())
    np.testing.assert_allclose(da, fa, atol=1e-4 * scale, rtol=1e-6)
    np.testing.assert_allclose(db, fb, atol=1e-4 * scale, rtol=1e-6)
    np.testing.assert_allclose(dk, fk, atol=1e-4 * scale, rtol=1e-6)


def test_deviance_saturated_is_zero():
    rng = np.random.default_rng(39)
    a, b, k, exposures, lam = make_instance(rng)
    p = LcParameters(a=a, b=b, k=k)
    assert poisson_deviance(lam, exposures, p) == pytest.approx(0.0, abs=1e-8)


def test_deviance_zero_death_cell_closed_form():
    # Single cell with D = 0, Dhat = 2 contributes exactly 2 * Dhat = 4.
    deaths = np.array([[0.0, 1.0], [1.0, 1.0]])
    exposures = np.ones((2, 2))
    p = LcParameters(
        a=np.array([np.log(2.0), 0.0]), b=np.array([1.0, 0.0]), k=np.zeros(2)
    )
    # Dhat = exp(a) per row: (2, 2; 1, 1).
    dev = poisson_deviance(deaths, exposures, p)
    expected = deviance_direct(deaths, np.array([[2.0, 2.0], [1.0, 1.0]]))
    assert dev == pytest.approx(expected, rel=1e-12)
    single = poisson_deviance(
        np.array([[0.0, 1.0], [1.0, 1.0]]) * [[1], [1]], exposures, p
    )
    assert single == pytest.approx(expected)


def test_deviance_matches_direct_summation():
    rng = np.random.default_rng(41)
    for _ in range(10):
        a, b, k, exposures, lam = make_instance(rng, 5, 4, exposure=500.0)
        deaths = rng.poisson(lam).astype(float)
        p = LcParameters(a=a + 0.05, b=b, k=k)
        dhat = exposures * np.exp(p.a[:, None] + np.outer(p.b, p.k))
        assert poisson_deviance(deaths, exposures, p) == pytest.approx(
            deviance_direct(deaths, dhat), rel=1e-12
        )


def test_deviance_monotone_over_sweeps():
    rng = np.random.default_rng(43)
    for _ in range(50):
        n_ages = int(rng.integers(3, 9))
        n_years = int(rng.integers(3, 8))
        a, b, k, exposures, lam = make_instance(
            rng, n_ages, n_years, exposure=float(rng.uniform(50, 1e5))
        )
        deaths = rng.poisson(lam).astype(float)
        state = fit_lc_poisson_state(deaths, exposures, max_iter=200)
        trace = np.asarray(state.deviance_trace)
        assert np.all(np.diff(trace) <= 1e-10)


def test_likelihood_not_below_svd_init():
    rng = np.random.default_rng(45)
    for _ in range(10):
        a, b, k, exposures, lam = make_instance(rng, 6, 5, exposure=2e3)
        deaths = rng.poisson(lam).astype(float)
        crude = np.log((deaths + 0.5) / exposures)

        class Surf:
            log_rates = crude
            years = np.arange(crude.shape[1])
            ages = np.arange(crude.shape[0])
            population = None

        from lcnet.lc_svd import fit_lc_svd

        init = fit_lc_svd(Surf())
        fitted = fit_lc_poisson(deaths, exposures)
        ll_init = poisson_log_likelihood(deaths, exposures, init)
        ll_fit = poisson_log_likelihood(deaths, exposures, fitted)
        assert ll_fit >= ll_init - 1e-9 * abs(ll_init)


def test_normalization_invariance_of_fitted_counts():
    rng = np.random.default_rng(47)
    a, b, k, exposures, lam = make_instance(rng)
    deaths = rng.poisson(lam).astype(float)
    state = fit_lc_poisson_state(deaths, exposures)
    raw = LcParameters(a=state.params.a, b=state.params.b, k=state.params.k)
    renorm = normalize_constraints(raw)
    d1 = exposures * np.exp(raw.fitted())
    d2 = exposures * np.exp(renorm.fitted())
    np.testing.assert_allclose(d1, d2, rtol=1e-10)


def test_exposure_scaling_shrinks_error():
    rng = np.random.default_rng(49)
    ratios = []
    for seed in range(20):
        local = np.random.default_rng(seed)
        a, b, k, _, _ = make_instance(local, 6, 5)
        errs = []
        for exposure in (1_000.0, 100_000.0):
            exposures = np.full((6, 5), exposure)
            lam = exposures * np.exp(a[:, None] + np.outer(b, k))
            deaths = local.poisson(lam).astype(float)
            p = fit_lc_poisson(deaths, exposures, tol=1e-10, max_iter=2000)
            errs.append(
                max(
                    np.abs(p.a - a).max(),
                    np.abs(p.b - b).max(),
                    np.abs(p.k - k).max(),
                )
            )
        ratios.append(errs[1] / errs[0])
    assert np.median(ratios) < 0.5


def test_zero_curvature_coordinates_skipped_with_warning():
    # Deaths constant in time: the fitted period effect is identically zero,
    # so the sensitivity family has no curvature and is skipped.
    deaths = np.full((4, 5), 20.0)
    exposures = np.full((4, 5), 1000.0)
    with pytest.warns(UserWarning, match="zero curvature"):
        p = fit_lc_poisson(deaths, exposures, max_iter=50)
    np.testing.assert_allclose(p.k, 0.0, atol=1e-8)
    np.testing.assert_allclose(
        p.fitted(), np.log(deaths / exposures), atol=1e-8
    )


def test_input_validation():
    with pytest.raises(DataError):
        fit_lc_poisson(np.ones((3, 3)), np.zeros((3, 3)))
    with pytest.raises(DataError):
        fit_lc_poisson(-np.ones((3, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        fit_lc_poisson(np.ones((3, 3)), np.ones((3, 4)))
    with pytest.raises(DataError):
        fit_lc_poisson(np.ones((1, 3)), np.ones((1, 3)))


def test_overflow_reported_with_cell():
    deaths = np.ones((2, 2))
    exposures = np.ones((2, 2))
    bad = LcParameters(
        a=np.array([1000.0, 0.0]), b=np.array([1.0, 0.0]), k=np.zeros(2)
    )
    with pytest.raises(DataError, match="overflow"):
        poisson_deviance(deaths, exposures, bad)
