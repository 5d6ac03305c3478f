"""Poisson maximum-likelihood Lee-Carter fit.

Deaths are modelled as D ~ Poisson(E * exp(a + b k)); the log-likelihood
kernel sum(D*(a+bk) - E*exp(a+bk)) is maximized by cyclic univariate Newton
updates over the three parameter families (the Goodman schedule), with the
Poisson deviance driving convergence and a step-halving guard for the rare
non-concave sweep.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .lc_svd import LcParameters, fit_lc_svd, normalize_constraints

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 1000
MAX_HALVINGS = 30


@dataclass
class PoissonFitState:
    """Iteration snapshot: current parameters and convergence bookkeeping."""

    params: LcParameters
    deviance: float
    iteration: int
    converged: bool
    deviance_trace: list


class _LogRateView:
    """Minimal surface adapter for seeding the fit from an SVD solution."""

    def __init__(self, log_rates, years, ages):
        self.log_rates = log_rates
        self.years = years
        self.ages = ages
        self.population = None


def _expected_deaths(deaths, exposures, a, b, k):
    eta = a[:, None] + np.outer(b, k)
    with np.errstate(over="ignore"):
        dhat = exposures * np.exp(eta)
    if not np.all(np.isfinite(dhat)):
        x, t = np.argwhere(~np.isfinite(dhat))[0]
        raise DataError(
            f"overflow in exp at cell (age index {x}, year index {t}): "
            f"linear predictor {eta[x, t]:.3f}"
        )
    return dhat


def poisson_deviance(deaths, exposures, params):
    """Poisson deviance 2*sum(D*log(D/Dhat) - (D - Dhat)).

    Cells with D = 0 contribute 2*Dhat. Used for convergence because,
    unlike the likelihood kernel, it is zero at the saturated fit and its
    scale is data-meaningful.
    """
    deaths = np.asarray(deaths, dtype=float)
    exposures = np.asarray(exposures, dtype=float)
    dhat = _expected_deaths(deaths, exposures, params.a, params.b, params.k)
    pos = deaths > 0
    if np.any(dhat[pos] <= 0):
        raise DataError("fitted death counts must be positive where deaths occur")
    terms = dhat.copy()  # D = 0 cells contribute Dhat
    terms[pos] = (
        deaths[pos] * np.log(deaths[pos] / dhat[pos]) - (deaths[pos] - dhat[pos])
    )
    return float(2.0 * np.sum(terms))


def poisson_log_likelihood(deaths, exposures, params):
    """Log-likelihood kernel sum(D*eta - E*exp(eta)), additive constant dropped."""
    deaths = np.asarray(deaths, dtype=float)
    exposures = np.asarray(exposures, dtype=float)
    eta = params.a[:, None] + np.outer(params.b, params.k)
    dhat = _expected_deaths(deaths, exposures, params.a, params.b, params.k)
    return float(np.sum(deaths * eta - dhat))


def poisson_score(deaths, exposures, params):
    """Score (gradient of the log-likelihood kernel) as (da, db, dk)."""
    deaths = np.asarray(deaths, dtype=float)
    exposures = np.asarray(exposures, dtype=float)
    dhat = _expected_deaths(deaths, exposures, params.a, params.b, params.k)
    resid = deaths - dhat
    return (
        resid.sum(axis=1),
        resid @ params.k,
        params.b @ resid,
    )


def _newton_sweep(deaths, exposures, a, b, k, step, warn):
    """One damped cyclic sweep a -> k -> b, refreshing Dhat between families."""
    dhat = _expected_deaths(deaths, exposures, a, b, k)
    a = a + step * (deaths - dhat).sum(axis=1) / dhat.sum(axis=1)

    dhat = _expected_deaths(deaths, exposures, a, b, k)
    num = b @ (deaths - dhat)
    den = (b ** 2) @ dhat
    live = den > 0
    if not np.all(live) and warn:
        warnings.warn("zero curvature for some k coordinates; skipped this sweep")
    k = np.where(live, k + step * np.divide(num, den, out=np.zeros_like(num),
                                            where=live), k)

    dhat = _expected_deaths(deaths, exposures, a, b, k)
    num = (deaths - dhat) @ k
    den = dhat @ (k ** 2)
    live = den > 0
    if not np.all(live) and warn:
        warnings.warn("zero curvature for some b coordinates; skipped this sweep")
    b = np.where(live, b + step * np.divide(num, den, out=np.zeros_like(num),
                                            where=live), b)
    return a, b, k


def fit_lc_poisson_state(deaths, exposures, init=None, tol=DEFAULT_TOL,
                         max_iter=DEFAULT_MAX_ITER):
    """Run the cyclic Newton fit and return the full PoissonFitState.

    The final parameters are normalized; the deviance trace is non-increasing
    across accepted sweeps.
    """
    deaths = np.asarray(deaths, dtype=float)
    exposures = np.asarray(exposures, dtype=float)
    if deaths.shape != exposures.shape:
        raise ValueError(
            f"deaths shape {deaths.shape} != exposures shape {exposures.shape}"
        )
    if deaths.ndim != 2 or min(deaths.shape) < 2:
        raise DataError(f"need at least a 2x2 count matrix, got {deaths.shape}")
    if np.any(exposures <= 0):
        raise DataError("exposures must be strictly positive everywhere")
    if np.any(deaths < 0):
        raise DataError("deaths must be nonnegative")

    n_ages, n_years = deaths.shape
    if init is None:
        crude = np.log((deaths + 0.5) / exposures)
        init = fit_lc_svd(
            _LogRateView(crude, np.arange(n_years), np.arange(n_ages))
        )
    a, b, k = init.a.copy(), init.b.copy(), init.k.copy()

    deviance = poisson_deviance(
        deaths, exposures, LcParameters(a=a, b=b, k=k)
    )
    trace = [deviance]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            a2, b2, k2 = _newton_sweep(
                deaths, exposures, a, b, k, step, warn=(step == 1.0)
            )
            new_dev = poisson_deviance(
                deaths, exposures, LcParameters(a=a2, b=b2, k=k2)
            )
            if new_dev <= deviance:
                break
            step *= 0.5
        else:
            # No acceptable step found: stay put; nothing more to gain.
            trace.append(deviance)
            converged = True
            break
        a, b, k = a2, b2, k2
        improvement = deviance - new_dev
        deviance = new_dev
        trace.append(deviance)
        if improvement < tol:
            converged = True
            break

    params = normalize_constraints(
        LcParameters(
            a=a, b=b, k=k,
            population=getattr(init, "population", None),
            ages=init.ages, years=init.years,
        )
    )
    return PoissonFitState(
        params=params,
        deviance=deviance,
        iteration=sweeps,
        converged=converged,
        deviance_trace=trace,
    )


def fit_lc_poisson(deaths, exposures, init=None, tol=DEFAULT_TOL,
                   max_iter=DEFAULT_MAX_ITER):
    """Poisson MLE of the Lee-Carter parameters; returns normalized LcParameters."""
    return fit_lc_poisson_state(
        deaths, exposures, init=init, tol=tol, max_iter=max_iter
    ).params
