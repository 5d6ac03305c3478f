"""Random-walk-with-drift projection of the period index.

The period index follows k_t = k_{t-1} + drift + e_t with iid normal
innovations. The drift MLE is (k_T - k_1)/(n - 1); the innovation standard
deviation is the sample standard deviation of the first differences around
the drift (denominator n - 2, defined as 0 for n = 2). Age profiles are
held fixed, so log-rate fans follow from the k fan monotonically per age.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError

DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class RwdModel:
    """Fitted random walk with drift."""

    drift: float
    sigma: float
    last_k: float
    n_obs: int


@dataclass(frozen=True)
class ForecastFan:
    """Point and interval forecasts for k and (optionally) log-rates.

    ``k_point``/``k_lower``/``k_upper`` cover horizons 1..h. After
    ``forecast_rates`` the per-age log-rate matrices (ages x horizon) and
    the forecast year labels are filled in. ``alpha`` is the two-sided
    significance level (so 0.05 gives central 95% intervals).
    """

    horizon: int
    alpha: float
    k_point: np.ndarray
    k_lower: np.ndarray
    k_upper: np.ndarray
    drift_uncertainty: bool = False
    years: np.ndarray | None = None
    log_point: np.ndarray | None = None
    log_lower: np.ndarray | None = None
    log_upper: np.ndarray | None = None


# Wichura's AS 241 rational approximations (PPND16 constant set).
_A = (
    3.3871328727963666080, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
    5.3941960214247511077e3, 2.1213794301586595867e4, 3.9307895800092710610e4,
    2.8729085735721942674e4, 5.2264952788528545610e3,
)
_C = (
    1.42343711074968357734, 4.63033784615654529590, 5.76949722146069140550,
    3.64784832476320460504, 1.27045825245236838258, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_D = (
    1.0, 2.05319162663775882187, 1.67638483018380384940,
    6.89767334985100004550e-1, 1.48103976427480074590e-1,
    1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.65790464350110377720, 5.46378491116411436990, 1.78482653991729133580,
    2.96560571828504891230e-1, 2.65321895265761230930e-2,
    1.24266094738807843860e-3, 2.71155556874348757815e-5,
    2.01033439929228813265e-7,
)
_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
    1.48753612908506148525e-2, 7.86869131145613259100e-4,
    1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly(coeffs, x):
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def normal_quantile(p):
    """Standard normal inverse CDF, rational approximation (AS 241)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r -= 1.6
        value = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        value = _poly(_E, r) / _poly(_F, r)
    return -value if q < 0 else value


def fit_rwd(k):
    """Fit the random walk with drift to an observed k series."""
    k = np.asarray(k, dtype=float)
    if k.ndim != 1 or k.size < 2:
        raise DataError(f"need at least 2 observations to fit a drift, got {k.size}")
    n = k.size
    drift = (k[-1] - k[0]) / (n - 1)
    if n == 2:
        sigma = 0.0
    else:
        resid = np.diff(k) - drift
        sigma = float(np.sqrt(np.sum(resid**2) / (n - 2)))
    return RwdModel(drift=float(drift), sigma=sigma, last_k=float(k[-1]), n_obs=n)


def project_k(model, horizon, alpha=DEFAULT_ALPHA, drift_uncertainty=False):
    """Project k forward ``horizon`` steps with central (1 - alpha) bounds.

    The forecast variance at step s is s * sigma^2 (innovations only) or
    s * sigma^2 + s^2 * sigma^2 / (n - 1) when the estimated-drift
    uncertainty is included.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    steps = np.arange(1, horizon + 1, dtype=float)
    point = model.last_k + steps * model.drift
    variance = steps * model.sigma**2
    if drift_uncertainty:
        variance = variance + steps**2 * model.sigma**2 / (model.n_obs - 1)
    half = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(variance)
    return ForecastFan(
        horizon=int(horizon),
        alpha=float(alpha),
        k_point=point,
        k_lower=point - half,
        k_upper=point + half,
        drift_uncertainty=bool(drift_uncertainty),
    )


def simulate_rwd_path(rng, start, drift, sigma, n_steps):
    """One simulated k path of length n_steps + 1 including the start value."""
    innovations = rng.normal(drift, sigma, size=n_steps)
    return np.concatenate([[start], start + np.cumsum(innovations)])


def forecast_rates(params, fan, test_years=None):
    """Map a k fan through a_x + b_x k to per-age log-rate forecasts.

    ``params`` must be normalized. Where b_x < 0 the k bounds swap so the
    log-rate intervals stay elementwise ordered. When ``test_years`` is
    given, ``params.years`` must be present and every test year must fall
    within the fan's horizon after the last fitting year.
    """
    if not params.normalized:
        raise DataError("forecast_rates needs normalized parameters")
    if test_years is None:
        steps = np.arange(1, fan.horizon + 1)
        years = (
            np.max(params.years) + steps if params.years is not None else None
        )
    else:
        if params.years is None:
            raise DataError("parameters carry no year labels")
        last = int(np.max(params.years))
        years = np.asarray([int(y) for y in test_years])
        steps = years - last
        if np.any(steps < 1) or np.any(steps > fan.horizon):
            raise DataError(
                f"test years {years.min()}..{years.max()} outside the fan "
                f"horizon 1..{fan.horizon} after {last}"
            )
    idx = steps - 1
    a = params.a[:, None]
    b = params.b[:, None]
    log_point = a + b * fan.k_point[idx][None, :]
    low_k, high_k = fan.k_lower[idx][None, :], fan.k_upper[idx][None, :]
    log_lower = a + np.where(b >= 0, b * low_k, b * high_k)
    log_upper = a + np.where(b >= 0, b * high_k, b * low_k)
    return replace(
        fan,
        years=years,
        log_point=log_point,
        log_lower=log_lower,
        log_upper=log_upper,
    )
