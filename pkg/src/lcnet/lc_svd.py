"""Classic Lee-Carter fit: age profile plus rank-1 factorization.

The age profile is the per-age mean of the log-rates over the fitting years
(equivalently the log of the geometric mean of the rates); the age/period
interaction comes from the leading singular triple of the centered log-rate
matrix. Identifiability is restored by an affine renormalization that leaves
every fitted value unchanged.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .errors import DataError


@dataclass(frozen=True)
class LcParameters:
    """One population's Lee-Carter parameter triple.

    ``a`` and ``b`` are indexed by age, ``k`` by fitting year. When
    ``normalized`` is true, sum(b) == 1 and sum(k) == 0 (up to float error)
    and the triple is the canonical representative of its equivalence class.
    ``population``/``ages``/``years`` are optional labels carried along for
    serialization and forecasting.
    """

    a: np.ndarray
    b: np.ndarray
    k: np.ndarray
    normalized: bool = False
    population: object = None
    ages: np.ndarray | None = None
    years: np.ndarray | None = None

    def fitted(self):
        """Fitted log-rate matrix a_x + b_x * k_t, shape (ages, years)."""
        return self.a[:, None] + np.outer(self.b, self.k)


def normalize_constraints(params):
    """Rescale (a, b, k) so that sum(b) = 1 and mean(k) = 0.

    With s = sum(b) and c = mean(k): a' = a + b*c, b' = b/s, k' = (k - c)*s.
    The fitted values a'_x + b'_x k'_t equal a_x + b_x k_t exactly. A
    negative b-sum flips the sign of both b and k, so the normalized b
    always sums to +1.
    """
    s = float(np.sum(params.b))
    if s == 0.0:
        raise DataError("b sums to zero: scaling is unidentifiable")
    c = float(np.mean(params.k))
    b = params.b / s
    if not np.all(np.isfinite(b)):
        raise DataError(f"b sum {s:.3e} too small to normalize")
    return replace(
        params,
        a=params.a + params.b * c,
        b=b,
        k=(params.k - c) * s,
        normalized=True,
    )


def fit_lc_svd(surface, train_years=None, tol=linalg.DEFAULT_TOL,
               max_iter=linalg.DEFAULT_MAX_ITER):
    """Fit the classic model to one population's log-rate surface.

    ``surface`` needs ``log_rates`` (ages x years), ``years`` and ``ages``
    attributes; ``train_years`` restricts the fit to those calendar years
    (default: all). Returns normalized LcParameters whose reconstruction
    minimizes the squared error among rank-1 fits.
    """
    years = np.asarray(surface.years)
    if train_years is not None:
        wanted = set(int(y) for y in train_years)
        cols = np.array([y in wanted for y in years])
        if not np.any(cols):
            raise DataError("no training years present in surface")
        years = years[cols]
        log_rates = surface.log_rates[:, cols]
    else:
        log_rates = surface.log_rates

    n_ages, n_years = log_rates.shape
    if n_years < 2 or n_ages < 2:
        raise DataError(
            f"need at least a 2x2 training matrix, got {n_ages}x{n_years}"
        )
    if not np.all(np.isfinite(log_rates)):
        raise DataError("log-rates contain non-finite values (impute first)")

    a = log_rates.mean(axis=1)
    centered = log_rates - a[:, None]
    if not np.any(centered):
        # Constant-in-time surface: the period effect vanishes; any b works,
        # so pick the uniform one already satisfying the constraints.
        return LcParameters(
            a=a,
            b=np.full(n_ages, 1.0 / n_ages),
            k=np.zeros(n_years),
            normalized=True,
            population=getattr(surface, "population", None),
            ages=np.asarray(surface.ages),
            years=years,
        )

    factors = linalg.rank1_svd(centered, tol=tol, max_iter=max_iter)
    raw = LcParameters(
        a=a,
        b=factors.u.copy(),
        k=factors.sigma * factors.v,
        normalized=False,
        population=getattr(surface, "population", None),
        ages=np.asarray(surface.ages),
        years=years,
    )
    return normalize_constraints(raw)
