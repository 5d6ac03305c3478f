"""Multi-population Lee-Carter mortality modelling.

Fits the classic SVD and Poisson maximum-likelihood variants per
population, plus a joint neural-network calibration that shares
information across populations, then forecasts with a random walk with
drift and scores out-of-sample accuracy.
"""

__version__ = "0.1.0"
