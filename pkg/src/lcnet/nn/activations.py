"""Scalar activation functions and their derivatives (by pre-activation)."""

import numpy as np


def _linear(z):
    return z


def _dlinear(z):
    return np.ones_like(z)


def _tanh(z):
    return np.tanh(z)


def _dtanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z):
    return (z > 0.0).astype(float)


ACTIVATIONS = {
    "linear": (_linear, _dlinear),
    "tanh": (_tanh, _dtanh),
    "relu": (_relu, _drelu),
}


def activation(name):
    """Return the (function, derivative) pair for a named activation."""
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None
