"""Plain-array forward passes for every layer kind.

These kernels are shared by the recorded (differentiable) ops in
``autograd`` and are usable directly on single vectors, e.g. for parameter
extraction after training.
"""

import numpy as np

from .activations import activation
from .layerspec import output_positions


def _windows(x2d, m, s):
    """Strided receptive fields: (n, d) -> (n, positions, m).

    Position k reads the contiguous window [k*s, k*s + m).
    """
    p = output_positions(x2d.shape[1], m, s)
    view = np.lib.stride_tricks.sliding_window_view(x2d, m, axis=1)
    return view[:, :: s, :], p


def _dense_z(x2d, weights, bias):
    return x2d @ weights.T + bias


def _lcn_z(x2d, filters, biases, m, s):
    win, _ = _windows(x2d, m, s)
    return np.einsum("npm,pm->np", win, filters) + biases


def _conv_z(x2d, filt, bias, m, s):
    win, _ = _windows(x2d, m, s)
    return win @ filt + bias


def dense_forward(x, weights, bias, act="linear"):
    """Fully-connected layer: phi(bias_j + <weights_j, x>) per unit j."""
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if weights.shape[1] != x.shape[-1] or weights.shape[0] != bias.shape[0]:
        raise ValueError(
            f"shape mismatch: x {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    f, _ = activation(act)
    squeeze = x.ndim == 1
    z = _dense_z(np.atleast_2d(x), weights, bias)
    out = f(z)
    return out[0] if squeeze else out


def lcn1d_forward(x, filters, biases, m, s, act="linear"):
    """Locally-connected layer: one (kernel, bias) pair per receptive field.

    ``filters`` has shape (positions, m) and ``biases`` (positions,); output
    position k reads only the window [k*s, k*s + m) with its own weights.
    """
    x = np.asarray(x, dtype=float)
    filters = np.asarray(filters, dtype=float)
    biases = np.asarray(biases, dtype=float)
    p = output_positions(x.shape[-1], m, s)
    if filters.shape != (p, m) or biases.shape != (p,):
        raise ValueError(
            f"expected filters ({p}, {m}) and biases ({p},), "
            f"got {filters.shape} and {biases.shape}"
        )
    f, _ = activation(act)
    squeeze = x.ndim == 1
    z = _lcn_z(np.atleast_2d(x), filters, biases, m, s)
    out = f(z)
    return out[0] if squeeze else out


def conv1d_forward(x, filt, bias, m, s, act="linear"):
    """Convolutional layer: identical indexing to lcn1d with one shared filter."""
    x = np.asarray(x, dtype=float)
    filt = np.asarray(filt, dtype=float)
    bias = float(np.asarray(bias).reshape(()))
    output_positions(x.shape[-1], m, s)
    if filt.shape != (m,):
        raise ValueError(f"expected filter shape ({m},), got {filt.shape}")
    f, _ = activation(act)
    squeeze = x.ndim == 1
    z = _conv_z(np.atleast_2d(x), filt, bias, m, s)
    out = f(z)
    return out[0] if squeeze else out


def embedding_lookup(table, index):
    """Row ``index`` of the embedding table (a copy)."""
    table = np.asarray(table, dtype=float)
    index = int(index)
    if not 0 <= index < table.shape[0]:
        raise IndexError(
            f"embedding index {index} out of range [0, {table.shape[0]})"
        )
    return table[index].copy()


def dropout_forward(x, rate, mode, rng=None):
    """Inverted dropout: zero units with probability ``rate`` and rescale.

    In train mode each unit is zeroed independently with probability ``rate``
    and survivors are scaled by 1/(1 - rate), so the expectation is
    preserved and eval mode is the identity. Returns (output, mask).
    """
    x = np.asarray(x, dtype=float)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x.copy(), np.ones_like(x, dtype=bool)
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask
