"""Minimal reverse-mode differentiation over recorded array operations.

Each op builds a ``Var`` node holding its value, its parents, and a closure
that maps the output gradient to per-parent gradients. ``backward`` walks
the recorded graph once in reverse topological order. Gradients are only
materialized along paths that reach a parameter leaf.
"""

import numpy as np

from ..errors import DataError
from .activations import activation
from .ops import _conv_z, _dense_z, _lcn_z, _windows


class Var:
    """A node in a recorded computation."""

    __slots__ = ("value", "grad", "parents", "grad_fn", "needs_grad")

    def __init__(self, value, parents=(), grad_fn=None, needs_grad=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in self.parents)
        self.needs_grad = needs_grad

    @staticmethod
    def param(value):
        """Trainable leaf: gradients accumulate here."""
        return Var(value, needs_grad=True)

    @staticmethod
    def const(value):
        """Non-trainable leaf (inputs, targets)."""
        return Var(value, needs_grad=False)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad:
                stack.append((p, False))
    return order


def backward(root, seed=None):
    """Propagate gradients from ``root`` down to every parameter leaf.

    ``seed`` is the gradient of the overall objective with respect to
    ``root.value`` (default: ones, i.e. root is the objective itself).
    """
    if root.grad_fn is None and not root.parents:
        raise ValueError("backward needs a recorded graph, got a leaf")
    if seed is None:
        seed = np.ones_like(root.value)
    root.grad = np.asarray(seed, dtype=float)
    if root.grad.shape != root.value.shape:
        raise ValueError(
            f"seed shape {root.grad.shape} != value shape {root.value.shape}"
        )
    for node in reversed(_toposort(root)):
        if node.grad_fn is None or node.grad is None:
            continue
        for parent, pgrad in zip(node.parents, node.grad_fn(node.grad)):
            if pgrad is None or not parent.needs_grad:
                continue
            if parent.grad is None:
                parent.grad = pgrad
            else:
                parent.grad = parent.grad + pgrad


def gradient_array(param_vars, weights):
    """Collect leaf gradients into a flat array aligned with ``weights``."""
    flat = np.zeros_like(weights.flat)
    for name, var in param_vars.items():
        if var.grad is not None:
            start, stop = weights.offsets[name]
            flat[start:stop] = var.grad.ravel()
    return flat


def dense(x, weights, bias, act="linear"):
    """phi(x @ W' + b) with x batched (n, d)."""
    f, df = activation(act)
    z = _dense_z(x.value, weights.value, bias.value)
    out = f(z)

    def grad_fn(g):
        gz = g * df(z)
        return (
            gz @ weights.value if x.needs_grad else None,
            gz.T @ x.value if weights.needs_grad else None,
            gz.sum(axis=0) if bias.needs_grad else None,
        )

    return Var(out, (x, weights, bias), grad_fn)


def lcn1d(x, filters, biases, m, s, act="linear"):
    """Locally-connected layer on a batch; filters (positions, m)."""
    f, df = activation(act)
    z = _lcn_z(x.value, filters.value, biases.value, m, s)
    out = f(z)

    def grad_fn(g):
        gz = g * df(z)
        win, p = _windows(x.value, m, s)
        gx = None
        if x.needs_grad:
            gx = np.zeros_like(x.value)
            for k in range(p):
                gx[:, k * s : k * s + m] += gz[:, k, None] * filters.value[k]
        gw = np.einsum("np,npm->pm", gz, win) if filters.needs_grad else None
        gb = gz.sum(axis=0) if biases.needs_grad else None
        return (gx, gw, gb)

    return Var(out, (x, filters, biases), grad_fn)


def conv1d(x, filt, bias, m, s, act="linear"):
    """Convolutional layer on a batch; one shared filter (m,) and bias (1,)."""
    f, df = activation(act)
    z = _conv_z(x.value, filt.value, bias.value, m, s)
    out = f(z)

    def grad_fn(g):
        gz = g * df(z)
        win, p = _windows(x.value, m, s)
        gx = None
        if x.needs_grad:
            gx = np.zeros_like(x.value)
            for k in range(p):
                gx[:, k * s : k * s + m] += gz[:, k, None] * filt.value
        gw = np.einsum("np,npm->m", gz, win) if filt.needs_grad else None
        gb = np.array([gz.sum()]) if bias.needs_grad else None
        return (gx, gw, gb)

    return Var(out, (x, filt, bias), grad_fn)


def embedding(table, indices):
    """Rows of ``table`` at integer ``indices`` (n,) -> (n, dim)."""
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("indices must be a 1-D integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise IndexError(
            f"embedding index out of range [0, {table.value.shape[0]})"
        )
    out = table.value[idx]

    def grad_fn(g):
        if not table.needs_grad:
            return (None,)
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g)
        return (gt,)

    return Var(out, (table,), grad_fn)


def concat(a, b):
    """Column-wise concatenation of two batches."""
    na = a.value.shape[1]
    out = np.concatenate([a.value, b.value], axis=1)

    def grad_fn(g):
        return (
            g[:, :na] if a.needs_grad else None,
            g[:, na:] if b.needs_grad else None,
        )

    return Var(out, (a, b), grad_fn)


def dropout(x, rate, train, rng):
    """Inverted dropout as a recorded op; identity in eval mode."""
    if not train or rate == 0.0:
        return x
    keep = rng.random(x.value.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = x.value * keep * scale

    def grad_fn(g):
        return (g * keep * scale if x.needs_grad else None,)

    return Var(out, (x,), grad_fn)


def scalar_multiply_add(base, scale, scalar):
    """base + scale * scalar with scalar (n, 1) broadcast over columns."""
    out = base.value + scale.value * scalar.value

    def grad_fn(g):
        return (
            g if base.needs_grad else None,
            g * scalar.value if scale.needs_grad else None,
            (g * scale.value).sum(axis=1, keepdims=True)
            if scalar.needs_grad
            else None,
        )

    return Var(out, (base, scale, scalar), grad_fn)


def mse_loss(pred, target):
    """Mean squared error over every cell of the batch."""
    target = np.asarray(target, dtype=float)
    diff = pred.value - target
    out = np.mean(diff * diff)

    def grad_fn(g):
        return (g * 2.0 * diff / diff.size if pred.needs_grad else None,)

    return Var(out, (pred,), grad_fn)


def poisson_loss(pred, deaths, exposures):
    """Poisson likelihood kernel sum(E*exp(pred) - D*pred) over the batch."""
    deaths = np.asarray(deaths, dtype=float)
    exposures = np.asarray(exposures, dtype=float)
    with np.errstate(over="ignore"):
        fitted = exposures * np.exp(pred.value)
    if not np.all(np.isfinite(fitted)):
        raise DataError("overflow in exp inside the Poisson loss")
    out = np.sum(fitted - deaths * pred.value)

    def grad_fn(g):
        return (g * (fitted - deaths) if pred.needs_grad else None,)

    return Var(out, (pred,), grad_fn)
