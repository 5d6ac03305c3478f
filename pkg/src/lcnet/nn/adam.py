"""Adam optimizer with bias correction."""

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    """Optimizer state aligned with a flat parameter array.

    Defaults follow the common toolkit settings (epsilon included), so runs
    are comparable with reference results obtained elsewhere.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7


def init_adam(n_params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-7):
    return AdamState(
        m=np.zeros(n_params),
        v=np.zeros(n_params),
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(state, params, grads):
    """One Adam update; ``params`` and ``state`` are modified in place.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    theta <- theta - lr * mhat / (sqrt(vhat) + eps) with bias-corrected
    mhat, vhat. Returns (params, state) for convenience.
    """
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise ValueError(f"grads shape {grads.shape} != params {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient passed to adam_step")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.lr * mhat / (np.sqrt(vhat) + state.epsilon)
    return params, state
