"""Self-contained differentiable layers, reverse-mode gradients, and Adam."""

from .activations import ACTIVATIONS, activation
from .adam import AdamState, adam_step, init_adam
from .autograd import (
    Var,
    backward,
    concat,
    conv1d,
    dense,
    dropout,
    embedding,
    gradient_array,
    lcn1d,
    mse_loss,
    poisson_loss,
    scalar_multiply_add,
)
from .layerspec import LayerSpec, count_parameters, output_positions
from .ops import (
    conv1d_forward,
    dense_forward,
    dropout_forward,
    embedding_lookup,
    lcn1d_forward,
)
from .weights import NetworkWeights, weights_from_payload, weights_to_payload

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "LayerSpec",
    "NetworkWeights",
    "Var",
    "activation",
    "adam_step",
    "backward",
    "concat",
    "conv1d",
    "conv1d_forward",
    "count_parameters",
    "dense",
    "dense_forward",
    "dropout",
    "dropout_forward",
    "embedding",
    "embedding_lookup",
    "gradient_array",
    "init_adam",
    "lcn1d",
    "lcn1d_forward",
    "mse_loss",
    "output_positions",
    "poisson_loss",
    "scalar_multiply_add",
    "weights_from_payload",
    "weights_to_payload",
]
