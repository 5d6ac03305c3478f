"""Declarative layer descriptions and analytic parameter counting."""

from dataclasses import dataclass

from .activations import ACTIVATIONS

KINDS = (
    "dense",
    "lcn1d",
    "conv1d",
    "embedding",
    "dropout",
    "concat",
    "scalar-multiply-add",
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network graph.

    Which shape fields are meaningful depends on ``kind``:

    - dense: ``in_dim`` -> ``units``
    - lcn1d / conv1d: input length ``in_dim``, kernel/stride/filters
    - embedding: ``vocab`` rows of size ``dim``
    - dropout: ``rate``
    - concat, scalar-multiply-add: wiring only, no parameters
    """

    kind: str
    name: str
    units: int = 0
    in_dim: int = 0
    kernel: int = 0
    stride: int = 0
    filters: int = 1
    vocab: int = 0
    dim: int = 0
    rate: float = 0.0
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind in ("lcn1d", "conv1d"):
            output_positions(self.in_dim, self.kernel, self.stride)
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


def output_positions(d, m, s):
    """Number of receptive fields (d - m)/s + 1; (d - m)/s must be an integer."""
    if m < 1 or s < 1 or m > d:
        raise ValueError(f"invalid kernel/stride ({m}, {s}) for input length {d}")
    if (d - m) % s != 0:
        raise ValueError(
            f"(input {d} - kernel {m}) must be divisible by stride {s}"
        )
    return (d - m) // s + 1


def parameter_count(spec):
    """Trainable parameters in one layer."""
    if spec.kind == "dense":
        return spec.units * (spec.in_dim + 1)
    if spec.kind == "lcn1d":
        p = output_positions(spec.in_dim, spec.kernel, spec.stride)
        return spec.filters * p * (spec.kernel + 1)
    if spec.kind == "conv1d":
        return spec.filters * (spec.kernel + 1)
    if spec.kind == "embedding":
        return spec.vocab * spec.dim
    return 0


def count_parameters(graph):
    """Total trainable parameters of a layer graph."""
    return sum(parameter_count(spec) for spec in graph)
