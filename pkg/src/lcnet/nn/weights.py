"""Flat trainable-parameter store with named, shaped views.

All of a network's parameters live in one contiguous float64 array; each
layer sees its slice through a reshaped view, so optimizer updates on the
flat array are immediately visible to the layers (and vice versa).
"""

import base64

import numpy as np

WEIGHTS_FORMAT_VERSION = 1


class NetworkWeights:
    """Ordered named parameter blocks backed by one flat array."""

    def __init__(self, shapes, flat=None):
        """``shapes``: ordered list of (name, shape) pairs."""
        self.names = tuple(name for name, _ in shapes)
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate parameter names")
        self.shapes = {name: tuple(shape) for name, shape in shapes}
        self.offsets = {}
        total = 0
        for name, shape in shapes:
            size = int(np.prod(shape, dtype=int))
            self.offsets[name] = (total, total + size)
            total += size
        if flat is None:
            flat = np.zeros(total)
        else:
            flat = np.asarray(flat, dtype=float)
            if flat.shape != (total,):
                raise ValueError(
                    f"flat array has {flat.shape}, expected ({total},)"
                )
        self.flat = flat

    @property
    def size(self):
        return self.flat.size

    def view(self, name):
        """Shaped view into the flat array; writes are shared."""
        start, stop = self.offsets[name]
        return self.flat[start:stop].reshape(self.shapes[name])

    def copy(self):
        shapes = [(name, self.shapes[name]) for name in self.names]
        return NetworkWeights(shapes, self.flat.copy())

    def __eq__(self, other):
        return (
            isinstance(other, NetworkWeights)
            and self.names == other.names
            and self.shapes == other.shapes
            and np.array_equal(self.flat, other.flat)
        )


def weights_to_payload(weights):
    """JSON-ready dict; the flat array is base64 little-endian float64."""
    return {
        "version": WEIGHTS_FORMAT_VERSION,
        "layout": [[name, list(weights.shapes[name])] for name in weights.names],
        "dtype": "<f8",
        "data": base64.b64encode(
            np.ascontiguousarray(weights.flat, dtype="<f8").tobytes()
        ).decode("ascii"),
    }


def weights_from_payload(payload):
    """Inverse of weights_to_payload; bit-exact round trip."""
    if payload.get("version") != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights version {payload.get('version')!r}")
    flat = np.frombuffer(
        base64.b64decode(payload["data"]), dtype=payload["dtype"]
    ).astype(float)
    shapes = [(name, tuple(shape)) for name, shape in payload["layout"]]
    return NetworkWeights(shapes, flat)
