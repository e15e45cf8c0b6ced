"""Layer helpers built from tensor ops: MLPs, initialization, parameter sets."""

from __future__ import annotations

from collections.abc import Iterator, Mapping
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {
    "relu": T.relu,
    "gelu": T.gelu,
    "identity": T.identity,
    "tanh": T.tanh,
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and per-layer activations of one MLP."""

    dims: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.dims) < 2 or len(self.activations) != len(self.dims) - 1:
            raise ValueError(f"bad MLP spec dims={self.dims} acts={self.activations}")

    @classmethod
    def hidden(cls, d_in: int, d_hidden: int, d_out: int,
               act: str = "relu", out_act: str = "identity") -> "MlpSpec":
        return cls((d_in, d_hidden, d_out), (act, out_act))

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.dims[:-1], self.dims[1:]))


class ModelParams(Mapping):
    """Named, ordered collection of trainable tensors."""

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self._t: dict[str, Tensor] = {}
        for name, t in (tensors or {}).items():
            self[name] = t

    def __setitem__(self, name: str, value) -> None:
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._t[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def count(self) -> int:
        return sum(t.size for t in self._t.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._t.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for k, t in self._t.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                raise DimensionError(f"parameter {k}: stored shape {a.shape}, model {t.shape}")
            t.data = a.copy()

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(t.data) for k, t in self._t.items()})

    def init_mlp(self, prefix: str, spec: MlpSpec, rng: np.random.Generator) -> None:
        for i, (a, b) in enumerate(zip(spec.dims[:-1], spec.dims[1:])):
            self[f"{prefix}.{i}.w"] = glorot_uniform(rng, a, b)
            self[f"{prefix}.{i}.b"] = np.zeros(b)

    def mlp(self, prefix: str, spec: MlpSpec) -> list[tuple[Tensor, Tensor, str]]:
        return [(self[f"{prefix}.{i}.w"], self[f"{prefix}.{i}.b"], act)
                for i, act in enumerate(spec.activations)]


def mlp_forward(x, layers) -> Tensor:
    """Apply ``act(x @ W + b)`` layer by layer over the last axis of ``x``.

    ``layers`` is a sequence of ``(weight, bias, activation_name)``. Leading
    axes of ``x`` are treated as a batch.
    """
    x = T.as_tensor(x)
    lead = x.shape[:-1]
    h = x.reshape(-1, x.shape[-1]) if x.ndim != 2 else x
    for i, (w, b, act) in enumerate(layers):
        w, b = T.as_tensor(w), T.as_tensor(b)
        if w.ndim != 2 or h.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
            raise DimensionError(
                f"MLP layer {i}: input width {h.shape[-1]}, weight {w.shape}, "
                f"bias {b.shape}")
        h = activation(act)(h @ w + b)
    return h if x.ndim == 2 else h.reshape(lead + (h.shape[-1],))
