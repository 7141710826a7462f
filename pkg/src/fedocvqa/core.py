"""Shared numeric types for the federation: parameter vectors, client updates
and population weights.

A parameter vector is a plain 1-D ``float64`` numpy array. Every public helper
returns a fresh array and never mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ParameterVector = np.ndarray


class DomainError(ValueError):
    """Input outside the domain of an operation (empty population, bad range...)."""


class StructuralError(ValueError):
    """Shapes or structures that do not line up."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""


class ProtocolError(RuntimeError):
    """The federated protocol was driven in an invalid order or state."""


def as_vector(values, *, name: str = "vector") -> ParameterVector:
    vec = np.array(values, dtype=np.float64)
    if vec.ndim != 1:
        raise StructuralError(f"{name} must be one-dimensional, got shape {vec.shape}")
    check_finite(vec, name)
    return vec


def check_finite(vec: np.ndarray, name: str = "vector") -> None:
    if not np.all(np.isfinite(vec)):
        raise NumericError(f"{name} contains non-finite entries")


def check_same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise StructuralError(f"dimension mismatch: {x.shape} vs {y.shape}")


def vector_axpy(a: float, x: ParameterVector, y: ParameterVector) -> ParameterVector:
    """Return ``a * x + y`` as a new vector."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_same_dim(x, y)
    if not np.isfinite(a):
        raise NumericError("axpy scalar is not finite")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x + y
    check_finite(out, "axpy result")
    return out


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    delta: ParameterVector
    n_k: int
    train_loss: float = float("nan")

    def __post_init__(self):
        if self.n_k < 1:
            raise DomainError(f"client {self.client_id}: n_k must be >= 1, got {self.n_k}")


@dataclass(frozen=True)
class PopulationWeights:
    """Aggregation weights ``p_k = n_k / sum_j n_j`` over the whole population."""

    weights: np.ndarray
    counts: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, k: int) -> float:
        return float(self.weights[k])


def population_weights(sample_counts: Sequence[int]) -> PopulationWeights:
    counts = [int(c) for c in sample_counts]
    if not counts:
        raise DomainError("population is empty")
    if any(c < 1 for c in counts):
        raise DomainError(f"sample counts must be >= 1, got {counts}")
    total = 0
    for c in counts:
        total += c
    # integer total, so each weight is a single correctly rounded division
    weights = np.array([c / total for c in counts], dtype=np.float64)
    return PopulationWeights(weights=weights, counts=tuple(counts))
