"""Client-side training (CLIENTOPT) and small differentiable objectives that
stand in for the document model.

``local_train`` starts from the broadcast weights, runs ``E`` epochs of
minibatch updates over a seeded shuffle and returns ``theta_t - y_E``. The
optimizer state is created inside the call, so nothing carries over between
rounds.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ClientUpdate, DomainError, NumericError, StructuralError, as_vector


@dataclass(frozen=True)
class TrainerConfig:
    eta_l: float = 0.0005
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 1
    optimizer: str = "adam"

    def __post_init__(self):
        if self.eta_l <= 0:
            raise DomainError("eta_l must be positive")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if self.optimizer not in ("adam", "gd"):
            raise DomainError(f"unknown client optimizer {self.optimizer!r}")


class LocalObjective(ABC):
    """Per-example loss averaged over a batch of example indices."""

    n_examples: int
    dim: int

    @abstractmethod
    def loss_grad(self, theta: np.ndarray, idx: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        ...

    def loss(self, theta: np.ndarray, idx: np.ndarray | None = None) -> float:
        return self.loss_grad(theta, idx)[0]

    def gradient(self, theta: np.ndarray, idx: np.ndarray | None = None) -> np.ndarray:
        return self.loss_grad(theta, idx)[1]


class QuadraticObjective(LocalObjective):
    """Mean over rows of ``0.5 * (a_i . theta - b_i)**2``."""

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise StructuralError(f"bad quadratic shapes A{self.A.shape} b{self.b.shape}")
        self.n_examples, self.dim = self.A.shape

    def loss_grad(self, theta, idx=None):
        A, b = (self.A, self.b) if idx is None else (self.A[idx], self.b[idx])
        r = A @ theta - b
        return 0.5 * float(r @ r) / len(b), A.T @ r / len(b)

    def hessian(self) -> np.ndarray:
        return self.A.T @ self.A / self.n_examples

    def minimizer(self) -> np.ndarray:
        return np.linalg.lstsq(self.A, self.b, rcond=None)[0]


class LogisticObjective(LocalObjective):
    """Softmax cross-entropy with weights ``theta.reshape(n_features, n_classes)``."""

    def __init__(self, X, y, n_classes: int):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.n_classes = n_classes
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise StructuralError("bad logistic shapes")
        self.n_examples, self.n_features = self.X.shape
        self.dim = self.n_features * n_classes

    def loss_grad(self, theta, idx=None):
        X, y = (self.X, self.y) if idx is None else (self.X[idx], self.y[idx])
        W = theta.reshape(self.n_features, self.n_classes)
        z = X @ W
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = len(y)
        loss = -float(logp[np.arange(n), y].sum()) / n
        p = np.exp(logp)
        p[np.arange(n), y] -= 1.0
        return loss, (X.T @ p / n).ravel()

    def accuracy(self, theta) -> float:
        W = theta.reshape(self.n_features, self.n_classes)
        return float(np.mean(np.argmax(self.X @ W, axis=1) == self.y))


class LinearMapObjective(LocalObjective):
    """Multi-output least squares ``0.5 * ||W x_i - y_i||**2`` with ``theta = W.ravel()``."""

    def __init__(self, X, Y):
        self.X = np.asarray(X, dtype=np.float64)
        self.Y = np.asarray(Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2 or len(self.X) != len(self.Y):
            raise StructuralError("bad linear-map shapes")
        self.n_examples, self.n_in = self.X.shape
        self.n_out = self.Y.shape[1]
        self.dim = self.n_in * self.n_out

    def predict(self, theta, X=None) -> np.ndarray:
        W = theta.reshape(self.n_out, self.n_in)
        return (self.X if X is None else X) @ W.T

    def loss_grad(self, theta, idx=None):
        X, Y = (self.X, self.Y) if idx is None else (self.X[idx], self.Y[idx])
        W = theta.reshape(self.n_out, self.n_in)
        R = X @ W.T - Y
        n = len(X)
        return 0.5 * float(np.sum(R * R)) / n, (R.T @ X).ravel() / n


@dataclass(frozen=True)
class ClientShard:
    """One client's local data wrapped as an objective, plus its weight count ``n_k``."""

    client_id: int
    objective: LocalObjective
    n_k: int
    dataset: str = ""
    doc_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_k < 1:
            raise DomainError(f"client {self.client_id}: n_k must be >= 1")


def local_train(
    theta_t,
    shard: ClientShard,
    config: TrainerConfig,
    rng: np.random.Generator,
) -> ClientUpdate:
    obj = shard.objective
    n = obj.n_examples
    if n < 1:
        raise DomainError(f"client {shard.client_id}: empty shard")
    theta_t = as_vector(theta_t, name="theta_t")
    if theta_t.shape != (obj.dim,):
        raise StructuralError(f"client {shard.client_id}: model has {theta_t.size} parameters, objective expects {obj.dim}")
    y = theta_t.copy()
    m = np.zeros_like(y)
    v = np.zeros_like(y)
    step = 0
    loss_sum, n_batches = 0.0, 0
    lr, wd = config.eta_l, config.weight_decay
    B = config.batch_size
    for _ in range(config.epochs):
        order = np.arange(n) if B >= n else rng.permutation(n)
        for start in range(0, n, B):
            idx = order[start:start + B]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g = obj.loss_grad(y, idx)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise NumericError(f"client {shard.client_id}: local training diverged at step {step}")
            loss_sum += loss
            n_batches += 1
            step += 1
            if wd:
                y = y * (1.0 - lr * wd)
            if config.optimizer == "gd":
                y = y - lr * g
            else:
                m = config.beta1 * m + (1.0 - config.beta1) * g
                v = config.beta2 * v + (1.0 - config.beta2) * g * g
                m_hat = m / (1.0 - config.beta1**step)
                v_hat = v / (1.0 - config.beta2**step)
                y = y - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    delta = theta_t - y
    if not np.all(np.isfinite(delta)):
        raise NumericError(f"client {shard.client_id}: non-finite update")
    train_loss = loss_sum / n_batches if n_batches else float("nan")
    return ClientUpdate(client_id=shard.client_id, delta=delta, n_k=shard.n_k, train_loss=train_loss)


# --- synthetic federations -----------------------------------------------


@dataclass
class SyntheticFederation:
    """Clients grouped in clusters; ``heterogeneity`` scales how far cluster and
    client parameters sit from the shared center (0 gives identical clients)."""

    cluster_names: tuple[str, ...]
    cluster_of: tuple[int, ...]
    objectives: list[LocalObjective]
    heterogeneity: float
    seed: int
    optima: list[np.ndarray] = field(default_factory=list)

    @property
    def n_clients(self) -> int:
        return len(self.objectives)

    @property
    def dim(self) -> int:
        return self.objectives[0].dim

    def shards(self) -> list[ClientShard]:
        return [
            ClientShard(k, obj, obj.n_examples, dataset=self.cluster_names[self.cluster_of[k]])
            for k, obj in enumerate(self.objectives)
        ]


def make_synthetic_federation(
    K: int,
    client_counts_per_cluster: Sequence[int],
    heterogeneity: float,
    dims: tuple[int, int] = (32, 8),
    seed: int = 0,
    kind: str = "quadratic",
    cluster_names: Sequence[str] | None = None,
) -> SyntheticFederation:
    """Draw ``K`` client objectives in ``len(client_counts_per_cluster)`` clusters.

    ``dims`` is ``(examples per client, parameter dimension)``; for the logistic
    kind the second entry is the feature count and three classes are used.
    """
    counts = [int(c) for c in client_counts_per_cluster]
    if sum(counts) != K or any(c < 0 for c in counts):
        raise DomainError(f"cluster counts {counts} do not sum to K={K}")
    if heterogeneity < 0:
        raise DomainError("heterogeneity must be >= 0")
    n_rows, d = dims
    names = tuple(cluster_names) if cluster_names else tuple(f"cluster{c}" for c in range(len(counts)))
    if len(names) != len(counts):
        raise DomainError("one name per cluster required")
    cluster_of = tuple(c for c, cnt in enumerate(counts) for _ in range(cnt))
    h = float(heterogeneity)

    base = np.random.default_rng([seed, 0])
    cluster_rngs = [np.random.default_rng([seed, 1, c]) for c in range(len(counts))]
    client_rngs = [np.random.default_rng([seed, 2, k]) for k in range(K)]

    if kind == "quadratic":
        A0 = base.standard_normal((n_rows, d))
        opt0 = base.standard_normal(d)
        noise0 = 0.1 * base.standard_normal(n_rows)
        shifts = [(0.5 * r.standard_normal((n_rows, d)), r.standard_normal(d)) for r in cluster_rngs]
        objectives, optima = [], []
        for k in range(K):
            dA_c, dopt_c = shifts[cluster_of[k]]
            r = client_rngs[k]
            dA_k, dopt_k = 0.25 * r.standard_normal((n_rows, d)), 0.5 * r.standard_normal(d)
            A = A0 + h * (dA_c + dA_k)
            opt = opt0 + h * (dopt_c + dopt_k)
            objectives.append(QuadraticObjective(A, A @ opt + noise0))
            optima.append(opt)
        return SyntheticFederation(names, cluster_of, objectives, h, seed, optima)

    if kind == "logistic":
        n_classes = 3
        means0 = 1.5 * base.standard_normal((n_classes, d))
        labels0 = np.arange(n_rows) % n_classes
        X0 = base.standard_normal((n_rows, d))
        shifts = [r.standard_normal((n_classes, d)) for r in cluster_rngs]
        objectives = []
        for k in range(K):
            r = client_rngs[k]
            means = means0 + h * (shifts[cluster_of[k]] + 0.25 * r.standard_normal((n_classes, d)))
            objectives.append(LogisticObjective(X0 + means[labels0], labels0, n_classes))
        return SyntheticFederation(names, cluster_of, objectives, h, seed)

    raise DomainError(f"unknown federation kind {kind!r}")
