"""The federated round loop: sample clients, broadcast, train locally,
aggregate, apply the server optimizer, evaluate, log.

Every random draw comes from a stream keyed on ``(seed, phase, round[, client])``
and aggregation walks clients in ascending id order, so a run is reproducible
bit for bit whether local training runs serially or on a thread pool.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .client import ClientShard, TrainerConfig, local_train
from .core import (
    ClientUpdate,
    DomainError,
    NumericError,
    ParameterVector,
    PopulationWeights,
    ProtocolError,
    StructuralError,
    population_weights,
)
from .server import SERVER_OPTIMIZERS, ServerState, server_step

log = logging.getLogger(__name__)

AGGREGATION_MODES = ("literal", "normalized")
PHASES = ("pretrain", "finetune")

_SAMPLE_STREAM = 0
_CLIENT_STREAM = 1


class ClientTrainingError(RuntimeError):
    def __init__(self, round_: int, client_id: int, cause: Exception):
        super().__init__(f"round {round_}, client {client_id}: {cause}")
        self.round = round_
        self.client_id = client_id
        self.numeric = isinstance(cause, NumericError)


def clients_per_round(K: int, C: float) -> int:
    """``max(1, round_half_up(C * K))``, rounding on the decimal value of C."""
    if K < 1:
        raise DomainError("K must be >= 1")
    if not 0.0 < C <= 1.0:
        raise DomainError(f"client fraction {C} outside (0, 1]")
    return max(1, math.floor(Fraction(repr(float(C))) * K + Fraction(1, 2)))


def _phase_code(phase: str) -> int:
    try:
        return PHASES.index(phase)
    except ValueError:
        raise DomainError(f"unknown phase {phase!r}") from None


def sample_clients(K: int, C: float, t: int, seed: int, phase: str = "finetune") -> list[int]:
    m = clients_per_round(K, C)
    rng = np.random.default_rng([seed, _SAMPLE_STREAM, _phase_code(phase), t])
    return sorted(int(k) for k in rng.choice(K, size=m, replace=False))


def client_rng(seed: int, phase: str, t: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, _CLIENT_STREAM, _phase_code(phase), t, client_id])


def aggregate(
    updates: Sequence[ClientUpdate],
    weights: PopulationWeights,
    mode: str = "literal",
) -> ParameterVector:
    """Combine client deltas into the server pseudo-gradient.

    ``literal``: ``(1/|S|) * sum_k p_k * delta_k`` with population-wide ``p_k``.
    ``normalized``: ``sum_k (n_k / sum_S n_j) * delta_k``.
    """
    if not updates:
        raise ProtocolError("cannot aggregate an empty set of updates")
    if mode not in AGGREGATION_MODES:
        raise DomainError(f"unknown aggregation mode {mode!r}")
    ordered = sorted(updates, key=lambda u: u.client_id)
    if len({u.client_id for u in ordered}) != len(ordered):
        raise ProtocolError("duplicate client in update set")
    dim = ordered[0].delta.shape
    for u in ordered:
        if u.delta.shape != dim:
            raise StructuralError(f"client {u.client_id} delta has shape {u.delta.shape}, expected {dim}")
    out = np.zeros(dim, dtype=np.float64)
    if mode == "literal":
        for u in ordered:
            out += weights[u.client_id] * u.delta
        return out / len(ordered)
    total = 0
    for u in ordered:
        total += u.n_k
    for u in ordered:
        out += (u.n_k / total) * u.delta
    return out


@dataclass(frozen=True)
class Evaluation:
    val_loss: float
    metrics: Mapping[str, float] = field(default_factory=dict)
    two_step: float = float("nan")


@dataclass
class Population:
    """Client shards for one phase plus a validation hook.

    Without an ``evaluator`` the validation loss is the weighted objective
    ``sum_k p_k F_k(theta)``.
    """

    shards: list[ClientShard]
    evaluator: Callable[[np.ndarray], Evaluation] | None = None
    datasets: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.shards:
            raise DomainError("population has no clients")
        ids = [s.client_id for s in self.shards]
        if ids != list(range(len(ids))):
            raise DomainError("client ids must be 0..K-1 in order")
        self.weights = population_weights([s.n_k for s in self.shards])

    @property
    def K(self) -> int:
        return len(self.shards)

    @property
    def dim(self) -> int:
        return self.shards[0].objective.dim

    def objective_value(self, theta) -> float:
        total = 0.0
        for s in self.shards:
            total += self.weights[s.client_id] * s.objective.loss(theta)
        return total

    def evaluate(self, theta) -> Evaluation:
        if self.evaluator is not None:
            return self.evaluator(theta)
        return Evaluation(val_loss=self.objective_value(theta))


@dataclass(frozen=True)
class FederationConfig:
    total_clients: int
    client_fraction: float = 1.0
    rounds: int = 10
    local_epochs: int = 1
    seed: int = 0
    aggregation_mode: str = "literal"
    server_opt: str = "fedavg"
    phase: str = "finetune"
    trainer: TrainerConfig = TrainerConfig()
    server_hparams: Mapping[str, float] = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        clients_per_round(self.total_clients, self.client_fraction)
        if self.rounds < 0:
            raise DomainError("rounds must be >= 0")
        if self.local_epochs < 0:
            raise DomainError("local_epochs must be >= 0")
        if self.seed < 0:
            raise DomainError("seed must be non-negative")
        if self.aggregation_mode not in AGGREGATION_MODES:
            raise DomainError(f"unknown aggregation mode {self.aggregation_mode!r}")
        if self.server_opt not in SERVER_OPTIMIZERS:
            raise DomainError(f"unknown server optimizer {self.server_opt!r}")
        _phase_code(self.phase)
        if self.workers < 1:
            raise DomainError("workers must be >= 1")

    @property
    def clients_per_round(self) -> int:
        return clients_per_round(self.total_clients, self.client_fraction)

    def initial_state(self, theta0) -> ServerState:
        return ServerState.initial(theta0, **dict(self.server_hparams))


@dataclass(frozen=True)
class RoundRecord:
    round: int
    phase: str
    selected: tuple[int, ...]
    delta_norm: float
    val_loss: float
    metrics: Mapping[str, float]
    two_step: float
    train_loss: float = float("nan")


def run_round(
    state: ServerState,
    config: FederationConfig,
    population: Population,
    t: int,
) -> tuple[ServerState, RoundRecord]:
    if t >= config.rounds:
        raise ProtocolError("no rounds remaining")
    if state.round != t:
        raise ProtocolError(f"server is at round {state.round}, asked to run round {t}")
    if population.K != config.total_clients:
        raise ProtocolError(f"config expects {config.total_clients} clients, population has {population.K}")

    selected = sample_clients(config.total_clients, config.client_fraction, t, config.seed, config.phase)
    trainer = replace(config.trainer, epochs=config.local_epochs)
    theta_t = state.theta

    def train(k: int) -> ClientUpdate:
        try:
            return local_train(theta_t, population.shards[k], trainer, client_rng(config.seed, config.phase, t, k))
        except (NumericError, DomainError, StructuralError) as exc:
            raise ClientTrainingError(t, k, exc) from exc

    if config.workers > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            updates = list(pool.map(train, selected))
    else:
        updates = [train(k) for k in selected]

    delta = aggregate(updates, population.weights, config.aggregation_mode)
    new_state = server_step(config.server_opt, state, delta)
    ev = population.evaluate(new_state.theta)
    train_loss = 0.0
    for u in updates:
        train_loss += u.train_loss
    record = RoundRecord(
        round=t,
        phase=config.phase,
        selected=tuple(selected),
        delta_norm=float(np.sqrt(delta @ delta)),
        val_loss=float(ev.val_loss),
        metrics=dict(ev.metrics),
        two_step=float(ev.two_step),
        train_loss=train_loss / len(updates),
    )
    log.debug("%s round %d: clients %s val_loss %.6g", config.phase, t, selected, record.val_loss)
    return new_state, record


@dataclass(frozen=True)
class Phase:
    config: FederationConfig
    population: Population


@dataclass
class TrainingRun:
    records: list[RoundRecord]
    theta: np.ndarray
    states: list[ServerState]


def run_phases(phases: Sequence[Phase], theta0=None, on_round: Callable[[RoundRecord], None] | None = None) -> TrainingRun:
    """Run phases back to back; each starts from the previous phase's final
    model with fresh server moments."""
    if not phases:
        raise DomainError("no phases to run")
    theta = np.zeros(phases[0].population.dim) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    records: list[RoundRecord] = []
    states = []
    for ph in phases:
        log.info(
            "%s: K=%d C=%g -> %d clients/round, T=%d, server=%s, aggregation=%s",
            ph.config.phase, ph.config.total_clients, ph.config.client_fraction,
            ph.config.clients_per_round, ph.config.rounds, ph.config.server_opt, ph.config.aggregation_mode,
        )
        state = ph.config.initial_state(theta)
        for t in range(ph.config.rounds):
            state, rec = run_round(state, ph.config, ph.population, t)
            records.append(rec)
            if on_round is not None:
                on_round(rec)
        theta = state.theta
        states.append(state)
    return TrainingRun(records=records, theta=theta, states=states)


def run_training(
    config: FederationConfig,
    population: Population,
    theta0=None,
    *,
    pretrain: Phase | None = None,
) -> TrainingRun:
    """``config.rounds`` rounds on ``population``, optionally preceded by a
    pretraining phase whose final model initializes this one."""
    phases = [pretrain] if pretrain is not None else []
    phases.append(Phase(config, population))
    return run_phases(phases, theta0)


# --- logging -------------------------------------------------------------

CSV_FIELDS = ("round", "phase", "clients_per_round", "selected_ids", "delta_norm", "train_loss", "val_loss")


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_header(datasets: Sequence[str]) -> list[str]:
    return [*CSV_FIELDS, *(f"metric_{d}" for d in datasets), "two_step"]


def records_to_csv(records: Sequence[RoundRecord], datasets: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(datasets))
    for r in records:
        writer.writerow(
            [
                r.round,
                r.phase,
                len(r.selected),
                ";".join(str(k) for k in r.selected),
                _fmt(r.delta_norm),
                _fmt(r.train_loss),
                _fmt(r.val_loss),
                *(_fmt(r.metrics.get(d, float("nan"))) for d in datasets),
                _fmt(r.two_step),
            ]
        )
    return buf.getvalue()
