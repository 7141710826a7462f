"""Server-side optimizers consuming the aggregated pseudo-gradient.

All three rules share one state record. ``m`` is the first moment used by both
FedAvgM (with ``beta``) and FedAdam (with ``beta1``); ``v`` is only touched by
FedAdam. FedAdam applies no bias correction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DomainError, ParameterVector, as_vector, check_finite, check_same_dim

SERVER_OPTIMIZERS = ("fedavg", "fedavgm", "fedadam")


@dataclass(frozen=True)
class ServerState:
    theta: ParameterVector
    m: ParameterVector
    v: ParameterVector
    round: int = 0
    eta_s: float = 0.001
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-5
    # FedAvg takes a unit step unless this is switched on
    fedavg_use_lr: bool = False

    @classmethod
    def initial(cls, theta0, **hparams) -> "ServerState":
        theta = as_vector(theta0, name="theta0")
        state = cls(theta=theta, m=np.zeros_like(theta), v=np.zeros_like(theta), **hparams)
        state.validate()
        return state

    def validate(self) -> None:
        if self.eta_s <= 0 or self.epsilon <= 0:
            raise DomainError("eta_s and epsilon must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DomainError("beta1, beta2 must lie in [0, 1)")
        if not 0.0 <= self.beta < 1.0:
            raise DomainError("beta must lie in [0, 1)")

    @property
    def hparams(self) -> dict:
        return {
            "eta_s": self.eta_s,
            "beta": self.beta,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "fedavg_use_lr": self.fedavg_use_lr,
        }


def _checked_delta(state: ServerState, delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    check_same_dim(state.theta, delta)
    check_finite(delta, "server delta")
    return delta


def fedavg_step(state: ServerState, delta: ParameterVector) -> ServerState:
    delta = _checked_delta(state, delta)
    step = state.eta_s * delta if state.fedavg_use_lr else delta
    theta = state.theta - step
    check_finite(theta, "theta")
    return replace(state, theta=theta, round=state.round + 1)


def fedavgm_step(state: ServerState, delta: ParameterVector) -> ServerState:
    delta = _checked_delta(state, delta)
    m = state.beta * state.m + (1.0 - state.beta) * delta
    theta = state.theta - m
    check_finite(theta, "theta")
    return replace(state, theta=theta, m=m, round=state.round + 1)


def fedadam_step(state: ServerState, delta: ParameterVector) -> ServerState:
    delta = _checked_delta(state, delta)
    m = state.beta1 * state.m + (1.0 - state.beta1) * delta
    v = state.beta2 * state.v + (1.0 - state.beta2) * (delta * delta)
    theta = state.theta - state.eta_s * m / (np.sqrt(v) + state.epsilon)
    check_finite(theta, "theta")
    return replace(state, theta=theta, m=m, v=v, round=state.round + 1)


_STEPS = {"fedavg": fedavg_step, "fedavgm": fedavgm_step, "fedadam": fedadam_step}


def server_step(name: str, state: ServerState, delta: ParameterVector) -> ServerState:
    try:
        step = _STEPS[name]
    except KeyError:
        raise DomainError(f"unknown server optimizer {name!r}; expected one of {SERVER_OPTIMIZERS}") from None
    return step(state, delta)
