"""Deterministic federated document-QA simulator.

FedOPT rounds with FedAvg / FedAvgM / FedAdam servers, one-dataset-per-client
partitions, masked sequence-pair compilation for self-pretraining, ANLS and
two-step averaged scoring, and small numpy objectives that stand in for the
document model.
"""

from .client import ClientShard, LinearMapObjective, LogisticObjective, QuadraticObjective, TrainerConfig, local_train
from .core import ClientUpdate, DomainError, NumericError, ProtocolError, StructuralError, population_weights
from .fsp import Discretizer, DocumentExample, MaskPlan, SequencePair, build_lm, build_tlm, build_tm, reconstruct, sample_mask
from .harness import ExperimentSpec, compare_runs, run_experiment, run_grid
from .metrics import anls_score, accuracy_score, levenshtein, two_step_average
from .orchestrator import FederationConfig, Phase, Population, aggregate, run_phases, run_round, run_training, sample_clients
from .partition import DatasetDescriptor, partition, scenario
from .server import ServerState, fedadam_step, fedavg_step, fedavgm_step, server_step

__version__ = "0.1.0"

__all__ = [
    "ClientShard", "ClientUpdate", "DatasetDescriptor", "Discretizer", "DocumentExample", "DomainError",
    "ExperimentSpec", "FederationConfig", "LinearMapObjective", "LogisticObjective", "MaskPlan", "NumericError",
    "Phase", "Population", "ProtocolError", "QuadraticObjective", "SequencePair", "ServerState", "StructuralError",
    "TrainerConfig", "accuracy_score", "aggregate", "anls_score", "build_lm", "build_tlm", "build_tm",
    "compare_runs", "fedadam_step", "fedavg_step", "fedavgm_step", "levenshtein", "local_train", "partition",
    "population_weights", "reconstruct", "run_experiment", "run_grid", "run_phases", "run_round", "run_training",
    "sample_clients", "sample_mask", "scenario", "server_step", "two_step_average",
]
