"""Experiment driver: self-pretraining then finetuning over a partitioned
document federation, one directory of artifacts per (configuration, seed).

Each run directory holds

* ``config.json``  - the exact configuration, enough to reproduce the run;
* ``rounds.csv``   - one row per round of both phases;
* ``summary.json`` - final metrics (deterministic, byte-stable);
* ``timing.json``  - wall time, kept apart so the other files stay reproducible.
"""

from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

from .client import TrainerConfig
from .core import DomainError
from .fsp import OBJECTIVES
from .orchestrator import FederationConfig, Phase, TrainingRun, records_to_csv, run_phases
from .partition import (
    DATASETS,
    SCENARIOS,
    TRAIN_DOCUMENTS,
    TRAIN_QUESTIONS,
    DatasetDescriptor,
    manifest_corpus,
    partition,
    read_manifest,
    synthetic_manifest,
)
from .server import SERVER_OPTIMIZERS
from .surrogate import Featurizer, build_document_federation, make_corpus_model

log = logging.getLogger(__name__)

# train / validation split sizes (documents, questions)
TRAIN_SPLIT = {name: (TRAIN_DOCUMENTS[name], TRAIN_QUESTIONS[name]) for name in DATASETS}
VAL_SPLIT = {"WTQ": (300, 3500), "DocVQA": (1300, 5400), "TabFact": (1700, 12700)}

SUMMARY_VERSION = 1


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str = "k3"
    clients: tuple[int, ...] = ()
    fraction_pretrain: float = 1.0
    fraction_finetune: float = 1.0
    rounds_pretrain: int = 10
    rounds_finetune: int = 10
    server_opt_pretrain: str = "fedavg"
    server_opt_finetune: str = "fedavg"
    aggregation: str = "literal"
    epochs: int = 1
    batch_size: int = 16
    eta_l: float = 0.0005
    weight_decay: float = 0.01
    client_optimizer: str = "adam"
    eta_s: float = 0.001
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-5
    objectives: tuple[str, ...] = OBJECTIVES
    heterogeneity: float = 1.0
    count: str = "questions"
    corpus_scale: float = 0.01
    manifest: str | None = None
    data_seed: int = 0
    word_buckets: int = 32
    seeds: tuple[int, ...] = (0,)
    workers: int = 1
    out: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "clients", tuple(int(c) for c in self.clients))
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        self.validate()

    def validate(self) -> None:
        if self.scenario == "custom":
            if len(self.clients) != len(DATASETS) or min(self.clients) < 1:
                raise DomainError("custom scenario needs one positive client count per dataset")
        elif self.scenario not in {f"k{k}" for k in SCENARIOS}:
            raise DomainError(f"unknown scenario {self.scenario!r}")
        for opt in (self.server_opt_pretrain, self.server_opt_finetune):
            if opt not in SERVER_OPTIMIZERS:
                raise DomainError(f"unknown server optimizer {opt!r}")
        bad = [o for o in self.objectives if o not in OBJECTIVES]
        if bad:
            raise DomainError(f"unknown objectives {bad}")
        if self.rounds_pretrain > 0 and not self.objectives:
            raise DomainError("pretraining needs at least one objective")
        if self.rounds_pretrain < 0 or self.rounds_finetune < 1:
            raise DomainError("need rounds_pretrain >= 0 and rounds_finetune >= 1")
        if not self.seeds:
            raise DomainError("at least one seed is required")
        if self.manifest is None and not 0.0 < self.corpus_scale <= 1.0:
            raise DomainError("corpus_scale must lie in (0, 1]")
        if self.count not in ("questions", "documents"):
            raise DomainError(f"unknown count mode {self.count!r}")
        # phase configs validate fractions, aggregation, epochs
        self.phase_config("pretrain", self.seeds[0])
        self.phase_config("finetune", self.seeds[0])

    @property
    def allocation(self) -> tuple[int, ...]:
        if self.scenario == "custom":
            return self.clients
        return SCENARIOS[int(self.scenario[1:])]

    @property
    def K(self) -> int:
        return sum(self.allocation)

    def trainer(self) -> TrainerConfig:
        return TrainerConfig(
            eta_l=self.eta_l,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            optimizer=self.client_optimizer,
        )

    def phase_config(self, phase: str, seed: int) -> FederationConfig:
        pre = phase == "pretrain"
        return FederationConfig(
            total_clients=self.K,
            client_fraction=self.fraction_pretrain if pre else self.fraction_finetune,
            rounds=self.rounds_pretrain if pre else self.rounds_finetune,
            local_epochs=self.epochs,
            seed=seed,
            aggregation_mode=self.aggregation,
            server_opt=self.server_opt_pretrain if pre else self.server_opt_finetune,
            phase=phase,
            trainer=self.trainer(),
            server_hparams={
                "eta_s": self.eta_s,
                "beta": self.beta,
                "beta1": self.beta1,
                "beta2": self.beta2,
                "epsilon": self.epsilon,
            },
            workers=self.workers,
        )

    def label(self) -> str:
        scen = self.scenario if self.scenario != "custom" else "custom" + "-".join(map(str, self.clients))
        fsp = "nofsp" if self.rounds_pretrain == 0 else f"fsp{self.rounds_pretrain}-{self.server_opt_pretrain}-C{self.fraction_pretrain:g}"
        return f"{scen}_{fsp}_ft{self.rounds_finetune}-{self.server_opt_finetune}-C{self.fraction_finetune:g}_{self.aggregation}"

    def for_seed(self, seed: int) -> "ExperimentSpec":
        return replace(self, seeds=(seed,))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("clients", "objectives", "seeds"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown spec fields {sorted(unknown)}")
        return cls(**data)


def _scaled(split: dict, scale: float) -> tuple[dict, dict]:
    docs = {k: max(3, round(d * scale)) for k, (d, _) in split.items()}
    qs = {k: max(docs[k], round(q * scale)) for k, (_, q) in split.items()}
    return docs, qs


def load_corpora(spec: ExperimentSpec) -> tuple[dict, dict]:
    """Train corpus (from the manifest or synthetic) and synthetic validation corpus."""
    if spec.manifest is not None:
        with open(spec.manifest, encoding="utf-8") as fh:
            train = manifest_corpus(read_manifest(fh))
    else:
        train = manifest_corpus(synthetic_manifest(*_scaled(TRAIN_SPLIT, spec.corpus_scale), seed=spec.data_seed))
    val_raw = manifest_corpus(synthetic_manifest(*_scaled(VAL_SPLIT, spec.corpus_scale), seed=spec.data_seed + 1))
    val = {name: {f"val-{d}": n for d, n in docs.items()} for name, docs in val_raw.items() if name in train}
    return train, val


def build_phases(spec: ExperimentSpec, seed: int, corpora: tuple[dict, dict] | None = None) -> list[Phase]:
    train, val = corpora or load_corpora(spec)
    missing = [d for d in DATASETS if d not in train]
    if missing:
        raise DomainError(f"manifest lacks datasets {missing}")
    descriptors = [
        DatasetDescriptor(name, tuple(train[name]), train[name], k) for name, k in zip(DATASETS, spec.allocation)
    ]
    plans = partition(descriptors, seed)
    model = make_corpus_model(spec.heterogeneity, seed=spec.data_seed)
    questions = {d: n for docs in train.values() for d, n in docs.items()}
    fed = build_document_federation(
        model,
        plans,
        questions,
        val,
        objectives=spec.objectives or OBJECTIVES,
        featurizer=Featurizer(spec.word_buckets),
        count=spec.count,
        seed=seed,
    )
    phases = []
    if spec.rounds_pretrain > 0:
        phases.append(Phase(spec.phase_config("pretrain", seed), fed.fsp_population()))
    phases.append(Phase(spec.phase_config("finetune", seed), fed.qa_population()))
    return phases


def summarize(spec: ExperimentSpec, seed: int, run: TrainingRun) -> dict:
    finetune = [r for r in run.records if r.phase == "finetune"]
    pretrain = [r for r in run.records if r.phase == "pretrain"]
    last = finetune[-1]
    return {
        "version": SUMMARY_VERSION,
        "label": spec.label(),
        "seed": seed,
        "config": spec.for_seed(seed).to_dict(),
        "clients": spec.K,
        "clients_per_round": {
            "pretrain": spec.phase_config("pretrain", seed).clients_per_round,
            "finetune": spec.phase_config("finetune", seed).clients_per_round,
        },
        "client_optimizer": "adam: bias-corrected, decoupled weight decay" if spec.client_optimizer == "adam" else "gd",
        "final_val_loss": last.val_loss,
        "final_score": last.two_step,
        "final_score_x100": 100.0 * last.two_step,
        "final_metrics": dict(last.metrics),
        "final_pretrain_loss": pretrain[-1].val_loss if pretrain else None,
        "rounds": len(run.records),
    }


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def run_one(spec: ExperimentSpec, seed: int, out_dir: Path, corpora=None) -> Path:
    t0 = time.perf_counter()
    phases = build_phases(spec, seed, corpora)
    run = run_phases(phases)
    datasets = phases[-1].population.datasets
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(_dump(spec.for_seed(seed).to_dict()), encoding="utf-8")
    (out_dir / "rounds.csv").write_text(records_to_csv(run.records, datasets), encoding="utf-8")
    (out_dir / "summary.json").write_text(_dump(summarize(spec, seed, run)), encoding="utf-8")
    (out_dir / "timing.json").write_text(_dump({"wall_time_s": time.perf_counter() - t0}), encoding="utf-8")
    return out_dir


def run_experiment(spec: ExperimentSpec) -> list[Path]:
    """Run every seed of ``spec`` under ``spec.out/<label>/seed-<s>``."""
    corpora = load_corpora(spec)
    dirs = []
    for seed in spec.seeds:
        out_dir = Path(spec.out) / spec.label() / f"seed-{seed}"
        log.info("running %s seed %d -> %s", spec.label(), seed, out_dir)
        dirs.append(run_one(spec, seed, out_dir, corpora))
    return dirs


def run_grid(spec: ExperimentSpec, fractions: Iterable[float]) -> list[Path]:
    """Same spec with the client fraction of both phases swept over ``fractions``."""
    dirs = []
    for c in fractions:
        dirs += run_experiment(replace(spec, fraction_pretrain=c, fraction_finetune=c))
    return dirs


def rerun_from_config(config_path: str | Path, out_dir: str | Path) -> Path:
    data = json.loads(Path(config_path).read_text(encoding="utf-8"))
    spec = ExperimentSpec.from_dict(data)
    return run_one(spec, spec.seeds[0], Path(out_dir))


# --- comparison ----------------------------------------------------------

LOWER_IS_BETTER = {"final_val_loss", "final_pretrain_loss"}


@dataclass
class ComparisonRow:
    label: str
    median: float
    values: dict[int, float] = field(default_factory=dict)
    rank: int = 0


def compare_runs(run_dirs: Sequence[str | Path], metric: str = "final_val_loss") -> list[ComparisonRow]:
    """Median of ``metric`` per configuration label, ranked best first; equal
    medians share a rank."""
    if not run_dirs:
        raise DomainError("no runs to compare")
    groups: dict[str, dict[int, float]] = {}
    for d in run_dirs:
        path = Path(d) / "summary.json"
        if not path.exists():
            raise DomainError(f"missing run summary {path}")
        summary = json.loads(path.read_text(encoding="utf-8"))
        if metric not in summary or summary[metric] is None:
            raise DomainError(f"{path} has no metric {metric!r}")
        groups.setdefault(summary["label"], {})[summary["seed"]] = float(summary[metric])
    rows = [ComparisonRow(label, statistics.median(vals.values()), dict(sorted(vals.items()))) for label, vals in groups.items()]
    sign = 1.0 if metric in LOWER_IS_BETTER else -1.0
    rows.sort(key=lambda r: (sign * r.median, r.label))
    rank, prev = 0, None
    for i, row in enumerate(rows, start=1):
        if row.median != prev:
            rank, prev = i, row.median
        row.rank = rank
    return rows


def format_comparison(rows: Sequence[ComparisonRow], metric: str) -> str:
    lines = [f"rank\tmedian {metric}\tconfiguration\tper-seed"]
    for r in rows:
        per_seed = ", ".join(f"{s}:{v:.6g}" for s, v in r.values.items())
        lines.append(f"{r.rank}\t{r.median:.6g}\t{r.label}\t{per_seed}")
    return "\n".join(lines) + "\n"
