"""Non-IID client population: each source dataset's documents are shuffled and
dealt evenly, disjointly, to that dataset's clients.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import DomainError

DATASETS = ("WTQ", "DocVQA", "TabFact")

# clients per dataset (WTQ, DocVQA, TabFact) for each population size
SCENARIOS = {3: (1, 1, 1), 10: (1, 4, 5), 30: (2, 13, 15)}

# train split: exact document counts, question counts matching the rounded totals
TRAIN_DOCUMENTS = {"WTQ": 1346, "DocVQA": 10194, "TabFact": 13163}
TRAIN_QUESTIONS = {"WTQ": 14152, "DocVQA": 39463, "TabFact": 91835}


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    doc_ids: tuple[str, ...]
    questions: Mapping[str, int]
    n_clients: int

    @property
    def n_documents(self) -> int:
        return len(self.doc_ids)


@dataclass(frozen=True)
class ClientShardPlan:
    client_id: int
    dataset: str
    doc_ids: tuple[str, ...]
    n_questions: int
    # number of the dataset's shards that received one extra document
    remainder_shards: int = 0

    @property
    def n_documents(self) -> int:
        return len(self.doc_ids)

    def n_k(self, count: str = "questions") -> int:
        if count == "questions":
            return self.n_questions
        if count == "documents":
            return self.n_documents
        raise DomainError(f"unknown count mode {count!r}")


def _split_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + 1 if i < extra else base for i in range(k)]


def partition(descriptors: Sequence[DatasetDescriptor], seed: int) -> list[ClientShardPlan]:
    """Shuffle each dataset with a seed-derived stream, then deal contiguous
    chunks; the earliest shards take the remainder. Client ids run in dataset
    order, then shard order."""
    plans: list[ClientShardPlan] = []
    for d_index, desc in enumerate(descriptors):
        n = desc.n_documents
        if desc.n_clients < 1:
            raise DomainError(f"{desc.name}: needs at least one client")
        if desc.n_clients > n:
            raise DomainError(f"{desc.name}: {desc.n_clients} clients for only {n} documents")
        rng = np.random.default_rng([seed, d_index])
        order = rng.permutation(n)
        start = 0
        extra = n % desc.n_clients
        for size in _split_sizes(n, desc.n_clients):
            docs = tuple(desc.doc_ids[i] for i in order[start:start + size])
            start += size
            plans.append(
                ClientShardPlan(
                    client_id=len(plans),
                    dataset=desc.name,
                    doc_ids=docs,
                    n_questions=sum(int(desc.questions.get(doc, 0)) for doc in docs),
                    remainder_shards=extra,
                )
            )
    return plans


def scenario_allocation(k: int) -> dict[str, int]:
    if k not in SCENARIOS:
        raise DomainError(f"no preset allocation for K={k}; expected one of {sorted(SCENARIOS)}")
    return dict(zip(DATASETS, SCENARIOS[k]))


def scenario(k: int, corpus: Mapping[str, Mapping[str, int]] | None = None) -> list[DatasetDescriptor]:
    """Descriptors for the preset K in {3, 10, 30}.

    ``corpus`` maps dataset name to ``{doc_id: question_count}``; by default a
    synthetic manifest with the train-split cardinalities is used.
    """
    alloc = scenario_allocation(k)
    if corpus is None:
        corpus = manifest_corpus(synthetic_manifest())
    missing = [name for name in DATASETS if name not in corpus]
    if missing:
        raise DomainError(f"corpus lacks datasets {missing}")
    return [
        DatasetDescriptor(name, tuple(corpus[name]), dict(corpus[name]), alloc[name])
        for name in DATASETS
    ]


# --- manifests -----------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    dataset: str
    doc_id: str
    question_count: int


def read_manifest(lines: Iterable[str]) -> list[ManifestRecord]:
    """Parse ``dataset_name, doc_id, question_count`` lines."""
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise DomainError(f"manifest line {lineno}: expected 3 comma-separated fields")
        try:
            count = int(parts[2])
        except ValueError:
            raise DomainError(f"manifest line {lineno}: bad question count {parts[2]!r}") from None
        if count < 0:
            raise DomainError(f"manifest line {lineno}: negative question count")
        records.append(ManifestRecord(parts[0], parts[1], count))
    return records


def write_manifest(records: Iterable[ManifestRecord]) -> str:
    return "".join(f"{r.dataset}, {r.doc_id}, {r.question_count}\n" for r in records)


def manifest_corpus(records: Iterable[ManifestRecord]) -> dict[str, dict[str, int]]:
    corpus: dict[str, dict[str, int]] = {}
    for r in records:
        docs = corpus.setdefault(r.dataset, {})
        if r.doc_id in docs:
            raise DomainError(f"duplicate document {r.dataset}/{r.doc_id}")
        docs[r.doc_id] = r.question_count
    return corpus


def synthetic_manifest(
    documents: Mapping[str, int] = TRAIN_DOCUMENTS,
    questions: Mapping[str, int] = TRAIN_QUESTIONS,
    seed: int = 0,
) -> list[ManifestRecord]:
    """Manifest with the given document/question totals per dataset.

    Every document gets at least one question; the rest are spread by a seeded
    multinomial draw.
    """
    records = []
    for d_index, name in enumerate(documents):
        n_docs, n_q = int(documents[name]), int(questions[name])
        if n_q < n_docs:
            raise DomainError(f"{name}: fewer questions than documents")
        rng = np.random.default_rng([seed, d_index])
        counts = 1 + rng.multinomial(n_q - n_docs, np.full(n_docs, 1.0 / n_docs))
        width = len(str(n_docs - 1))
        records += [
            ManifestRecord(name, f"{name.lower()}-{i:0{width}d}", int(c)) for i, c in enumerate(counts)
        ]
    return records


def plans_to_json(plans: Sequence[ClientShardPlan]) -> str:
    return json.dumps([asdict(p) for p in plans], indent=1)


def plans_from_json(text: str) -> list[ClientShardPlan]:
    return [ClientShardPlan(**{**rec, "doc_ids": tuple(rec["doc_ids"])}) for rec in json.loads(text)]
