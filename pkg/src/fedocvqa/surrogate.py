"""Desk-scale stand-in for the document QA model.

Documents are single-topic bags of words drawn from per-dataset topic tables;
``heterogeneity`` pulls each dataset's tables away from shared ones.
Both training tasks are linear maps from a bag-of-tokens feature vector to a
bag-of-tokens target and share the same weight matrix:

* self-pretraining: masked-sequence input -> masked-sequence target
  (pairs compiled by :mod:`fedocvqa.fsp`);
* QA: question + document tokens -> answer token.

Answers are decoded by scoring candidate tokens, so the QA task also yields
ANLS / accuracy through :mod:`fedocvqa.metrics`.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .client import ClientShard, LinearMapObjective
from .core import DomainError
from .fsp import OBJECTIVES, Discretizer, DocumentExample, SequencePair, compile_example, sentinel_kind
from .metrics import DATASET_METRICS, EvalExample, two_step_average, two_step_scores
from .orchestrator import Evaluation, Population
from .partition import DATASETS, ClientShardPlan

SENTINEL_KINDS = ("text", "layout", "/layout", "text_layout", "loc")


def _stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


TASKS = ("TM", "LM", "TLM", "QA")


@dataclass(frozen=True)
class Featurizer:
    """Bag-of-tokens features: words hash into ``word_buckets`` slots, each
    sentinel kind gets one reserved slot. Inputs additionally carry a one-hot
    task indicator so per-task constant output mass has its own weights."""

    word_buckets: int = 32

    @property
    def dim(self) -> int:
        return self.word_buckets + len(SENTINEL_KINDS)

    @property
    def input_dim(self) -> int:
        return self.dim + len(TASKS)

    def index(self, token: str) -> int:
        kind = sentinel_kind(token)
        if kind is None:
            return _stable_hash(token) % self.word_buckets
        name, closing, _ = kind
        return self.word_buckets + SENTINEL_KINDS.index(("/" if closing else "") + name)

    def bag(self, tokens: Sequence[str]) -> np.ndarray:
        """Token frequencies (sums to 1; all zeros for an empty sequence)."""
        out = np.zeros(self.dim)
        for tok in tokens:
            out[self.index(tok)] += 1.0
        if tokens:
            out /= len(tokens)
        return out

    def inputs(self, tokens: Sequence[str], task: str) -> np.ndarray:
        if task not in TASKS:
            raise DomainError(f"unknown task {task!r}")
        out = np.zeros(self.input_dim)
        out[: self.dim] = self.bag(tokens)
        out[self.dim + TASKS.index(task)] = 1.0
        return out


@dataclass(frozen=True)
class QAExample:
    dataset: str
    doc_id: str
    question: tuple[str, ...]
    context: tuple[str, ...]
    answer: str
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class CorpusModel:
    datasets: tuple[str, ...]
    words: tuple[str, ...]
    topic_prior: np.ndarray  # (n_datasets, n_topics)
    topic_words: np.ndarray  # (n_datasets, n_topics, n_words)
    heterogeneity: float
    seed: int
    doc_length: tuple[int, int] = (8, 16)

    def dataset_index(self, name: str) -> int:
        try:
            return self.datasets.index(name)
        except ValueError:
            raise DomainError(f"corpus model has no dataset {name!r}") from None


def make_corpus_model(
    heterogeneity: float = 1.0,
    datasets: Sequence[str] = DATASETS,
    n_words: int = 24,
    n_topics: int = 6,
    seed: int = 0,
    concentration: float = 0.1,
) -> CorpusModel:
    """Single-topic documents. Each dataset mixes the shared topic prior and
    topic-word tables with its own, weight ``h / (1 + h)``."""
    if heterogeneity < 0:
        raise DomainError("heterogeneity must be >= 0")
    lam = heterogeneity / (1.0 + heterogeneity)
    base = np.random.default_rng([seed, 0])
    alpha = np.full(n_words, concentration)
    phi0 = base.dirichlet(alpha, size=n_topics)
    prior0 = base.dirichlet(np.ones(n_topics))
    priors, phis = [], []
    for c in range(len(datasets)):
        r = np.random.default_rng([seed, 1, c])
        phis.append((1.0 - lam) * phi0 + lam * r.dirichlet(alpha, size=n_topics))
        priors.append((1.0 - lam) * prior0 + lam * r.dirichlet(np.full(n_topics, 0.5)))
    words = tuple(f"w{i:02d}" for i in range(n_words))
    return CorpusModel(tuple(datasets), words, np.array(priors), np.array(phis), float(heterogeneity), seed)


def _doc_rng(model: CorpusModel, dataset: str, doc_id: str, stream: int) -> np.random.Generator:
    return np.random.default_rng([model.seed, 2 + stream, model.dataset_index(dataset), _stable_hash(doc_id)])


def generate_document(model: CorpusModel, dataset: str, doc_id: str) -> DocumentExample:
    """Draw a topic, then i.i.d. words from it, laid out left to right in rows."""
    c = model.dataset_index(dataset)
    rng = _doc_rng(model, dataset, doc_id, 0)
    lo, hi = model.doc_length
    j = int(rng.integers(lo, hi + 1))
    z = rng.choice(model.topic_prior.shape[1], p=model.topic_prior[c])
    ids = rng.choice(len(model.words), size=j, p=model.topic_words[c, z])
    per_row = 4
    n_rows = (j + per_row - 1) // per_row
    boxes = []
    for i in range(j):
        row, col = divmod(i, per_row)
        x0 = (col + 0.1 * rng.random()) / per_row
        x1 = min(1.0, x0 + (0.5 + 0.3 * rng.random()) / per_row)
        y0 = (row + 0.1 * rng.random()) / n_rows
        y1 = min(1.0, y0 + 0.6 / n_rows)
        boxes.append((x0, y0, x1, y1))
    return DocumentExample(tuple(model.words[i] for i in ids), tuple(boxes), image_ref=doc_id)


def generate_questions(model: CorpusModel, dataset: str, doc_id: str, doc: DocumentExample, n: int) -> list[QAExample]:
    """``n`` questions about one document.

    DocVQA asks for the word inside a region; that word is withheld from the
    context. WTQ asks for the most frequent word (first in reading order on
    ties). TabFact asks whether a word occurs, answered yes/no.
    """
    rng = _doc_rng(model, dataset, doc_id, 1)
    toks = doc.tokens
    out = []
    for _ in range(n):
        if dataset == "TabFact":
            w = model.words[int(rng.integers(len(model.words)))]
            q, ctx = ("q:has", w), toks
            ans, cands = ("yes" if w in toks else "no"), ("yes", "no")
        elif dataset == "WTQ":
            q, ctx = ("q:most",), toks
            freq = {t: toks.count(t) for t in dict.fromkeys(toks)}
            ans = max(freq, key=freq.get)
            cands = model.words
        else:
            i = int(rng.integers(len(toks)))
            q = ("q:region",)
            ctx = toks[:i] + toks[i + 1:]
            ans, cands = toks[i], model.words
        out.append(QAExample(dataset, doc_id, q, ctx, ans, cands))
    return out


class SequenceDenoisingObjective(LinearMapObjective):
    """Reconstruct the target bag of a masked sequence pair from its input bag."""

    def __init__(self, pairs: Sequence[SequencePair], featurizer: Featurizer, tasks: Sequence[str]):
        if not pairs or len(pairs) != len(tasks):
            raise DomainError("need one task label per sequence pair")
        X = np.array([featurizer.inputs(p.input, task) for p, task in zip(pairs, tasks)])
        Y = np.array([featurizer.bag(p.target) for p in pairs])
        super().__init__(X, Y)
        self.pairs = list(pairs)


class QASurrogateObjective(LinearMapObjective):
    """Predict the answer token's slot from the bag of question + document tokens."""

    def __init__(self, examples: Sequence[QAExample], featurizer: Featurizer):
        if not examples:
            raise DomainError("no QA examples")
        X = np.array([featurizer.inputs(e.question + e.context, "QA") for e in examples])
        Y = np.array([featurizer.bag((e.answer,)) for e in examples])
        super().__init__(X, Y)
        self.examples = list(examples)
        self.featurizer = featurizer

    def example_losses(self, theta) -> np.ndarray:
        R = self.predict(theta) - self.Y
        return 0.5 * np.sum(R * R, axis=1)

    def decode(self, theta) -> list[str]:
        scores = self.predict(theta)
        preds = []
        for row, ex in zip(scores, self.examples):
            vals = [row[self.featurizer.index(c)] for c in ex.candidates]
            preds.append(ex.candidates[int(np.argmax(vals))])
        return preds


@dataclass
class DocumentFederation:
    """Client shards over generated documents, with both task objectives per client."""

    model: CorpusModel
    plans: list[ClientShardPlan]
    documents: dict[str, DocumentExample]
    questions: dict[str, list[QAExample]]
    featurizer: Featurizer
    val_qa: dict[str, QASurrogateObjective]
    val_fsp: dict[str, SequenceDenoisingObjective]
    objectives: tuple[str, ...]
    count: str = "questions"
    seed: int = 0

    @property
    def datasets(self) -> tuple[str, ...]:
        return tuple(sorted({p.dataset for p in self.plans}))

    def _n_k(self, plan: ClientShardPlan) -> int:
        if self.count == "documents":
            return plan.n_documents
        return sum(len(self.questions[d]) for d in plan.doc_ids)

    def qa_population(self) -> Population:
        shards = []
        for p in self.plans:
            exs = [e for d in p.doc_ids for e in self.questions[d]]
            shards.append(ClientShard(p.client_id, QASurrogateObjective(exs, self.featurizer), self._n_k(p), p.dataset, p.doc_ids))
        return Population(shards, evaluator=self.evaluate_qa, datasets=self.datasets)

    def fsp_population(self) -> Population:
        if not self.objectives:
            raise DomainError("no pretraining objectives selected")
        shards = []
        for p in self.plans:
            obj = denoising_objective([(d, self.documents[d]) for d in p.doc_ids], self.objectives, self.seed, self.featurizer)
            shards.append(ClientShard(p.client_id, obj, self._n_k(p), p.dataset, p.doc_ids))
        return Population(shards, evaluator=self.evaluate_fsp, datasets=self.datasets)

    def qa_report(self, theta):
        losses, examples = {}, []
        for name, obj in self.val_qa.items():
            losses[name] = obj.example_losses(theta)
            for ex, pred in zip(obj.examples, obj.decode(theta)):
                examples.append(EvalExample(name, pred, (ex.answer,), DATASET_METRICS.get(name, "anls")))
        return two_step_scores(losses), two_step_average(examples)

    def evaluate_qa(self, theta) -> Evaluation:
        loss_report, score_report = self.qa_report(theta)
        return Evaluation(loss_report.final, score_report.per_dataset, score_report.final)

    def evaluate_fsp(self, theta) -> Evaluation:
        per = {}
        for name, obj in self.val_fsp.items():
            R = obj.predict(theta) - obj.Y
            per[name] = 0.5 * np.sum(R * R, axis=1)
        _, score_report = self.qa_report(theta)
        return Evaluation(two_step_scores(per).final, score_report.per_dataset, score_report.final)


def compile_pairs(
    docs: Sequence[tuple[str, DocumentExample]], objectives: Sequence[str], seed: int
) -> tuple[list[SequencePair], list[str]]:
    """Pairs for every (document, objective), with the objective of each pair.
    Mask draws are keyed on the document id."""
    disc = Discretizer()
    pairs, tasks = [], []
    for doc_id, doc in docs:
        for obj in objectives:
            rng = np.random.default_rng([seed, _stable_hash(doc_id), OBJECTIVES.index(obj)])
            pairs.append(compile_example(doc, obj, rng, disc))
            tasks.append(obj)
    return pairs, tasks


def denoising_objective(
    docs: Sequence[tuple[str, DocumentExample]], objectives: Sequence[str], seed: int, featurizer: Featurizer
) -> SequenceDenoisingObjective:
    pairs, tasks = compile_pairs(docs, objectives, seed)
    return SequenceDenoisingObjective(pairs, featurizer, tasks)


def build_document_federation(
    model: CorpusModel,
    plans: Sequence[ClientShardPlan],
    questions_per_doc: Mapping[str, int],
    val_corpus: Mapping[str, Mapping[str, int]],
    objectives: Sequence[str] = OBJECTIVES,
    featurizer: Featurizer | None = None,
    count: str = "questions",
    seed: int = 0,
) -> DocumentFederation:
    """Materialize documents and questions for every planned shard.

    ``questions_per_doc`` maps doc id to its question count (at least one is
    generated per document); ``val_corpus`` maps dataset name to the same for
    held-out documents.
    """
    feat = featurizer or Featurizer()
    documents, questions = {}, {}
    for p in plans:
        for d in p.doc_ids:
            doc = generate_document(model, p.dataset, d)
            documents[d] = doc
            questions[d] = generate_questions(model, p.dataset, d, doc, max(1, int(questions_per_doc.get(d, 1))))
    val_qa, val_fsp = {}, {}
    for name in sorted(val_corpus):
        exs, docs = [], []
        for d, nq in val_corpus[name].items():
            doc = generate_document(model, name, d)
            docs.append((d, doc))
            exs += generate_questions(model, name, d, doc, max(1, int(nq)))
        val_qa[name] = QASurrogateObjective(exs, feat)
        val_fsp[name] = denoising_objective(docs, objectives or OBJECTIVES, 0, feat)
    return DocumentFederation(
        model=model,
        plans=list(plans),
        documents=documents,
        questions=questions,
        featurizer=feat,
        val_qa=val_qa,
        val_fsp=val_fsp,
        objectives=tuple(objectives),
        count=count,
        seed=seed,
    )

