"""Command-line entry point.

Exit codes: 0 success, 2 usage / invalid configuration, 3 numeric divergence.
Log verbosity comes from ``FEDOCVQA_LOG`` (e.g. ``INFO``, ``DEBUG``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .core import DomainError, NumericError
from .fsp import Discretizer, compile_corpus, read_documents
from .harness import (
    ExperimentSpec,
    compare_runs,
    format_comparison,
    rerun_from_config,
    run_experiment,
    run_grid,
)
from .metrics import read_predictions, two_step_average
from .orchestrator import ClientTrainingError
from .partition import (
    manifest_corpus,
    partition,
    plans_to_json,
    read_manifest,
    scenario,
    synthetic_manifest,
    write_manifest,
    DatasetDescriptor,
    DATASETS,
    SCENARIOS,
)

EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in _csv_list(text)]


def _ints(text: str) -> list[int]:
    return [int(t) for t in _csv_list(text)]


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="re-run from a config.json echo (other experiment flags ignored)")
    p.add_argument("--scenario", choices=["k3", "k10", "k30", "custom"], default="k3")
    p.add_argument("--clients", type=_ints, default=[], help="custom per-dataset client counts, e.g. 2,13,15")
    p.add_argument("--fraction-pretrain", type=float, default=1.0)
    p.add_argument("--fraction-finetune", type=float, default=1.0)
    p.add_argument("--rounds-pretrain", type=int, default=10)
    p.add_argument("--rounds-finetune", type=int, default=10)
    p.add_argument("--server-opt", choices=["fedavg", "fedavgm", "fedadam"], default="fedavg",
                   help="server optimizer for both phases")
    p.add_argument("--server-opt-finetune", choices=["fedavg", "fedavgm", "fedadam"],
                   help="override for the finetuning phase")
    p.add_argument("--adaptive-pretrain-only", action="store_true",
                   help="preset: --server-opt applies to pretraining, finetuning uses fedavg")
    p.add_argument("--aggregation", choices=["literal", "normalized"], default="literal")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr-client", type=float, default=0.0005)
    p.add_argument("--lr-server", type=float, default=0.001)
    p.add_argument("--seed", type=_ints, default=[0], help="one seed or a comma-separated list")
    p.add_argument("--out", default="runs")
    p.add_argument("--manifest", help="partitioner manifest (dataset, doc_id, question_count)")
    p.add_argument("--objectives", type=_csv_list, default=["tm", "lm", "tlm"])
    p.add_argument("--heterogeneity", type=float, default=1.0)
    p.add_argument("--count", choices=["questions", "documents"], default="questions")
    p.add_argument("--corpus-scale", type=float, default=0.01)
    p.add_argument("--workers", type=int, default=1)


def _spec_from_args(args) -> ExperimentSpec:
    ft_opt = args.server_opt_finetune or ("fedavg" if args.adaptive_pretrain_only else args.server_opt)
    return ExperimentSpec(
        scenario=args.scenario,
        clients=tuple(args.clients),
        fraction_pretrain=args.fraction_pretrain,
        fraction_finetune=args.fraction_finetune,
        rounds_pretrain=args.rounds_pretrain,
        rounds_finetune=args.rounds_finetune,
        server_opt_pretrain=args.server_opt,
        server_opt_finetune=ft_opt,
        aggregation=args.aggregation,
        epochs=args.epochs,
        batch_size=args.batch_size,
        eta_l=args.lr_client,
        eta_s=args.lr_server,
        objectives=tuple(o.upper() for o in args.objectives),
        heterogeneity=args.heterogeneity,
        count=args.count,
        corpus_scale=args.corpus_scale,
        manifest=args.manifest,
        seeds=tuple(args.seed),
        workers=args.workers,
        out=args.out,
    )


def cmd_run(args) -> int:
    if args.config:
        out = rerun_from_config(args.config, args.out)
        print(out)
        return 0
    for d in run_experiment(_spec_from_args(args)):
        print(d)
    return 0


def cmd_grid(args) -> int:
    for d in run_grid(_spec_from_args(args), args.fractions):
        print(d)
    return 0


def cmd_compare(args) -> int:
    rows = compare_runs(args.runs, args.metric)
    sys.stdout.write(format_comparison(rows, args.metric))
    return 0


def cmd_partition(args) -> int:
    if args.manifest:
        with open(args.manifest, encoding="utf-8") as fh:
            corpus = manifest_corpus(read_manifest(fh))
    else:
        corpus = manifest_corpus(synthetic_manifest())
    if args.scenario == "custom":
        if len(args.clients) != len(DATASETS):
            raise DomainError("--clients needs one count per dataset")
        descriptors = [DatasetDescriptor(n, tuple(corpus[n]), corpus[n], k) for n, k in zip(DATASETS, args.clients)]
    else:
        descriptors = scenario(int(args.scenario[1:]), corpus)
    sys.stdout.write(plans_to_json(partition(descriptors, args.seed)) + "\n")
    return 0


def cmd_manifest(args) -> int:
    sys.stdout.write(write_manifest(synthetic_manifest(seed=args.seed)))
    return 0


def cmd_compile(args) -> int:
    objectives = [o.upper() for o in args.objectives]
    with open(args.manifest, encoding="utf-8") as fh:
        docs = list(read_documents(fh))
    for pair in compile_corpus(docs, objectives, args.seed, Discretizer(args.vocab_size)):
        sys.stdout.write(pair.to_line() + "\n")
    return 0


def cmd_score(args) -> int:
    src = open(args.predictions, encoding="utf-8") if args.predictions != "-" else sys.stdin
    with src:
        report = two_step_average(read_predictions(src), tau=args.tau)
    sys.stdout.write(report.to_json() + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedocvqa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment (all seeds)")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="sweep the client fraction of both phases")
    _add_experiment_flags(p)
    p.add_argument("--fractions", type=_floats, default=[0.35, 0.7, 1.0])
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("compare", help="median final metric per configuration")
    p.add_argument("runs", nargs="+")
    p.add_argument("--metric", default="final_val_loss")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("partition", help="write a JSON shard plan")
    p.add_argument("--manifest")
    p.add_argument("--scenario", choices=[f"k{k}" for k in SCENARIOS] + ["custom"], default="k3")
    p.add_argument("--clients", type=_ints, default=[])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("manifest", help="write a synthetic train-split manifest")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("compile", help="compile documents into input<TAB>target sequence pairs")
    p.add_argument("--manifest", required=True, help="JSON-lines documents with tokens and boxes")
    p.add_argument("--objectives", type=_csv_list, default=["tm", "lm", "tlm"])
    p.add_argument("--vocab-size", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("score", help="score dataset<TAB>prediction<TAB>gold1|gold2 records")
    p.add_argument("predictions", help="file path or - for stdin")
    p.add_argument("--tau", type=float, default=0.5)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FEDOCVQA_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ClientTrainingError as exc:
        if exc.numeric:
            print(f"error: diverged in {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DomainError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
