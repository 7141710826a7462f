import json
from pathlib import Path

import pytest

from fedocvqa.cli import main
from fedocvqa.core import DomainError
from fedocvqa.harness import ExperimentSpec, compare_runs, format_comparison, rerun_from_config, run_experiment, run_grid

GOLDEN = Path(__file__).parent / "golden"


def tiny(tmp_path, **kw):
    base = dict(corpus_scale=0.002, rounds_pretrain=2, rounds_finetune=2, out=str(tmp_path / "runs"))
    base.update(kw)
    return ExperimentSpec(**base)


def test_spec_validation():
    with pytest.raises(DomainError):
        ExperimentSpec(scenario="k7")
    with pytest.raises(DomainError):
        ExperimentSpec(seeds=())
    with pytest.raises(DomainError):
        ExperimentSpec(scenario="custom", clients=(1, 2))
    with pytest.raises(DomainError):
        ExperimentSpec(fraction_finetune=0.0)
    with pytest.raises(DomainError):
        ExperimentSpec.from_dict({"bogus": 1})
    assert ExperimentSpec(scenario="custom", clients=(2, 13, 15)).K == 30


def test_run_writes_artifacts_and_golden_header(tmp_path):
    (d,) = run_experiment(tiny(tmp_path))
    assert {p.name for p in d.iterdir()} == {"config.json", "rounds.csv", "summary.json", "timing.json"}
    header = (d / "rounds.csv").read_text().splitlines()[0] + "\n"
    assert header == (GOLDEN / "rounds_header.csv").read_text()
    rows = (d / "rounds.csv").read_text().splitlines()[1:]
    assert [r.split(",")[1] for r in rows] == ["pretrain"] * 2 + ["finetune"] * 2
    summary = json.loads((d / "summary.json").read_text())
    assert summary["rounds"] == 4 and summary["final_pretrain_loss"] is not None


def test_no_pretraining_is_baseline(tmp_path):
    (d,) = run_experiment(tiny(tmp_path, rounds_pretrain=0))
    rows = (d / "rounds.csv").read_text().splitlines()[1:]
    assert all(r.split(",")[1] == "finetune" for r in rows)
    assert json.loads((d / "summary.json").read_text())["final_pretrain_loss"] is None
    assert "nofsp" in d.parent.name


def test_grid_emits_three_directories(tmp_path):
    dirs = run_grid(tiny(tmp_path), [0.35, 0.7, 1.0])
    assert len(dirs) == 3 and len({d.parent for d in dirs}) == 3


@pytest.mark.parametrize("workers", [1, 4])
def test_rerun_from_config_is_byte_identical(tmp_path, workers):
    (d,) = run_experiment(tiny(tmp_path, scenario="k10", fraction_pretrain=0.7, workers=workers))
    again = rerun_from_config(d / "config.json", tmp_path / "again")
    for name in ("config.json", "rounds.csv", "summary.json"):
        assert (d / name).read_bytes() == (again / name).read_bytes()


def test_compare_runs_ranks_and_ties(tmp_path):
    a = run_experiment(tiny(tmp_path, seeds=(0, 1)))
    b = run_experiment(tiny(tmp_path / "b", seeds=(0, 1)))
    c = run_experiment(tiny(tmp_path, rounds_pretrain=0, seeds=(0,)))
    rows = compare_runs(a + c)
    assert len(rows) == 2 and {r.rank for r in rows} <= {1, 2}
    assert len(rows[0].values) in (1, 2)
    # identical configurations collapse into one label with zero spread
    same = compare_runs(a + b)
    assert len(same) == 1 and same[0].rank == 1
    text = format_comparison(rows, "final_val_loss")
    assert text.count("\n") == 3
    with pytest.raises(DomainError):
        compare_runs([tmp_path / "missing"])


def test_compare_ties_share_rank(tmp_path):
    dirs = []
    for label, seed, value in (("x", 0, 1.0), ("y", 0, 1.0), ("z", 0, 2.0)):
        d = tmp_path / label
        d.mkdir()
        (d / "summary.json").write_text(json.dumps({"label": label, "seed": seed, "final_val_loss": value}))
        dirs.append(d)
    assert [(r.label, r.rank) for r in compare_runs(dirs)] == [("x", 1), ("y", 1), ("z", 3)]


def test_cli_exit_codes(tmp_path, capsys):
    common = ["--corpus-scale", "0.002", "--rounds-pretrain", "1", "--rounds-finetune", "1", "--out", str(tmp_path)]
    assert main(["run", *common]) == 0
    assert main(["run", *common, "--scenario", "custom", "--clients", "1,2"]) == 2
    assert main(["run", *common, "--objectives", "tm,xx"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "--server-opt", "sgd"])
    assert exc.value.code == 2
    # a huge client step makes local training overflow
    assert main(["run", *common, "--lr-client", "1e300", "--scenario", "k10"]) == 3
    assert "client" in capsys.readouterr().err


def test_cli_adaptive_pretrain_only(tmp_path, capsys):
    args = ["run", "--corpus-scale", "0.002", "--rounds-pretrain", "1", "--rounds-finetune", "1",
            "--server-opt", "fedadam", "--adaptive-pretrain-only", "--out", str(tmp_path)]
    assert main(args) == 0
    out = Path(capsys.readouterr().out.strip())
    cfg = json.loads((out / "config.json").read_text())
    assert (cfg["server_opt_pretrain"], cfg["server_opt_finetune"]) == ("fedadam", "fedavg")


def test_cli_partition_manifest_compile_score(tmp_path, capsys):
    assert main(["manifest"]) == 0
    manifest = tmp_path / "m.txt"
    manifest.write_text(capsys.readouterr().out)
    assert main(["partition", "--manifest", str(manifest), "--scenario", "k10"]) == 0
    plans = json.loads(capsys.readouterr().out)
    assert len(plans) == 10 and sum(p["dataset"] == "DocVQA" for p in plans) == 4

    docs = tmp_path / "docs.jsonl"
    docs.write_text('{"doc_id": "a", "tokens": ["Revenue", "2019"], "boxes": [[0.1, 0.2, 0.3, 0.25], [0.4, 0.2, 0.5, 0.25]]}\n')
    assert main(["compile", "--manifest", str(docs), "--objectives", "tlm", "--vocab-size", "100"]) == 0
    line = capsys.readouterr().out.rstrip("\n")
    assert line.count("\t") == 1

    preds = tmp_path / "p.tsv"
    preds.write_text("DocVQA\tbuilding\tbuildings\nTabFact\tyes\tyes\n")
    assert main(["score", str(preds)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["final"] == pytest.approx((8 / 9 + 1) / 2)
