import json

import pytest

from guidedsynth.config import load_config
from guidedsynth.errors import NumericError
from guidedsynth.evaluation import CONDITIONS, EvalReport
from guidedsynth.pipeline import run_pipeline, condition_ordering_holds

TINY = {
    "corpus.n_healthy": 2,
    "corpus.utts_per_speaker": 6,
    "corpus.oracle_n_healthy": 2,
    "corpus.oracle_utts_per_speaker": 6,
    "score_training.steps": 60,
    "score_training.hidden": [16],
    "classifier_training.steps": 60,
    "classifier_training.hidden": [16],
    "oracle_training.steps": 60,
    "oracle_training.hidden": [16],
    "guidance.n_steps": 5,
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = load_config(None, TINY)
    out = tmp_path_factory.mktemp("run")
    return cfg, out, run_pipeline(cfg, out)


def test_run_directory_contents(tiny_run):
    cfg, out, report = tiny_run
    for name in ("config.json", "metadata.json", "report.csv", "dict.json", "score.json", "classifier.json",
                 "oracle.json", "corpus/meta.json", "corpus/heldout/corpus.jsonl"):
        assert (out / name).exists(), name
    for cond in CONDITIONS:
        assert (out / "synth" / f"{cond}.jsonl").exists()
    assert set(report.conditions()) == set(CONDITIONS)
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seeds"] == cfg.seeds() and meta["root_seed"] == cfg.seed
    assert set(meta["formats"]) == {"corpus", "checkpoint", "synth"}


def test_run_directory_reproduces_itself(tiny_run, tmp_path):
    cfg, out, _ = tiny_run
    again = load_config(out / "config.json")
    assert again == cfg
    run_pipeline(again, tmp_path)
    assert (tmp_path / "report.csv").read_bytes() == (out / "report.csv").read_bytes()
    assert EvalReport.from_csv(out / "report.csv").to_csv() == (out / "report.csv").read_text()


def test_jobs_do_not_change_the_report(tiny_run, tmp_path):
    cfg, out, _ = tiny_run
    run_pipeline(load_config(None, {**TINY, "jobs": 3}), tmp_path)
    assert (tmp_path / "report.csv").read_bytes() == (out / "report.csv").read_bytes()


def test_ordering_helper(tiny_run):
    _, _, report = tiny_run
    r = {c: report.rate(c) for c in CONDITIONS}
    assert condition_ordering_holds(report) == (r["recording_target"] > r["unguided"] >= r["guided"]
                                            > r["recording_source"])


def test_errors_carry_their_stage(tmp_path):
    cfg = load_config(None, {**TINY, "score_training.lr": 1e6, "score_training.clip": None})
    with pytest.raises(NumericError) as info:
        run_pipeline(cfg, tmp_path)
    assert info.value.stage == "train"
