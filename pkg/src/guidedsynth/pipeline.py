"""End-to-end experiment: corpus, training, guided and unguided resynthesis, evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import save_classifier, train_classifier
from .config import RunConfig
from .data import (
    CORPUS_FORMAT,
    build_phone_dictionary,
    build_duration_table,
    canonical_means,
    generate_corpus,
    record_script,
    save_corpus,
    save_dictionary,
)
from .evaluation import EvalReport, frame_error_rate, train_oracle
from .nn import CHECKPOINT_FORMAT
from .sampler import synthesize_batch
from .score_model import save_score_net, train_score

log = logging.getLogger(__name__)

SYNTH_FORMAT = "guidedsynth-synth/1"


@dataclass
class Models:
    corpus: object
    dictionary: object
    score_net: object
    classifier: object
    oracle: object
    duration_table: dict


def train_models(config: RunConfig, heldout=None) -> Models:
    seeds = config.seeds()
    inv = config.corpus.inventory()
    params = config.corpus.params()
    sched = config.schedule.build()
    corpus = generate_corpus(inv, config.corpus.n_healthy, config.corpus.utts_per_speaker, seeds["corpus"], params)
    dictionary = build_phone_dictionary(corpus)
    score_cfg = dataclasses.replace(config.score_training, seed=seeds["score"])
    net, _ = train_score(None, corpus, dictionary, sched, score_cfg)
    clf_cfg = dataclasses.replace(config.classifier_training, seed=seeds["classifier"])
    clf, _ = train_classifier(corpus.healthy(), sched, clf_cfg, dictionary=dictionary)
    if heldout is None:
        heldout = heldout_corpus(config)
    oracle = train_oracle(heldout, sched, dataclasses.replace(config.oracle_training, seed=seeds["oracle"]))
    return Models(corpus, dictionary, net, clf, oracle, build_duration_table(corpus))


def heldout_corpus(config: RunConfig):
    """Healthy speakers disjoint from the training corpus, for the oracle."""
    inv = config.corpus.inventory()
    return generate_corpus(
        inv,
        config.corpus.oracle_n_healthy,
        config.corpus.oracle_utts_per_speaker,
        config.seeds()["oracle_corpus"],
        config.corpus.params(),
    ).healthy()


def resynthesize(config: RunConfig, models: Models):
    """Four conditions over the target speaker's scripts.

    Returns ``{condition: [(frames, frame_labels), ...]}``. The source
    condition re-records the same scripts with healthy speaker 0; both
    synthetic conditions share prior noise chain by chain.
    """
    seeds = config.seeds()
    inv = config.corpus.inventory()
    sched = config.schedule.build()
    corpus = models.corpus
    target = corpus.target_speaker
    target_utts = corpus.target().utterances
    scripts = [(u.phone_seq, u.durations) for u in target_utts]
    out = {"recording_target": [(u.frames, u.frame_labels) for u in target_utts]}
    rng = np.random.default_rng(seeds["source_recording"])
    source = corpus.speaker(0)
    out["recording_source"] = [
        (record_script(source, inv, p, d, rng).frames, u.frame_labels) for (p, d), u in zip(scripts, target_utts)
    ]
    for condition, alpha in (("unguided", 0.0), ("guided", None)):
        gcfg = config.guidance.build(inv, alpha=alpha)
        frames, labels, _ = synthesize_batch(
            scripts, target, models.score_net, models.classifier, models.dictionary, sched, gcfg,
            seed=seeds["synth"], jobs=config.jobs,
        )
        out[condition] = list(zip(frames, labels))
    return out


def evaluate(config: RunConfig, models: Models, conditions) -> EvalReport:
    inv = config.corpus.inventory()
    canonical = canonical_means(inv, config.corpus.params())
    target_means = models.corpus.target_speaker.means
    items = [(c, f, lab) for c in ("recording_target", "recording_source", "unguided", "guided")
             for f, lab in conditions[c]]
    return frame_error_rate(items, models.oracle, inv.phones, canonical, target_means)


def run_replication(config: RunConfig):
    """Train, resynthesize and evaluate once; returns ``(report, models, conditions)``."""
    models = train_models(config)
    conditions = resynthesize(config, models)
    return evaluate(config, models, conditions), models, conditions


def replication_summary(report: EvalReport, inventory):
    imp = set(inventory.impaired_set)
    non = set(inventory.phones) - imp
    return {
        c: {"all": report.rate(c), "impaired": report.rate(c, imp), "non_impaired": report.rate(c, non)}
        for c in report.conditions()
    }


def condition_ordering_holds(report: EvalReport) -> bool:
    r = {c: report.rate(c) for c in report.conditions()}
    return r["recording_target"] > r["unguided"] >= r["guided"] > r["recording_source"]


def _write_synth(path, condition, items):
    with open(path, "w") as fh:
        for frames, labels in items:
            fh.write(json.dumps({"condition": condition, "frame_labels": list(labels),
                                 "frames": np.asarray(frames).tolist()}) + "\n")


def run_pipeline(config: RunConfig, run_dir) -> EvalReport:
    """Full experiment with every artifact and the resolved config under ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    stage = "setup"
    t0 = time.perf_counter()
    try:
        (run_dir / "config.json").write_text(config.to_json() + "\n")
        meta = {
            "package_version": __version__,
            "root_seed": config.seed,
            "seeds": config.seeds(),
            "formats": {"corpus": CORPUS_FORMAT, "checkpoint": CHECKPOINT_FORMAT, "synth": SYNTH_FORMAT},
        }
        (run_dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        stage = "gen-corpus"
        heldout = heldout_corpus(config)
        stage = "train"
        models = train_models(config, heldout)
        save_corpus(models.corpus, run_dir / "corpus")
        save_corpus(heldout, run_dir / "corpus" / "heldout")
        save_dictionary(models.dictionary, run_dir / "dict.json")
        save_score_net(models.score_net, run_dir / "score.json", config.score_training, config.seeds()["score"])
        save_classifier(models.classifier, run_dir / "classifier.json", config.classifier_training,
                        config.seeds()["classifier"])
        save_classifier(models.oracle, run_dir / "oracle.json", config.oracle_training, config.seeds()["oracle"])
        stage = "synth"
        conditions = resynthesize(config, models)
        synth_dir = run_dir / "synth"
        synth_dir.mkdir(exist_ok=True)
        for condition, items in conditions.items():
            _write_synth(synth_dir / f"{condition}.jsonl", condition, items)
        stage = "eval"
        report = evaluate(config, models, conditions)
        report.to_csv(run_dir / "report.csv")
    except Exception as exc:
        exc.stage = stage
        log.error("pipeline failed during %s: %s", stage, exc)
        raise
    log.info("pipeline finished in %.1f s", time.perf_counter() - t0)
    return report
