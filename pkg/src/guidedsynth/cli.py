"""Command-line entry point: ``guidedsynth <subcommand> ...``.

Exit codes: 0 success, 1 failed checks, 2 usage or input error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .classifier import FrameWeights, load_classifier, save_classifier, train_classifier
from .config import RunConfig, derive_seed, load_config
from .data import (
    build_duration_table,
    build_phone_dictionary,
    canonical_means,
    generate_corpus,
    load_corpus,
    load_dictionary,
    predict_durations,
    save_corpus,
    save_dictionary,
)
from .errors import GuidedSynthError, NumericError
from .evaluation import frame_error_rate
from .nn import load_checkpoint
from .pipeline import heldout_corpus, replication_summary, run_pipeline
from .sampler import SAMPLER_KINDS, GuidanceConfig, synthesize
from .score_model import load_score_net, save_score_net, train_score
from .verify import run_checks

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("guidedsynth")


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise GuidedSynthError(f"--set expects key=value, got {item!r}")
        out[key] = _parse_value(value)
    return out


def _config(args) -> RunConfig:
    overrides = _overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    return load_config(getattr(args, "config", None), overrides)


def _parent(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen_corpus(args):
    cfg = _config(args)
    seeds = cfg.seeds()
    corpus = generate_corpus(
        cfg.corpus.inventory(), cfg.corpus.n_healthy, cfg.corpus.utts_per_speaker, seeds["corpus"], cfg.corpus.params()
    )
    out = Path(args.out)
    save_corpus(corpus, out)
    save_corpus(heldout_corpus(cfg), out / "heldout")
    save_dictionary(build_phone_dictionary(corpus), out / "dict.json")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    _dump({"out": str(out), "utterances": len(corpus.utterances), "seed": cfg.seed})
    return EXIT_OK


def cmd_train_score(args):
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    dictionary = build_phone_dictionary(corpus)
    seed = derive_seed(cfg.seed, "score")
    tcfg = dataclasses.replace(cfg.score_training, seed=seed)
    if args.steps is not None:
        tcfg = dataclasses.replace(tcfg, steps=args.steps)
    sched = cfg.schedule.build()
    net, losses = train_score(None, corpus, dictionary, sched, tcfg)
    extra = {
        "speakers": {str(s.id): s.kind for s in corpus.speakers},
        "target_speaker": corpus.target_speaker.id,
        "impaired": list(corpus.inventory.impaired_set),
        "duration_table": build_duration_table(corpus),
    }
    _parent(args.out)
    save_score_net(net, args.out, tcfg, seed, extra)
    _dump({"out": args.out, "steps": tcfg.steps, "final_loss": float(np.mean(losses[-50:]))})
    return EXIT_OK


def cmd_train_classifier(args):
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    if args.healthy_only:
        corpus = corpus.healthy()
    section = cfg.oracle_training if args.clean else cfg.classifier_training
    seed = derive_seed(cfg.seed, "oracle" if args.clean else "classifier")
    tcfg = dataclasses.replace(section, seed=seed, noise_conditional=not args.clean)
    if args.steps is not None:
        tcfg = dataclasses.replace(tcfg, steps=args.steps)
    dictionary = None if args.clean else build_phone_dictionary(load_corpus(args.corpus))
    clf, losses = train_classifier(corpus, cfg.schedule.build(), tcfg, dictionary=dictionary)
    _parent(args.out)
    save_classifier(clf, args.out, tcfg, seed, {"impaired": list(corpus.inventory.impaired_set)})
    _dump({"out": args.out, "steps": tcfg.steps, "final_loss": float(np.mean(losses[-50:]))})
    return EXIT_OK


def _parse_weights(text, impaired):
    """``impaired=5.0,a=2`` -> FrameWeights; ``impaired`` expands to the impaired set."""
    weights = {}
    for item in filter(None, (text or "").split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise GuidedSynthError(f"--weights expects phone=value pairs, got {item!r}")
        keys = impaired if key.strip() == "impaired" else [key.strip()]
        for k in keys:
            weights[k] = float(value)
    return FrameWeights(weights)


def cmd_synth(args):
    net = load_score_net(args.score)
    _, meta = load_checkpoint(args.score, "score")
    clf = load_classifier(args.classifier)
    dictionary = load_dictionary(args.dict)
    phones = args.phones.split()
    if args.speaker == "target":
        speaker = int(meta.get("target_speaker", -1))
        if speaker < 0:
            raise GuidedSynthError("score checkpoint has no target speaker recorded")
    else:
        speaker = int(args.speaker)
    durations = [int(d) for d in args.durations.split()] if args.durations else None
    table = meta.get("duration_table") or {}
    if durations is None and not table:
        raise GuidedSynthError("no --durations given and the score checkpoint carries no duration table")
    gcfg = GuidanceConfig(
        alpha=args.alpha, weights=_parse_weights(args.weights, meta.get("impaired", [])),
        n_steps=args.steps, sampler_kind=args.sampler,
    )
    rng = np.random.default_rng(derive_seed(args.seed, "synth"))
    frames, labels, traj = synthesize(phones, speaker, net, clf, dictionary, table, net.sched, gcfg, rng,
                                      durations=durations)
    durations = durations or predict_durations(phones, table)
    condition = args.condition or ("guided" if args.alpha > 0 else "unguided")
    rec = {"condition": condition, "phones": phones, "durations": durations, "speaker": speaker,
           "alpha": args.alpha, "frame_labels": labels, "frames": frames.tolist()}
    mode = "a" if args.append else "w"
    _parent(args.out)
    with open(args.out, mode) as fh:
        fh.write(json.dumps(rec) + "\n")
    if args.trace:
        _parent(args.trace)
        traj.to_csv(args.trace)
    _dump({"out": args.out, "frames": int(frames.shape[0]), "final_logprob": float(traj.total_logprob[-1, 0])
           if args.alpha > 0 else None})
    return EXIT_OK


def _read_synth_dir(path):
    items = []
    files = sorted(Path(path).glob("*.jsonl"))
    if not files:
        raise GuidedSynthError(f"no .jsonl files in {path}")
    for f in files:
        with open(f) as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    items.append((rec["condition"], np.asarray(rec["frames"], float), rec["frame_labels"]))
                except (ValueError, KeyError) as exc:
                    raise GuidedSynthError(f"{f}:{n}: bad synthesis record ({exc})") from exc
    return items


def cmd_eval(args):
    oracle = load_classifier(args.oracle)
    items = _read_synth_dir(args.synth_dir)
    canonical = target_means = None
    if args.corpus:
        corpus = load_corpus(args.corpus)
        canonical = canonical_means(corpus.inventory, corpus.params)
        target_means = corpus.target_speaker.means
    report = frame_error_rate(items, oracle, oracle.phones, canonical, target_means)
    _parent(args.out)
    report.to_csv(args.out)
    _dump({"out": args.out, "rates": {c: report.rate(c) for c in report.conditions()}})
    return EXIT_OK


def cmd_verify(args):
    cfg = _config(args)
    report = run_checks(cfg, args.checkpoint or ())
    _dump(report)
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_run(args):
    cfg = _config(args)
    report = run_pipeline(cfg, args.out)
    _dump({"out": args.out, "summary": replication_summary(report, cfg.corpus.inventory())})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedsynth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, seed=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. corpus.n_healthy=4 (repeatable)")
        if seed:
            p.add_argument("--seed", type=int, help="root seed (overrides the config)")

    p = sub.add_parser("gen-corpus", help="generate the training and held-out corpora")
    with_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-score", help="train the score network")
    with_config(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_score)

    p = sub.add_parser("train-classifier", help="train the guiding classifier or, with --clean, the oracle")
    with_config(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--healthy-only", action="store_true", help="drop target-speaker data before training")
    p.add_argument("--clean", action="store_true", help="clean frames only (evaluation oracle)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("synth", help="synthesize one utterance")
    p.add_argument("--score", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--phones", required=True, help='space separated, e.g. "a s i"')
    p.add_argument("--durations", help="space separated frame counts; default from the duration table")
    p.add_argument("--speaker", default="target", help='"target" or a speaker id')
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--sampler", choices=[k for k in SAMPLER_KINDS if k != "euler_sde"], default="euler_ode")
    p.add_argument("--weights", default="impaired=5.0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--condition", help="condition label stored with the output")
    p.add_argument("--append", action="store_true", help="append to --out instead of overwriting")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write the per-step trajectory CSV here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="oracle frame-error report over synthesis outputs")
    p.add_argument("--synth-dir", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--corpus", help="corpus directory, enables the distance columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the invariant checks")
    with_config(p)
    p.add_argument("--checkpoint", action="append", help="also validate this checkpoint (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="full pipeline into one run directory")
    with_config(p)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, help="threads for independent sampler chains")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure{_stage(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GuidedSynthError, ValueError, KeyError, OSError) as exc:
        print(f"error{_stage(exc)}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _stage(exc):
    stage = getattr(exc, "stage", None)
    return f" during {stage}" if stage else ""


if __name__ == "__main__":
    sys.exit(main())
