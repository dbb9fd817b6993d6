"""Run configuration: a JSON tree with strict key checking and derived seeds.

Every random operation takes its seed from :func:`derive_seed` applied to the
single root ``seed`` and a fixed per-stage tag.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierTrainConfig, FrameWeights
from .data import CorpusParams, PhoneInventory
from .errors import ConfigError
from .sampler import GuidanceConfig
from .schedule import NoiseSchedule
from .score_model import ScoreTrainConfig

SEED_TAGS = {
    "corpus": 1,
    "oracle_corpus": 2,
    "score": 3,
    "classifier": 4,
    "oracle": 5,
    "synth": 6,
    "source_recording": 7,
    "verify": 8,
}


def derive_seed(root: int, stage: str) -> int:
    return int(np.random.SeedSequence([int(root), SEED_TAGS[stage]]).generate_state(1)[0])


@dataclass
class CorpusConfig:
    phones: list[str] = field(default_factory=lambda: ["a", "i", "u", "s", "t", "k"])
    impaired: list[str] = field(default_factory=lambda: ["s", "k"])
    n_healthy: int = 8
    utts_per_speaker: int = 30
    oracle_n_healthy: int = 8
    oracle_utts_per_speaker: int = 30
    dim: int = 8
    mean_scale: float = 1.0
    emission_std: float = 0.6
    speaker_offset_std: float = 0.05
    shift_fraction: float = 0.65
    shift_toward: dict[str, str] = field(default_factory=lambda: {"s": "t", "k": "u"})
    target_utts: int | None = None
    min_phones: int = 6
    max_phones: int = 12
    min_duration: int = 2
    max_duration: int = 6
    world_seed: int = 1234

    def inventory(self) -> PhoneInventory:
        return PhoneInventory(self.phones, self.impaired)

    def params(self) -> CorpusParams:
        names = {f.name for f in dataclasses.fields(CorpusParams)}
        return CorpusParams(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


@dataclass
class GuidanceSection:
    alpha: float = 0.3
    impaired_weight: float = 5.0
    weights: dict[str, float] = field(default_factory=dict)
    n_steps: int = 25
    sampler_kind: str = "euler_ode"
    t_end: float = 1e-3
    per_frame_gamma: bool = False

    def build(self, inventory: PhoneInventory, alpha=None) -> GuidanceConfig:
        w = {p: self.impaired_weight for p in inventory.impaired_set}
        w.update(self.weights)
        return GuidanceConfig(
            alpha=self.alpha if alpha is None else alpha,
            weights=FrameWeights(w),
            n_steps=self.n_steps,
            sampler_kind=self.sampler_kind,
            t_end=self.t_end,
            per_frame_gamma=self.per_frame_gamma,
        )


@dataclass
class ScheduleSection:
    beta0: float = 0.05
    beta1: float = 20.0

    def build(self):
        return NoiseSchedule(self.beta0, self.beta1)


def _score_defaults():
    return ScoreTrainConfig(steps=4000, batch_size=512, lr=0.05)


def _oracle_defaults():
    return ClassifierTrainConfig(noise_conditional=False)


@dataclass
class RunConfig:
    seed: int = 0
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    score_training: ScoreTrainConfig = field(default_factory=_score_defaults)
    classifier_training: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    oracle_training: ClassifierTrainConfig = field(default_factory=_oracle_defaults)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    jobs: int = 1

    def __post_init__(self):
        # build every section once so bad values fail at load time
        try:
            inv = self.corpus.inventory()
            self.corpus.params()
            self.schedule.build()
            self.guidance.build(inv)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config: {exc}") from exc
        if not 2 <= self.corpus.n_healthy <= 15 or not 2 <= self.corpus.oracle_n_healthy <= 15:
            raise ConfigError("config.corpus: healthy speaker counts must lie in [2, 15]")
        if int(self.jobs) != self.jobs or self.jobs < 1:
            raise ConfigError("config.jobs must be a positive integer")

    def seeds(self) -> dict[str, int]:
        return {stage: derive_seed(self.seed, stage) for stage in SEED_TAGS}

    def to_dict(self):
        out = dataclasses.asdict(self)
        for name in ("score_training", "classifier_training", "oracle_training"):
            out[name].pop("seed")
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        return _build(cls, raw, "config")

    def replace_seed(self, seed) -> RunConfig:
        return dataclasses.replace(self, seed=int(seed))


_SECTION_TYPES = {
    "schedule": ScheduleSection,
    "corpus": CorpusConfig,
    "score_training": ScoreTrainConfig,
    "classifier_training": ClassifierTrainConfig,
    "oracle_training": ClassifierTrainConfig,
    "guidance": GuidanceSection,
}


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    if cls in (ScoreTrainConfig, ClassifierTrainConfig) and "seed" in raw:
        raise ConfigError(f"{where}: per-stage seeds are derived from the root seed; remove 'seed'")
    base = cls()
    kwargs = {}
    for name, value in raw.items():
        if cls is RunConfig and name in _SECTION_TYPES:
            section = _build(_SECTION_TYPES[name], value, f"{where}.{name}")
            # fill keys the user left out from this config's own defaults
            defaults = dataclasses.asdict(getattr(base, name))
            defaults.update({k: v for k, v in dataclasses.asdict(section).items() if k in value})
            kwargs[name] = _SECTION_TYPES[name](**_coerce(_SECTION_TYPES[name], defaults))
        else:
            kwargs[name] = value
    try:
        return cls(**_coerce(cls, kwargs))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _coerce(cls, kwargs):
    out = dict(kwargs)
    for f in dataclasses.fields(cls):
        if f.name == "hidden" and f.name in out:
            out[f.name] = tuple(int(h) for h in out[f.name])
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return RunConfig.from_dict(raw)
