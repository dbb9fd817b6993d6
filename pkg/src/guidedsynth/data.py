"""Synthetic phone-conditioned corpus, phone-to-mean dictionary and length regulation.

Each (speaker, phone) pair has a diagonal Gaussian emission. Healthy speakers
use the canonical phone means plus a small per-speaker offset. The target
speaker uses the canonical means exactly, except for impaired phones, whose
means are moved by an articulation-shift vector.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, PhoneLookupError, ShapeError

__all__ = [
    "CORPUS_FORMAT",
    "PhoneInventory",
    "DEFAULT_INVENTORY",
    "TARGET",
    "HEALTHY",
    "CorpusParams",
    "Speaker",
    "Utterance",
    "Corpus",
    "PhoneDictionary",
    "canonical_means",
    "base_durations",
    "generate_corpus",
    "record_script",
    "articulation_shifts",
    "build_phone_dictionary",
    "length_regulate",
    "expand_labels",
    "build_duration_table",
    "predict_durations",
    "save_corpus",
    "load_corpus",
    "save_dictionary",
    "load_dictionary",
]

CORPUS_FORMAT = "guidedsynth-corpus/1"
HEALTHY, TARGET = "healthy", "target"


@dataclass(frozen=True)
class PhoneInventory:
    phones: tuple[str, ...]
    impaired_set: frozenset[str]

    def __init__(self, phones, impaired_set):
        object.__setattr__(self, "phones", tuple(phones))
        object.__setattr__(self, "impaired_set", frozenset(impaired_set))
        if len(self.phones) == 0:
            raise ConfigError("phone inventory is empty")
        if len(set(self.phones)) != len(self.phones):
            raise ConfigError(f"duplicate phones in inventory: {self.phones}")
        if len(self.phones) < 4:
            raise ConfigError("inventory needs at least 4 phones")
        missing = self.impaired_set - set(self.phones)
        if missing:
            raise ConfigError(f"impaired phones not in inventory: {sorted(missing)}")
        if not self.impaired_set:
            raise ConfigError("inventory needs at least 1 impaired phone")

    def __len__(self):
        return len(self.phones)

    def index(self, phone: str) -> int:
        try:
            return self.phones.index(phone)
        except ValueError:
            raise PhoneLookupError(phone) from None

    def indices(self, phones) -> np.ndarray:
        lookup = {p: i for i, p in enumerate(self.phones)}
        try:
            return np.array([lookup[p] for p in phones], dtype=np.int64)
        except KeyError as exc:
            raise PhoneLookupError(exc.args[0]) from None

    @property
    def impaired_mask(self) -> np.ndarray:
        return np.array([p in self.impaired_set for p in self.phones])

    def to_dict(self):
        return {"phones": list(self.phones), "impaired": sorted(self.impaired_set)}


DEFAULT_INVENTORY = PhoneInventory(["a", "i", "u", "s", "t", "k"], ["s", "k"])


@dataclass(frozen=True)
class CorpusParams:
    """Geometry of the synthetic world and the sizes of a corpus.

    ``world_seed`` fixes canonical means, emission variances and phone
    durations, so corpora drawn with different seeds share one phone space.
    ``shift_toward`` maps each impaired phone to the phone its altered
    articulation drifts toward; ``shift_fraction`` is how far along that
    segment the target speaker's mean sits.
    """

    dim: int = 8
    mean_scale: float = 1.0
    emission_std: float = 0.35
    speaker_offset_std: float = 0.05
    shift_fraction: float = 0.65
    shift_toward: dict[str, str] = field(default_factory=lambda: {"s": "t", "k": "u"})
    target_utts: int | None = None
    min_phones: int = 6
    max_phones: int = 12
    min_duration: int = 2
    max_duration: int = 6
    world_seed: int = 1234

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        if self.min_phones < 1 or self.max_phones < self.min_phones:
            raise ConfigError("need 1 <= min_phones <= max_phones")
        if self.min_duration < 1 or self.max_duration < self.min_duration:
            raise ConfigError("need 1 <= min_duration <= max_duration")
        if self.emission_std <= 0:
            raise ConfigError("emission_std must be positive")


@dataclass
class Speaker:
    id: int
    kind: str
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)

    def __post_init__(self):
        if self.kind not in (HEALTHY, TARGET):
            raise ConfigError(f"speaker kind must be healthy or target, got {self.kind!r}")


@dataclass
class Utterance:
    speaker_id: int
    kind: str
    phone_seq: list[str]
    durations: list[int]
    frames: np.ndarray

    def __post_init__(self):
        if len(self.phone_seq) != len(self.durations):
            raise ShapeError("phone_seq and durations differ in length")
        if sum(self.durations) != self.frames.shape[0]:
            raise ShapeError(
                f"durations sum to {sum(self.durations)} but there are {self.frames.shape[0]} frames"
            )

    @property
    def frame_labels(self) -> list[str]:
        return expand_labels(self.phone_seq, self.durations)

    def to_record(self):
        return {
            "speaker_id": int(self.speaker_id),
            "kind": self.kind,
            "phones": list(self.phone_seq),
            "durations": [int(d) for d in self.durations],
            "frames": self.frames.tolist(),
        }

    @classmethod
    def from_record(cls, rec):
        return cls(
            speaker_id=int(rec["speaker_id"]),
            kind=rec["kind"],
            phone_seq=list(rec["phones"]),
            durations=[int(d) for d in rec["durations"]],
            frames=np.asarray(rec["frames"], dtype=np.float64),
        )


@dataclass
class Corpus:
    inventory: PhoneInventory
    params: CorpusParams
    speakers: list[Speaker]
    utterances: list[Utterance]
    seed: int | None = None

    @property
    def dim(self):
        return self.params.dim

    def speaker(self, speaker_id) -> Speaker:
        for spk in self.speakers:
            if spk.id == speaker_id:
                return spk
        raise KeyError(f"no speaker with id {speaker_id}")

    @property
    def target_speaker(self) -> Speaker:
        for spk in self.speakers:
            if spk.kind == TARGET:
                return spk
        raise KeyError("corpus has no target speaker")

    def subset(self, kind) -> Corpus:
        return Corpus(
            self.inventory,
            self.params,
            [s for s in self.speakers if s.kind == kind],
            [u for u in self.utterances if u.kind == kind],
            self.seed,
        )

    def healthy(self) -> Corpus:
        return self.subset(HEALTHY)

    def target(self) -> Corpus:
        return self.subset(TARGET)

    def frames_and_labels(self):
        """Stack all frames with integer phone labels and speaker ids."""
        if not self.utterances:
            d = self.dim
            return np.zeros((0, d)), np.zeros(0, np.int64), np.zeros(0, np.int64)
        frames = np.concatenate([u.frames for u in self.utterances])
        labels = np.concatenate([self.inventory.indices(u.frame_labels) for u in self.utterances])
        spk = np.concatenate([np.full(u.frames.shape[0], u.speaker_id) for u in self.utterances])
        return frames, labels, spk


def canonical_means(inventory: PhoneInventory, params: CorpusParams) -> np.ndarray:
    rng = np.random.default_rng([params.world_seed, 0])
    return params.mean_scale * rng.standard_normal((len(inventory), params.dim))


def _emission_variances(inventory, params):
    rng = np.random.default_rng([params.world_seed, 1])
    scale = rng.uniform(0.7, 1.3, size=(len(inventory), params.dim))
    return scale * params.emission_std**2


def base_durations(inventory: PhoneInventory, params: CorpusParams) -> np.ndarray:
    rng = np.random.default_rng([params.world_seed, 2])
    return rng.integers(params.min_duration, params.max_duration + 1, size=len(inventory))


def articulation_shifts(inventory, params, means=None) -> np.ndarray:
    """Per-phone mean shift of the target speaker; zero rows on unimpaired phones."""
    if means is None:
        means = canonical_means(inventory, params)
    shifts = np.zeros_like(means)
    for phone in inventory.impaired_set:
        toward = params.shift_toward.get(phone)
        if toward is None:
            raise ConfigError(f"no shift_toward entry for impaired phone {phone!r}")
        i, j = inventory.index(phone), inventory.index(toward)
        shifts[i] = params.shift_fraction * (means[j] - means[i])
    return shifts


def make_speakers(inventory, params, n_healthy, rng):
    means = canonical_means(inventory, params)
    variances = _emission_variances(inventory, params)
    speakers = []
    for sid in range(n_healthy):
        offset = params.speaker_offset_std * rng.standard_normal(means.shape)
        speakers.append(Speaker(sid, HEALTHY, means + offset, variances.copy()))
    shifted = means + articulation_shifts(inventory, params, means)
    speakers.append(Speaker(n_healthy, TARGET, shifted, variances.copy()))
    return speakers


def _draw_script(inventory, params, rng):
    n = int(rng.integers(params.min_phones, params.max_phones + 1))
    idx = rng.integers(0, len(inventory), size=n)
    base = base_durations(inventory, params)
    jitter = rng.integers(-1, 2, size=n)
    durations = np.maximum(1, base[idx] + jitter)
    return [inventory.phones[i] for i in idx], [int(d) for d in durations]


def record_script(speaker: Speaker, inventory, phone_seq, durations, rng) -> Utterance:
    """Render a phone script with a speaker's emission Gaussians."""
    idx = np.repeat(inventory.indices(phone_seq), durations)
    noise = rng.standard_normal((idx.size, speaker.means.shape[1]))
    frames = speaker.means[idx] + np.sqrt(speaker.variances[idx]) * noise
    return Utterance(speaker.id, speaker.kind, list(phone_seq), list(durations), frames)


def generate_corpus(
    inventory: PhoneInventory,
    n_healthy: int,
    utts_per_speaker: int,
    seed: int,
    params: CorpusParams | None = None,
) -> Corpus:
    """Draw a deterministic corpus of ``n_healthy`` healthy speakers plus one target."""
    if inventory is None or len(getattr(inventory, "phones", ())) == 0:
        raise ConfigError("phone inventory is empty")
    params = params or CorpusParams()
    if n_healthy < 2:
        raise ConfigError("need at least 2 healthy speakers")
    if n_healthy + 1 > 16:
        raise ConfigError("at most 15 healthy speakers fit the 16-wide speaker embedding")
    rng = np.random.default_rng(seed)
    speakers = make_speakers(inventory, params, n_healthy, rng)
    target_utts = utts_per_speaker if params.target_utts is None else params.target_utts
    utterances = []
    for spk in speakers:
        count = target_utts if spk.kind == TARGET else utts_per_speaker
        for _ in range(count):
            phones, durs = _draw_script(inventory, params, rng)
            utterances.append(record_script(spk, inventory, phones, durs, rng))
    return Corpus(inventory, params, speakers, utterances, seed)


class PhoneDictionary:
    """Per-phone mean frame. Conditioned on the phone only, never the speaker."""

    def __init__(self, entries: dict[str, np.ndarray]):
        self.entries = {p: np.asarray(v, dtype=np.float64) for p, v in entries.items()}

    def __getitem__(self, phone):
        try:
            return self.entries[phone]
        except KeyError:
            raise PhoneLookupError(phone, "phone dictionary") from None

    def __contains__(self, phone):
        return phone in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def dim(self):
        return next(iter(self.entries.values())).shape[0]

    def matrix(self, phones) -> np.ndarray:
        return np.stack([self[p] for p in phones])


def build_phone_dictionary(corpus: Corpus, include_target: bool = True) -> PhoneDictionary:
    """Mean training frame per phone.

    With ``include_target=False`` the target speaker's frames are left out,
    giving the healthy-only variant.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for utt in corpus.utterances:
        if not include_target and utt.kind == TARGET:
            continue
        start = 0
        for phone, dur in zip(utt.phone_seq, utt.durations):
            block = utt.frames[start : start + dur]
            start += dur
            sums[phone] = sums.get(phone, 0.0) + block.sum(axis=0)
            counts[phone] = counts.get(phone, 0) + dur
    for phone in corpus.inventory.phones:
        if phone not in counts:
            raise PhoneLookupError(phone, "training corpus")
    return PhoneDictionary({p: sums[p] / counts[p] for p in corpus.inventory.phones})


def expand_labels(phone_seq, durations) -> list[str]:
    if len(phone_seq) != len(durations):
        raise ShapeError("phone_seq and durations differ in length")
    out = []
    for phone, dur in zip(phone_seq, durations):
        out.extend([phone] * int(dur))
    return out


def length_regulate(phone_seq, durations, dictionary: PhoneDictionary):
    """Expand phones to frames and look up the mean matrix.

    Returns ``(mu, frame_labels)`` with ``sum(durations)`` rows.
    """
    if len(phone_seq) != len(durations):
        raise ShapeError("phone_seq and durations differ in length")
    if any(int(d) < 1 for d in durations):
        raise ShapeError(f"durations must all be >= 1, got {list(durations)}")
    labels = expand_labels(phone_seq, durations)
    if not labels:
        return np.zeros((0, dictionary.dim)), labels
    rows = {p: dictionary[p] for p in set(phone_seq)}
    mu = np.stack([rows[p] for p in labels])
    return mu, labels


def build_duration_table(corpus: Corpus) -> dict[str, int]:
    """Median observed duration per phone, rounded half up, at least 1."""
    seen: dict[str, list[int]] = {}
    for utt in corpus.utterances:
        for phone, dur in zip(utt.phone_seq, utt.durations):
            seen.setdefault(phone, []).append(int(dur))
    return {p: max(1, int(np.floor(np.median(v) + 0.5))) for p, v in seen.items()}


def predict_durations(phone_seq, duration_table: dict[str, int]) -> list[int]:
    out = []
    for phone in phone_seq:
        if phone not in duration_table:
            raise PhoneLookupError(phone, "duration table")
        out.append(max(1, int(duration_table[phone])))
    return out


# -- serialization -----------------------------------------------------------


def _speaker_record(spk: Speaker):
    return {"id": spk.id, "kind": spk.kind, "means": spk.means.tolist(), "variances": spk.variances.tolist()}


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write ``corpus.jsonl`` (one utterance per line) and ``meta.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.jsonl", "w") as fh:
        for utt in corpus.utterances:
            fh.write(json.dumps(utt.to_record()) + "\n")
    meta = {
        "format": CORPUS_FORMAT,
        "seed": corpus.seed,
        "inventory": corpus.inventory.to_dict(),
        "params": asdict(corpus.params),
        "speakers": [_speaker_record(s) for s in corpus.speakers],
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    return out


def load_corpus(path) -> Corpus:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        if meta.get("format") != CORPUS_FORMAT:
            raise CheckpointError(f"unsupported corpus format {meta.get('format')!r}")
        inventory = PhoneInventory(meta["inventory"]["phones"], meta["inventory"]["impaired"])
        params = CorpusParams(**meta["params"])
        speakers = [
            Speaker(s["id"], s["kind"], np.asarray(s["means"]), np.asarray(s["variances"]))
            for s in meta["speakers"]
        ]
        with open(path / "corpus.jsonl") as fh:
            utterances = [Utterance.from_record(json.loads(line)) for line in fh if line.strip()]
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"cannot load corpus from {path}: {exc}") from exc
    return Corpus(inventory, params, speakers, utterances, meta.get("seed"))


def save_dictionary(dictionary: PhoneDictionary, path):
    Path(path).write_text(json.dumps({p: v.tolist() for p, v in dictionary.entries.items()}, indent=1))


def load_dictionary(path) -> PhoneDictionary:
    try:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict) or not raw:
            raise ValueError("expected a non-empty phone -> vector mapping")
        return PhoneDictionary({p: np.asarray(v, dtype=np.float64) for p, v in raw.items()})
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot load dictionary from {path}: {exc}") from exc
