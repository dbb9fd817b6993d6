"""Noise-conditional frame-level phone classifier and its guidance gradient.

The classifier maps ``[frame, time embedding]`` to phone logits. It has no
speaker input, so it is speaker independent by construction, and it scores
every frame separately, so the utterance log-probability is exactly the sum
of the frame terms.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import TARGET, PhoneDictionary, build_phone_dictionary
from .errors import CheckpointError, ConfigError, DomainError, NumericError, PhoneLookupError, ShapeError
from .nn import MLP, MomentumSGD, check_finite, load_checkpoint, save_checkpoint
from .schedule import NoiseSchedule, forward_sample
from .score_model import TIME_DIM, time_embedding


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class PhoneClassifier:
    def __init__(self, mlp: MLP, phones, sched: NoiseSchedule, dim: int, noise_conditional: bool = True):
        if mlp.sizes[0] != dim + TIME_DIM or mlp.sizes[-1] != len(phones):
            raise ShapeError(f"MLP sizes {mlp.sizes} do not fit dim={dim}, {len(phones)} phones")
        self.mlp = mlp
        self.phones = tuple(phones)
        self.sched = sched
        self.dim = dim
        # a clean-only classifier never saw t > 0, so its time input is pinned to 0
        self.noise_conditional = noise_conditional
        self._index = {p: i for i, p in enumerate(self.phones)}

    @classmethod
    def create(cls, phones, dim, sched, hidden=(64, 64), seed=0, dtype=np.float32, noise_conditional=True):
        sizes = [dim + TIME_DIM, *hidden, len(phones)]
        return cls(MLP.init(sizes, np.random.default_rng(seed), dtype), phones, sched, dim, noise_conditional)

    def astype(self, dtype):
        return PhoneClassifier(self.mlp.astype(dtype), self.phones, self.sched, self.dim, self.noise_conditional)

    def label_indices(self, frame_labels) -> np.ndarray:
        try:
            return np.array([self._index[p] for p in frame_labels], dtype=np.int64)
        except KeyError as exc:
            raise PhoneLookupError(exc.args[0], "classifier inventory") from None

    def inputs(self, x_t, t):
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.ndim != 2 or x_t.shape[1] != self.dim:
            raise ShapeError(f"x_t must be (L, {self.dim}), got {x_t.shape}")
        if not self.noise_conditional:
            t = 0.0
        return np.concatenate([x_t, time_embedding(self.sched, t, x_t.shape[0])], axis=1)

    def logits(self, x_t, t):
        return np.asarray(self.mlp.forward(self.inputs(x_t, t)), dtype=np.float64)

    def log_probs(self, x_t, t):
        """Per-frame log-softmax over the phone inventory, shape ``(L, K)``."""
        return log_softmax(self.logits(x_t, t))

    def predict(self, x_t, t=0.0) -> list[str]:
        return [self.phones[i] for i in np.argmax(self.logits(x_t, t), axis=1)]


@dataclass
class FrameWeights:
    """Per-phone guidance multiplier; phones not listed get ``default``."""

    weights: dict[str, float] = field(default_factory=dict)
    default: float = 1.0

    def __post_init__(self):
        if self.default <= 0 or any(w <= 0 for w in self.weights.values()):
            raise ConfigError("frame weights must all be positive")

    @classmethod
    def for_impaired(cls, impaired_phones, weight=5.0):
        return cls({p: float(weight) for p in impaired_phones})

    def __getitem__(self, phone):
        return self.weights.get(phone, self.default)

    def rows(self, frame_labels) -> np.ndarray:
        return np.array([self[p] for p in frame_labels], dtype=np.float64)


def frame_logprob(clf: PhoneClassifier, x_t, t, frame_labels):
    """``(per_frame, total)`` log-probabilities of the intended frame labels."""
    idx = clf.label_indices(frame_labels)
    lp = clf.log_probs(x_t, t)
    if idx.shape[0] != lp.shape[0]:
        raise ShapeError(f"{idx.shape[0]} labels for {lp.shape[0]} frames")
    per_frame = lp[np.arange(idx.shape[0]), idx]
    return per_frame, float(np.sum(per_frame))


def guidance_gradient(clf: PhoneClassifier, x_t, t, frame_labels, weights: FrameWeights | None = None,
                      return_logprob=False):
    """Weighted gradient of the frame log-probabilities with respect to ``x_t``.

    Row ``i`` is ``weights[label_i] * d log P(label_i | x_t row i) / d x_t row i``.
    """
    idx = clf.label_indices(frame_labels)
    inp = clf.inputs(x_t, t)
    if idx.shape[0] != inp.shape[0]:
        raise ShapeError(f"{idx.shape[0]} labels for {inp.shape[0]} frames")
    out, cache = clf.mlp.forward(inp, keep=True)
    lp = log_softmax(out)
    n = idx.shape[0]
    # d log_softmax[y] / d logits = onehot(y) - softmax
    grad_logits = -np.exp(lp)
    grad_logits[np.arange(n), idx] += 1.0
    if weights is not None:
        grad_logits *= weights.rows(frame_labels)[:, None]
    _, grad_in = clf.mlp.backward(cache, grad_logits, need_params=False)
    grad = np.asarray(grad_in[:, : clf.dim], dtype=np.float64)
    bad = ~np.all(np.isfinite(grad), axis=1)
    if np.any(bad):
        raise NumericError(f"non-finite guidance gradient at frame {int(np.argmax(bad))}")
    if return_logprob:
        return grad, lp[np.arange(n), idx]
    return grad


@dataclass
class ClassifierTrainConfig:
    steps: int = 2000
    batch_size: int = 256
    lr: float = 0.05
    momentum: float = 0.9
    clip: float | None = 5.0
    hidden: tuple[int, ...] = (64, 64)
    noise_conditional: bool = True
    label_smoothing: float = 0.0
    seed: int = 0


def cross_entropy(clf, x, t, labels, need_grads=True, label_smoothing=0.0):
    """Mean cross-entropy against (optionally smoothed) one-hot ``labels``, with gradients."""
    out, cache = clf.mlp.forward(clf.inputs(x, t), keep=True)
    lp = log_softmax(out)
    n, k = lp.shape
    target = np.full((n, k), label_smoothing / k)
    target[np.arange(n), labels] += 1.0 - label_smoothing
    loss = float(-np.sum(target * lp) / n)
    if not need_grads:
        return loss, None
    g = np.exp(lp) - target
    grads, _ = clf.mlp.backward(cache, g / n)
    return loss, grads


def train_classifier(corpus_healthy, sched, config: ClassifierTrainConfig | None = None,
                     dictionary: PhoneDictionary | None = None):
    """Train on healthy speakers only; returns ``(classifier, losses)``.

    Frames are noised with the forward process at ``t ~ U(0, 1)`` using the
    dictionary row of their phone as ``mu``. With ``noise_conditional=False``
    the classifier only ever sees clean frames at ``t = 0``.
    """
    config = config or ClassifierTrainConfig()
    if any(u.kind == TARGET for u in corpus_healthy.utterances) or any(
        s.kind == TARGET for s in corpus_healthy.speakers
    ):
        raise DomainError("phone classifier must be trained on healthy speakers only")
    if not corpus_healthy.utterances:
        raise DomainError("cannot train on an empty corpus")
    inventory = corpus_healthy.inventory
    if dictionary is None:
        dictionary = build_phone_dictionary(corpus_healthy)
    frames, labels, _ = corpus_healthy.frames_and_labels()
    means = dictionary.matrix(inventory.phones)
    rng = np.random.default_rng([config.seed, 21])
    clf = PhoneClassifier.create(
        inventory.phones, corpus_healthy.dim, sched, config.hidden, seed=config.seed,
        noise_conditional=config.noise_conditional,
    )
    opt = MomentumSGD(config.lr, config.momentum, config.clip)
    losses = np.empty(config.steps)
    for step in range(config.steps):
        idx = rng.integers(0, frames.shape[0], size=config.batch_size)
        x0, y = frames[idx], labels[idx]
        if config.noise_conditional:
            t = rng.uniform(0.0, 1.0, size=idx.size)
            x = forward_sample(sched, t, x0, means[y], rng.standard_normal(x0.shape))
        else:
            t = np.zeros(idx.size)
            x = x0
        loss, grads = cross_entropy(clf, x, t, y, label_smoothing=config.label_smoothing)
        if not np.isfinite(loss):
            raise NumericError(f"classifier training diverged at step {step}")
        losses[step] = loss
        opt.step(clf.mlp.params, grads)
    for p in clf.mlp.params:
        check_finite(p, "classifier parameters")
    return clf, losses


def save_classifier(clf: PhoneClassifier, path, config: ClassifierTrainConfig | None = None, seed=None,
                    extra=None):
    meta = {
        "dim": clf.dim,
        "phones": list(clf.phones),
        "schedule": {"beta0": clf.sched.beta0, "beta1": clf.sched.beta1},
        "noise_conditional": clf.noise_conditional,
        "train_config": asdict(config) if config is not None else None,
        "seed": seed,
        **(extra or {}),
    }
    save_checkpoint(path, "classifier", clf.mlp, meta)


def load_classifier(path) -> PhoneClassifier:
    mlp, rec = load_checkpoint(path, "classifier")
    try:
        return PhoneClassifier(
            mlp, rec["phones"], NoiseSchedule(**rec["schedule"]), int(rec["dim"]),
            bool(rec.get("noise_conditional", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
