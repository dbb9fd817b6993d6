"""Frame-local score estimator trained by weighted denoising score matching.

The network sees one frame at a time: ``[x_t row, mu row, time embedding,
one-hot speaker]`` and returns that row of the score. Training minimizes the
mean over frames of ``sigma_t^2 * ||S(x_t, t, mu, s) + eps / sigma_t||^2``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CheckpointError, DomainError, NumericError, ShapeError
from .nn import MLP, MomentumSGD, check_finite, load_checkpoint, save_checkpoint
from .schedule import NoiseSchedule, forward_sample, moments_at

log = logging.getLogger(__name__)

SPEAKER_DIM = 16
TIME_DIM = 4


def time_embedding(sched: NoiseSchedule, t, n_rows=None) -> np.ndarray:
    """Rows of ``(t, sin 2 pi t, cos 2 pi t, sigma_t)``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(1 if n_rows is None else n_rows, float(t))
    sigma = np.sqrt(moments_at(sched, t).sigma2)
    return np.stack([t, np.sin(2 * np.pi * t), np.cos(2 * np.pi * t), sigma], axis=1)


def speaker_onehot(s, n_rows) -> np.ndarray:
    s = np.broadcast_to(np.asarray(s, dtype=np.int64), (n_rows,))
    if np.any(s < 0) or np.any(s >= SPEAKER_DIM):
        raise DomainError(f"speaker ids must lie in [0, {SPEAKER_DIM})")
    out = np.zeros((n_rows, SPEAKER_DIM))
    out[np.arange(n_rows), s] = 1.0
    return out


class ScoreNet:
    """Score estimator ``S(x_t, t, mu, s)`` applied independently to each frame."""

    def __init__(self, mlp: MLP, dim: int, sched: NoiseSchedule):
        expected = 2 * dim + TIME_DIM + SPEAKER_DIM
        if mlp.sizes[0] != expected or mlp.sizes[-1] != dim:
            raise ShapeError(f"MLP sizes {mlp.sizes} do not fit frame dim {dim}")
        self.mlp = mlp
        self.dim = dim
        self.sched = sched

    @classmethod
    def create(cls, dim, sched, hidden=(64, 64), seed=0, dtype=np.float32, zero_output=False):
        sizes = [2 * dim + TIME_DIM + SPEAKER_DIM, *hidden, dim]
        return cls(MLP.init(sizes, np.random.default_rng(seed), dtype, zero_output), dim, sched)

    @classmethod
    def zeros(cls, dim, sched, hidden=(64, 64), dtype=np.float32):
        return cls(MLP.zeros([2 * dim + TIME_DIM + SPEAKER_DIM, *hidden, dim], dtype), dim, sched)

    def astype(self, dtype):
        return ScoreNet(self.mlp.astype(dtype), self.dim, self.sched)

    def inputs(self, x_t, t, mu, s):
        x_t = np.asarray(x_t, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        if x_t.ndim != 2 or x_t.shape != mu.shape or x_t.shape[1] != self.dim:
            raise ShapeError(f"x_t {x_t.shape} and mu {mu.shape} must both be (L, {self.dim})")
        if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(mu))):
            raise NumericError("non-finite input to score network")
        n = x_t.shape[0]
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 1 and t.shape[0] != n:
            raise ShapeError("per-row t must have one value per frame")
        return np.concatenate(
            [x_t, mu, time_embedding(self.sched, t, n), speaker_onehot(s, n)], axis=1
        )

    def __call__(self, x_t, t, mu, s):
        return score_forward(self, x_t, t, mu, s)


def score_forward(net: ScoreNet, x_t, t, mu, s) -> np.ndarray:
    """Predicted score matrix, one row per frame, as float64."""
    return np.asarray(net.mlp.forward(net.inputs(x_t, t, mu, s)), dtype=np.float64)


@dataclass
class TrainBatch:
    x0: np.ndarray
    mu: np.ndarray
    speakers: np.ndarray
    t: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        n = self.x0.shape[0]
        if not (self.mu.shape == self.x0.shape == self.eps.shape):
            raise ShapeError("x0, mu and eps must share a shape")
        if self.t.shape != (n,) or self.speakers.shape != (n,):
            raise ShapeError("t and speakers need one entry per frame")


def make_batch(x0, mu, speakers, rng, t_min=1e-3) -> TrainBatch:
    """Attach ``t ~ U(0, 1)`` and ``eps ~ N(0, I)``.

    Draws with ``t < t_min`` are resampled, which is the same as drawing from
    ``U(t_min, 1)``.
    """
    n = x0.shape[0]
    t = rng.uniform(0.0, 1.0, size=n)
    low = t < t_min
    while np.any(low):
        t[low] = rng.uniform(0.0, 1.0, size=int(low.sum()))
        low = t < t_min
    eps = rng.standard_normal(x0.shape)
    return TrainBatch(np.asarray(x0, float), np.asarray(mu, float), np.asarray(speakers), t, eps)


def dsm_target(batch: TrainBatch, sched: NoiseSchedule) -> np.ndarray:
    """Regression target ``-eps / sigma_t`` for each frame."""
    sigma = np.sqrt(np.asarray(moments_at(sched, batch.t).sigma2))
    return -batch.eps / sigma[:, None]


def dsm_objective(score_pred, batch: TrainBatch, sched: NoiseSchedule) -> float:
    """Loss value for an arbitrary predicted score matrix."""
    sigma = np.sqrt(np.asarray(moments_at(sched, batch.t).sigma2))
    resid = sigma[:, None] * np.asarray(score_pred, dtype=np.float64) + batch.eps
    return float(np.sum(resid * resid) / batch.x0.shape[0])


def dsm_loss(net: ScoreNet, batch: TrainBatch, sched: NoiseSchedule, sigma_floor=1e-6, need_grads=True):
    """Weighted denoising score-matching loss and its parameter gradients.

    The loss is ``mean_frames ||sigma_t * S + eps||^2``, i.e. the squared error
    against ``-eps / sigma_t`` weighted by ``sigma_t^2``. Returns
    ``(loss, grads)``; ``grads`` follows ``net.mlp.params`` order.
    """
    sigma2 = np.asarray(moments_at(sched, batch.t).sigma2)
    sigma = np.sqrt(sigma2)
    if np.any(sigma < sigma_floor):
        raise DomainError(f"batch contains sigma_t below the floor {sigma_floor}; resample t")
    x_t = forward_sample(sched, batch.t, batch.x0, batch.mu, batch.eps)
    inp = net.inputs(x_t, batch.t, batch.mu, batch.speakers)
    out, cache = net.mlp.forward(inp, keep=True)
    out = np.asarray(out, dtype=np.float64)
    resid = sigma[:, None] * out + batch.eps
    n = batch.x0.shape[0]
    loss = float(np.sum(resid * resid) / n)
    if not need_grads:
        return loss, None
    grad_out = (2.0 / n) * sigma[:, None] * resid
    grads, _ = net.mlp.backward(cache, grad_out)
    return loss, grads


@dataclass
class ScoreTrainConfig:
    steps: int = 3000
    batch_size: int = 256
    lr: float = 0.02
    momentum: float = 0.9
    clip: float | None = 5.0
    t_min: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0


def _frame_pool(corpus, dictionary):
    frames, labels, speakers = corpus.frames_and_labels()
    if frames.shape[0] == 0:
        raise DomainError("corpus has no frames")
    means = dictionary.matrix(corpus.inventory.phones)
    return frames, means[labels], speakers


def smooth(values, window=50):
    values = np.asarray(values, dtype=np.float64)
    if values.size < window:
        return values.copy()
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def train_score(net: ScoreNet | None, corpus, dictionary, sched, config: ScoreTrainConfig | None = None):
    """Fit the score network on every speaker in ``corpus``.

    Passing ``net=None`` builds a fresh network from ``config``. Returns
    ``(net, losses)``.
    """
    config = config or ScoreTrainConfig()
    if not corpus.utterances:
        raise DomainError("cannot train on an empty corpus")
    rng = np.random.default_rng([config.seed, 11])
    if net is None:
        net = ScoreNet.create(corpus.dim, sched, config.hidden, seed=config.seed)
    frames, mu, speakers = _frame_pool(corpus, dictionary)
    opt = MomentumSGD(config.lr, config.momentum, config.clip)
    losses = np.empty(config.steps)
    for step in range(config.steps):
        idx = rng.integers(0, frames.shape[0], size=config.batch_size)
        batch = make_batch(frames[idx], mu[idx], speakers[idx], rng, config.t_min)
        loss, grads = dsm_loss(net, batch, sched)
        if not np.isfinite(loss) or loss > 1e6:
            raise NumericError(
                f"score training diverged at step {step}: loss={loss!r}, "
                f"last finite losses={losses[max(0, step - 5):step].tolist()}"
            )
        losses[step] = loss
        opt.step(net.mlp.params, grads)
    for p in net.mlp.params:
        check_finite(p, "score network parameters")
    log.info("score training: %d steps, smoothed loss %.4f -> %.4f",
             config.steps, smooth(losses)[0], smooth(losses)[-1])
    return net, losses


def save_score_net(net: ScoreNet, path, config: ScoreTrainConfig | None = None, seed=None, extra=None):
    meta = {
        "dim": net.dim,
        "schedule": {"beta0": net.sched.beta0, "beta1": net.sched.beta1},
        "train_config": asdict(config) if config is not None else None,
        "seed": seed,
        **(extra or {}),
    }
    save_checkpoint(path, "score", net.mlp, meta)


def load_score_net(path) -> ScoreNet:
    mlp, rec = load_checkpoint(path, "score")
    try:
        sched = NoiseSchedule(**rec["schedule"])
        return ScoreNet(mlp, int(rec["dim"]), sched)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
