"""Small feed-forward networks with hand-written backpropagation.

Networks act row-wise: every row of the input matrix is pushed through the
same layers independently. Parameters are float32 by default; pass
``dtype=np.float64`` for gradient checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, NumericError

CHECKPOINT_FORMAT = "guidedsynth-ckpt/1"


def sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def silu(z):
    return z * sigmoid(z)


def silu_grad(z):
    s = sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


class MLP:
    """Dense layers with SiLU between them and a linear output layer."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def init(cls, sizes, rng, dtype=np.float32, zero_output=False):
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_output:
                w = np.zeros((n_in, n_out))
            else:
                w = rng.standard_normal((n_in, n_out)) * np.sqrt(1.0 / n_in)
            weights.append(w.astype(dtype))
            biases.append(np.zeros(n_out, dtype=dtype))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes, dtype=np.float32):
        return cls(
            [np.zeros((a, b), dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b, dtype=dtype) for b in sizes[1:]],
        )

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self):
        return [*self.weights, *self.biases]

    def astype(self, dtype):
        return MLP([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def copy(self):
        return self.astype(self.dtype)

    def n_params(self):
        return sum(p.size for p in self.params)

    def forward(self, x, keep=False):
        h = np.asarray(x, dtype=self.dtype)
        cache = [h]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < n - 1:
                cache.append(z)
                h = silu(z)
                cache.append(h)
            else:
                h = z
        return (h, cache) if keep else h

    def backward(self, cache, grad_out, need_params=True):
        """Gradients of ``sum(grad_out * output)``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
        ``params`` (all weights, then all biases), or ``None`` when
        ``need_params`` is false.
        """
        n = len(self.weights)
        g = np.asarray(grad_out, dtype=self.dtype)
        gw = [None] * n
        gb = [None] * n
        for i in range(n - 1, -1, -1):
            h_in = cache[0] if i == 0 else cache[2 * i]
            if need_params:
                gw[i] = h_in.T @ g
                gb[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * silu_grad(cache[2 * i - 1])
        return ((gw + gb) if need_params else None), g

    def to_record(self):
        return {
            "shapes": [list(w.shape) for w in self.weights],
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "dtype": np.dtype(self.dtype).name,
        }

    @classmethod
    def from_record(cls, rec):
        dtype = np.dtype(rec.get("dtype", "float32"))
        weights = [
            np.asarray(w, dtype=dtype).reshape(shape) for w, shape in zip(rec["weights"], rec["shapes"])
        ]
        biases = [np.asarray(b, dtype=dtype) for b in rec["biases"]]
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[1],):
                raise CheckpointError("bias shape does not match layer width")
        return cls(weights, biases)


@dataclass
class MomentumSGD:
    """Heavy-ball SGD with a fixed step and optional global-norm clipping."""

    lr: float = 0.01
    momentum: float = 0.9
    clip: float | None = None
    _velocity: list = field(default_factory=list, repr=False)

    def step(self, params, grads):
        if self.clip is not None:
            norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
            if norm > self.clip:
                grads = [g * (self.clip / norm) for g in grads]
        if not self._velocity:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v -= self.lr * g
            p += v


def gradient_check(loss_fn, params, analytic, h=1e-5, floor=1e-7):
    """Largest relative gap between ``analytic`` and central differences.

    ``loss_fn()`` must read the arrays in ``params``, which are perturbed in
    place and restored. Entries where both gradients are below ``floor`` in
    magnitude are skipped for the relative measure; the largest absolute gap
    is returned alongside so tiny entries are still covered.
    Returns ``(max_rel, max_abs)``.
    """
    max_rel = 0.0
    max_abs = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("gradient_check needs contiguous parameter arrays")
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            num = (up - down) / (2 * h)
            gap = abs(num - gflat[i])
            max_abs = max(max_abs, gap)
            scale = max(abs(num), abs(gflat[i]))
            if scale >= floor:
                max_rel = max(max_rel, gap / scale)
    return max_rel, max_abs


def check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def save_checkpoint(path, kind, net: MLP, meta: dict):
    rec = {"format": CHECKPOINT_FORMAT, "kind": kind, "network": net.to_record(), **meta}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(rec))


def load_checkpoint(path, kind=None):
    try:
        rec = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(rec, dict) or rec.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if kind is not None and rec.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {rec.get('kind')!r}")
    try:
        net = MLP.from_record(rec["network"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed network record: {exc}") from exc
    return net, rec
