"""Reverse-time generation: probability-flow ODE, reverse SDE and guided ODE.

Time runs on a uniform grid from ``t = 1`` down to ``t_end``. The ODE drift
in forward time is ``0.5 * beta_t * (mu - x - score)``; a reverse step of
size ``dt`` moves against it. Guidance replaces ``score`` with
``score + gamma * g`` where ``g`` is the weighted classifier gradient and
``gamma = alpha * ||score|| / ||g||``.

Several independent chains can be integrated together by stacking their
frames and passing ``chains``, an integer chain id per row. Norms and
``gamma`` are then computed per chain.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifier import FrameWeights, frame_logprob, guidance_gradient
from .data import length_regulate, predict_durations
from .errors import ConfigError, NumericError, ShapeError
from .schedule import NoiseSchedule, beta_at, beta_integral, moments_at
from .score_model import score_forward

SAMPLER_KINDS = ("euler_ode", "exp_ode", "euler_sde")


@dataclass
class GuidanceConfig:
    alpha: float = 0.3
    weights: FrameWeights = field(default_factory=FrameWeights)
    n_steps: int = 25
    sampler_kind: str = "euler_ode"
    t_end: float = 1e-3
    per_frame_gamma: bool = False
    grad_floor: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("n_steps must be a positive integer")
        if self.sampler_kind not in SAMPLER_KINDS:
            raise ConfigError(f"sampler_kind must be one of {SAMPLER_KINDS}")
        if not (0.0 < self.t_end < 1.0):
            raise ConfigError("t_end must lie in (0, 1)")


@dataclass
class Trajectory:
    """Time grid plus per-step diagnostics, one column per chain.

    Diagnostics at row ``k`` describe the state at ``times[k]`` before step
    ``k`` is taken. ``states`` is filled only when requested.
    """

    times: np.ndarray
    score_norm: np.ndarray
    guidance_norm: np.ndarray
    gamma: np.ndarray
    total_logprob: np.ndarray
    states: list = field(default_factory=list)
    noises: list = field(default_factory=list)

    @property
    def n_steps(self):
        return self.times.size - 1

    def chain(self, c) -> Trajectory:
        return Trajectory(
            self.times,
            self.score_norm[:, c],
            self.guidance_norm[:, c],
            self.gamma[:, c],
            self.total_logprob[:, c],
        )

    def to_csv(self, path, chain=0):
        cols = [self.score_norm, self.guidance_norm, self.gamma, self.total_logprob]
        cols = [c[:, chain] if c.ndim == 2 else c for c in cols]
        with open(path, "w") as fh:
            fh.write("step,t,score_norm,guidance_norm,gamma,total_logprob\n")
            for k in range(self.n_steps):
                vals = [self.times[k]] + [c[k] for c in cols]
                fh.write(f"{k}," + ",".join(f"{v:.17g}" for v in vals) + "\n")


def time_grid(n_steps, t_end) -> np.ndarray:
    grid = np.linspace(1.0, t_end, n_steps + 1)
    grid[0], grid[-1] = 1.0, t_end
    return grid


def sample_prior(mu, sched: NoiseSchedule, rng=None, noise=None):
    """``mu + sigma_1 * noise``; ``sigma_1^2 = 1 - e^{-10.025}`` with default betas."""
    mu = np.asarray(mu, dtype=np.float64)
    if noise is None:
        noise = rng.standard_normal(mu.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mu.shape:
        raise ShapeError(f"noise {noise.shape} does not match mu {mu.shape}")
    return mu + np.sqrt(moments_at(sched, 1.0).sigma2) * noise


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite state after {what}")
    return x


def reverse_ode_step(x, t, dt, score_value, mu, sched: NoiseSchedule, kind="euler_ode"):
    """One step of the probability-flow ODE from ``t`` to ``t - dt``.

    ``euler_ode`` is the explicit Euler step. ``exp_ode`` integrates the
    linear pull toward ``mu`` exactly with the score frozen over the step
    (first-order exponential integrator).
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if kind == "euler_ode":
        out = x - 0.5 * beta_at(sched, t) * (mu - x - score_value) * dt
    elif kind == "exp_ode":
        growth = np.exp(0.5 * (beta_integral(sched, t) - beta_integral(sched, max(t - dt, 0.0))))
        out = mu + growth * (x - mu) + (growth - 1.0) * score_value
    else:
        raise ConfigError(f"not an ODE sampler kind: {kind!r}")
    return _finite(out, f"ODE step at t={t:.6g}")


def reverse_sde_step(x, t, dt, score_value, mu, sched: NoiseSchedule, noise):
    """Euler-Maruyama step of the reverse SDE from ``t`` to ``t - dt``.

    The drift is ``0.5*beta*(mu - x) - beta*score``: the score enters with
    the full ``g^2 = beta`` rather than the ODE's ``g^2 / 2``.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    beta = beta_at(sched, t)
    drift = 0.5 * beta * (mu - x) - beta * score_value
    out = x - drift * dt + np.sqrt(beta * dt) * noise
    return _finite(out, f"SDE step at t={t:.6g}")


def _chain_norms(m, chains, n_chains):
    sq = np.einsum("ij,ij->i", m, m)
    if chains is None:
        return np.sqrt(np.array([sq.sum()]))
    return np.sqrt(np.bincount(chains, weights=sq, minlength=n_chains))


@dataclass
class StepDiagnostics:
    score_norm: np.ndarray
    guidance_norm: np.ndarray
    gamma: np.ndarray
    total_logprob: np.ndarray


def guided_score(x, t, net, clf, mu, s, frame_labels, gcfg: GuidanceConfig,
                 chains=None, n_chains=None):
    """Score with the scaled classifier gradient added. Returns ``(score, StepDiagnostics)``.

    ``gamma`` is ``alpha * ||score|| / ||g||`` with Frobenius norms over each
    chain (or per frame when ``gcfg.per_frame_gamma``) and is 0 when
    ``||g||`` is below ``gcfg.grad_floor``. With ``clf=None`` or ``alpha=0``
    the step is the plain ODE step.
    """
    if gcfg.sampler_kind == "euler_sde" and gcfg.alpha > 0 and clf is not None:
        raise ConfigError("guidance is only defined on the ODE samplers")
    n_chains = 1 if chains is None else (n_chains or int(chains.max()) + 1)
    score = score_forward(net, x, t, mu, s)
    score_norm = _chain_norms(score, chains, n_chains)
    if clf is None:
        z = np.zeros(n_chains)
        diag = StepDiagnostics(score_norm, z, z.copy(), np.full(n_chains, np.nan))
        return score, diag
    g, lp = guidance_gradient(clf, x, t, frame_labels, gcfg.weights, return_logprob=True)
    g_norm = _chain_norms(g, chains, n_chains)
    total_lp = np.array([lp.sum()]) if chains is None else np.bincount(chains, weights=lp, minlength=n_chains)
    rows = np.zeros(x.shape[0], dtype=np.int64) if chains is None else chains
    if gcfg.per_frame_gamma:
        s_rows = np.sqrt(np.einsum("ij,ij->i", score, score))
        g_rows = np.sqrt(np.einsum("ij,ij->i", g, g))
        ok = g_rows >= gcfg.grad_floor
        gamma_rows = np.where(ok, gcfg.alpha * s_rows / np.where(ok, g_rows, 1.0), 0.0)
        gamma = np.full(n_chains, np.nan)
    else:
        ok = g_norm >= gcfg.grad_floor
        gamma = np.where(ok, gcfg.alpha * score_norm / np.where(ok, g_norm, 1.0), 0.0)
        gamma_rows = gamma[rows]
    diag = StepDiagnostics(score_norm, g_norm, gamma, total_lp)
    if gcfg.alpha == 0:
        return score, diag
    return score + gamma_rows[:, None] * g, diag


def guided_step(x, t, dt, net, clf, mu, s, frame_labels, gcfg: GuidanceConfig,
                chains=None, n_chains=None):
    """Classifier-guided ODE step from ``t`` to ``t - dt``. Returns ``(x_next, StepDiagnostics)``."""
    eff, diag = guided_score(x, t, net, clf, mu, s, frame_labels, gcfg, chains, n_chains)
    return reverse_ode_step(x, t, dt, eff, mu, net.sched, gcfg.sampler_kind), diag


def run_reverse(x_init, mu, score_fn, sched, gcfg: GuidanceConfig, rng=None, keep_states=False):
    """Integrate from ``t = 1`` to ``gcfg.t_end`` with an arbitrary score callable.

    ``score_fn(x, t)`` returns the score matrix. Used with analytic scores and
    for unguided sampling; ``rng`` supplies SDE noise.
    """
    grid = time_grid(gcfg.n_steps, gcfg.t_end)
    x = np.array(x_init, dtype=np.float64)
    states = [x.copy()] if keep_states else []
    noises = []
    for k in range(gcfg.n_steps):
        t, dt = grid[k], grid[k] - grid[k + 1]
        score = score_fn(x, t)
        if gcfg.sampler_kind == "euler_sde":
            noise = rng.standard_normal(x.shape)
            noises.append(noise)
            x = reverse_sde_step(x, t, dt, score, mu, sched, noise)
        else:
            x = reverse_ode_step(x, t, dt, score, mu, sched, gcfg.sampler_kind)
        if keep_states:
            states.append(x.copy())
    return x, states, noises


def sample_chains(x_init, mu, net, clf, s, frame_labels, gcfg: GuidanceConfig,
                  chains=None, n_chains=None, keep_states=False, rng=None):
    """Guided (or, with ``alpha=0``, unguided) reverse sampling of stacked chains.

    The SDE sampler is only available unguided and needs ``rng``; its noise
    draws are kept on the trajectory.
    """
    sde = gcfg.sampler_kind == "euler_sde"
    if sde and rng is None:
        raise ConfigError("the SDE sampler needs an rng for its noise draws")
    n_chains = 1 if chains is None else (n_chains or int(chains.max()) + 1)
    grid = time_grid(gcfg.n_steps, gcfg.t_end)
    x = np.array(x_init, dtype=np.float64)
    diags = []
    states = [x.copy()] if keep_states else []
    noises = []
    for k in range(gcfg.n_steps):
        t, dt = grid[k], grid[k] - grid[k + 1]
        try:
            if sde:
                eff, diag = guided_score(x, t, net, clf, mu, s, frame_labels, gcfg, chains, n_chains)
                noise = rng.standard_normal(x.shape)
                noises.append(noise)
                x = reverse_sde_step(x, t, dt, eff, mu, net.sched, noise)
            else:
                x, diag = guided_step(x, t, dt, net, clf, mu, s, frame_labels, gcfg, chains, n_chains)
        except NumericError as exc:
            raise NumericError(f"reverse step {k} (t={t:.6g}): {exc}") from exc
        diags.append(diag)
        if keep_states:
            states.append(x.copy())
    traj = Trajectory(
        grid,
        np.stack([d.score_norm for d in diags]),
        np.stack([d.guidance_norm for d in diags]),
        np.stack([d.gamma for d in diags]),
        np.stack([d.total_logprob for d in diags]),
        states,
        noises,
    )
    return x, traj


def _speaker_id(speaker):
    return int(getattr(speaker, "id", speaker))


def synthesize(phone_seq, speaker, net, clf, dictionary, duration_table, sched, gcfg: GuidanceConfig,
               rng, durations=None, keep_states=False):
    """Phones to frames: durations, length regulation, prior draw, reverse ODE.

    ``durations`` overrides the duration table (used for resynthesis with
    known alignments). Returns ``(frames, frame_labels, trajectory)``.
    """
    if durations is None:
        durations = predict_durations(phone_seq, duration_table)
    mu, labels = length_regulate(phone_seq, durations, dictionary)
    x = sample_prior(mu, sched, rng)
    out, traj = sample_chains(x, mu, net, clf, _speaker_id(speaker), labels, gcfg, keep_states=keep_states,
                              rng=rng)
    return out, labels, traj


def chain_seeds(seed, n):
    return np.random.SeedSequence(seed).spawn(n)


def synthesize_batch(scripts, speaker, net, clf, dictionary, sched, gcfg: GuidanceConfig, seed,
                     jobs=1, chunk_size=64):
    """Synthesize many ``(phone_seq, durations)`` scripts as parallel chains.

    Chain ``i`` draws its prior noise from the ``i``-th child of
    ``SeedSequence(seed)``, so outputs do not depend on ``jobs``. Chains are
    grouped into fixed chunks; chunks run on up to ``jobs`` threads.
    Returns ``(frames_list, labels_list, trajectories)`` with one trajectory per
    chunk.
    """
    seeds = chain_seeds(seed, len(scripts))
    prepared = []
    for (phones, durs), ss in zip(scripts, seeds):
        mu, labels = length_regulate(phones, durs, dictionary)
        x = sample_prior(mu, sched, np.random.default_rng(ss))
        prepared.append((x, mu, labels))
    spk = _speaker_id(speaker)

    def run_chunk(start):
        part = prepared[start : start + chunk_size]
        chains = np.concatenate([np.full(p[0].shape[0], i) for i, p in enumerate(part)])
        x = np.concatenate([p[0] for p in part])
        mu = np.concatenate([p[1] for p in part])
        labels = [lab for p in part for lab in p[2]]
        # SDE noise is keyed by chunk so it does not depend on ``jobs``
        chunk_rng = np.random.default_rng([int(seed), 1, start])
        out, traj = sample_chains(x, mu, net, clf, spk, labels, gcfg, chains, len(part), rng=chunk_rng)
        bounds = np.cumsum([0] + [p[0].shape[0] for p in part])
        return [out[a:b] for a, b in zip(bounds[:-1], bounds[1:])], traj

    starts = list(range(0, len(prepared), chunk_size))
    if jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_chunk, starts))
    else:
        results = [run_chunk(s) for s in starts]
    frames = [f for r in results for f in r[0]]
    return frames, [p[2] for p in prepared], [r[1] for r in results]


def terminal_logprob(clf, frames, frame_labels, t_end):
    """Classifier total log-probability of the intended labels at ``t_end``."""
    return frame_logprob(clf, frames, t_end, frame_labels)
