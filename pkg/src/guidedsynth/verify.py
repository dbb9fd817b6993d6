"""Fast invariant suite behind ``guidedsynth verify``.

Each check compares a measured quantity with a tolerance and never writes
to disk, so running it twice gives the same report.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .classifier import FrameWeights, PhoneClassifier, cross_entropy
from .config import RunConfig, derive_seed
from .errors import GuidedSynthError
from .nn import gradient_check, load_checkpoint
from .sampler import GuidanceConfig, run_reverse, sample_chains, sample_prior
from .schedule import NoiseSchedule, beta_integral, moments_at, true_score_gaussian
from .score_model import ScoreNet, TrainBatch, dsm_loss, dsm_objective, dsm_target


@dataclass
class Check:
    name: str
    passed: bool
    measured: float | None
    tolerance: float | None
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.measured = None if self.measured is None else float(self.measured)


def _leggauss_integral(b0, b1, t, n=8):
    nodes, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * t * (nodes + 1.0)
    return 0.5 * t * np.sum(w * (b0 + (b1 - b0) * s))


def check_schedule(rng) -> list[Check]:
    worst_i = worst_m = 0.0
    for _ in range(100):
        b0 = rng.uniform(0.01, 1.0)
        b1 = b0 + rng.uniform(0.1, 30.0)
        t = rng.uniform(0.0, 1.0)
        sched = NoiseSchedule(b0, b1)
        ref = _leggauss_integral(b0, b1, t)
        got = float(beta_integral(sched, t))
        worst_i = max(worst_i, abs(got - ref) / max(abs(ref), 1e-300))
        m = moments_at(sched, t)
        for val, exact in ((m.rho_coeff_x0, np.exp(-0.5 * ref)), (m.sigma2, -np.expm1(-ref))):
            if exact > 0:
                worst_m = max(worst_m, abs(float(val) - exact) / exact)
    default = float(beta_integral(NoiseSchedule(), 1.0))
    return [
        Check("schedule.integral_vs_quadrature", worst_i < 1e-10, worst_i, 1e-10),
        Check("schedule.moments_vs_quadrature", worst_m < 1e-10, worst_m, 1e-10),
        Check("schedule.default_integral_t1", abs(default - 10.025) < 1e-12, abs(default - 10.025), 1e-12),
    ]


def check_gradients(sched, rng) -> list[Check]:
    dim, n = 2, 6
    net = ScoreNet.create(dim, sched, hidden=(4,), seed=int(rng.integers(2**31)), dtype=np.float64)
    batch = TrainBatch(
        rng.standard_normal((n, dim)), rng.standard_normal((n, dim)), rng.integers(0, 3, n),
        rng.uniform(0.05, 1.0, n), rng.standard_normal((n, dim)),
    )
    _, grads = dsm_loss(net, batch, sched)
    s_rel, _ = gradient_check(lambda: dsm_loss(net, batch, sched, need_grads=False)[0], net.mlp.params, grads)

    phones = ["a", "b", "c"]
    clf = PhoneClassifier.create(phones, dim, sched, hidden=(4,), seed=int(rng.integers(2**31)), dtype=np.float64)
    x = rng.standard_normal((n, dim))
    t = rng.uniform(0.0, 1.0, n)
    y = rng.integers(0, 3, n)
    _, cgrads = cross_entropy(clf, x, t, y)
    c_rel, _ = gradient_check(lambda: cross_entropy(clf, x, t, y, need_grads=False)[0], clf.mlp.params, cgrads)
    return [
        Check("score_net.gradient_check", s_rel < 1e-4, s_rel, 1e-4, f"{net.mlp.n_params()} parameters"),
        Check("classifier.gradient_check", c_rel < 1e-4, c_rel, 1e-4, f"{clf.mlp.n_params()} parameters"),
    ]


def check_loss_identity(sched, rng) -> list[Check]:
    n, dim = 64, 3
    batch = TrainBatch(
        rng.standard_normal((n, dim)), rng.standard_normal((n, dim)), np.zeros(n, np.int64),
        rng.uniform(1e-3, 1.0, n), rng.standard_normal((n, dim)),
    )
    exact = dsm_objective(dsm_target(batch, sched), batch, sched)
    zero_net = ScoreNet.zeros(dim, sched, hidden=(4,), dtype=np.float64)
    zero = dsm_loss(zero_net, batch, sched, need_grads=False)[0]
    ref = float(np.mean(np.sum(batch.eps**2, axis=1)))
    return [
        Check("dsm.exact_target_loss", exact < 1e-12, exact, 1e-12),
        Check("dsm.zero_net_loss", abs(zero - ref) < 1e-9, abs(zero - ref), 1e-9),
    ]


def check_ode_sde(sched, rng, n_chains=4000, n_steps=400) -> list[Check]:
    """Terminal moments of ODE and SDE chains driven by the exact score."""
    mu = np.array([0.3, -0.2])
    m0 = np.array([1.0, -1.0])
    v0 = np.array([0.5, 1.2])
    mu_rows = np.tile(mu, (n_chains, 1))

    def score(x, t):
        return true_score_gaussian(sched, t, x, mu, m0, v0)

    out = {}
    for kind in ("euler_ode", "euler_sde"):
        gcfg = GuidanceConfig(alpha=0.0, n_steps=n_steps, sampler_kind=kind)
        x = sample_prior(mu_rows, sched, rng)
        out[kind], _, _ = run_reverse(x, mu_rows, score, sched, gcfg, rng)
    a, b = out["euler_ode"], out["euler_sde"]
    va, vb = a.var(axis=0, ddof=1), b.var(axis=0, ddof=1)
    z_mean = np.max(np.abs(a.mean(0) - b.mean(0)) / np.sqrt((va + vb) / n_chains))
    z_var = np.max(np.abs(va - vb) / np.sqrt(2 * (va**2 + vb**2) / (n_chains - 1)))
    return [
        Check("sampler.ode_sde_mean_z", z_mean < 3.0, float(z_mean), 3.0, f"{n_chains} chains, {n_steps} steps"),
        Check("sampler.ode_sde_var_z", z_var < 3.0, float(z_var), 3.0, f"{n_chains} chains, {n_steps} steps"),
    ]


def check_guidance(sched, rng) -> list[Check]:
    dim = 3
    phones = ["a", "b", "c", "d"]
    net = ScoreNet.create(dim, sched, hidden=(8,), seed=int(rng.integers(2**31)))
    clf = PhoneClassifier.create(phones, dim, sched, hidden=(8,), seed=int(rng.integers(2**31)))
    labels = ["a", "a", "b", "c", "c", "c", "d", "b"]
    mu = rng.standard_normal((len(labels), dim))
    x0 = sample_prior(mu, sched, rng)
    weights = FrameWeights.for_impaired(["c"], 5.0)
    plain, _ = sample_chains(x0, mu, net, None, 0, labels, GuidanceConfig(alpha=0.0, n_steps=10))
    zero, _ = sample_chains(x0, mu, net, clf, 0, labels, GuidanceConfig(alpha=0.0, weights=weights, n_steps=10))
    identical = bool(np.array_equal(plain, zero))
    alpha = 0.3
    _, traj = sample_chains(x0, mu, net, clf, 0, labels, GuidanceConfig(alpha=alpha, weights=weights, n_steps=10))
    push = traj.gamma * traj.guidance_norm
    rel = float(np.max(np.abs(push - alpha * traj.score_norm) / (alpha * traj.score_norm)))
    return [
        Check("guidance.alpha0_bit_identical", identical, float(np.max(np.abs(plain - zero))), 0.0),
        Check("guidance.norm_identity", rel < 1e-9, rel, 1e-9),
    ]


def check_checkpoint(path) -> Check:
    try:
        mlp, rec = load_checkpoint(path)
        for p in mlp.params:
            if not np.all(np.isfinite(p)):
                raise GuidedSynthError("non-finite parameters")
    except (GuidedSynthError, OSError, ValueError) as exc:
        return Check(f"checkpoint:{path}", False, None, None, f"{type(exc).__name__}: {exc}")
    return Check(f"checkpoint:{path}", True, None, None, f"kind={rec.get('kind')}")


def run_checks(config: RunConfig | None = None, checkpoints=()) -> dict:
    """Run every invariant check; returns a JSON-ready report."""
    config = config or RunConfig()
    sched = config.schedule.build()
    rng = np.random.default_rng(derive_seed(config.seed, "verify"))
    t0 = time.perf_counter()
    checks = []
    checks += check_schedule(rng)
    checks += check_gradients(sched, rng)
    checks += check_loss_identity(sched, rng)
    checks += check_ode_sde(sched, rng)
    checks += check_guidance(sched, rng)
    checks += [check_checkpoint(Path(p)) for p in checkpoints]
    return {
        "passed": all(c.passed for c in checks),
        "n_checks": len(checks),
        "n_failed": sum(not c.passed for c in checks),
        "seconds": round(time.perf_counter() - t0, 3),
        "checks": [asdict(c) for c in checks],
    }
