"""Forward noising in closed form, checked against simulation.

The forward process pulls a frame toward its phone mean ``mu`` while adding
noise. Its marginal at time t is Gaussian with known mean and variance, so
the diffusion can be sampled in one shot instead of simulated step by step.
"""

import numpy as np

from guidedsynth import NoiseSchedule, beta_integral, forward_sample, moments_at, true_score_gaussian
from guidedsynth.schedule import beta_at, gaussian_marginal

sched = NoiseSchedule(beta0=0.05, beta1=20.0)
print("integral of beta over [0, 1]:", beta_integral(sched, 1.0))

# How fast the data is forgotten: weight on x0 and noise variance along t.
for t in (0.0, 0.1, 0.25, 0.5, 1.0):
    m = moments_at(sched, t)
    print(f"t={t:4.2f}  weight on x0 {m.rho_coeff_x0:.4f}  weight on mu {m.rho_coeff_mu:.4f}  var {m.sigma2:.4f}")

# One-shot sampling against a brute-force Euler simulation of the SDE.
rng = np.random.default_rng(0)
n = 20_000
x0 = np.full((n, 1), 2.0)
mu = np.zeros((n, 1))
x = x0.copy()
steps = 1000
for k in range(steps):
    b = beta_at(sched, k / steps)
    x += 0.5 * b * (mu - x) / steps + np.sqrt(b / steps) * rng.standard_normal(x.shape)
shot = forward_sample(sched, 1.0, x0, mu, rng.standard_normal(x0.shape))
print(f"t=1 simulated mean {x.mean():+.4f} var {x.var():.4f}")
print(f"t=1 one-shot  mean {shot.mean():+.4f} var {shot.var():.4f}")

# With Gaussian data the score of every marginal is known exactly.
mean, var = gaussian_marginal(sched, 0.3, np.zeros(1), np.array([2.0]), np.array([0.25]))
probe = np.array([[mean[0] - 1.0], [mean[0]], [mean[0] + 1.0]])
print("analytic score at t=0.3:", true_score_gaussian(sched, 0.3, probe, np.zeros((3, 1)), np.array([2.0]),
                                                      np.array([0.25])).ravel())
