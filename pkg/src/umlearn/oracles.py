"""Independent cross-checks of the conjugate machinery.

The recursive path (one ``UncertainModel.step`` per observation) is compared
with the closed-form normalizer ratio of the pooled data, and in one
dimension the Student-t predictive is compared with direct numerical
integration of the Gaussian likelihood against the Normal-Inverse-Gamma
posterior.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import integrate

from .conjugate import GAUSSIAN, MULTINOMIAL, NiwParams, UncertainModel, batch_log_ulr, niw_absorb_batch, niw_log_predictive

BATCH_TOL = 1e-8
QUAD_TOL = 1e-6


def recursive_log_ulr(model: UncertainModel, observations) -> float:
    total = 0.0
    for omega in observations:
        log_ell, model = model.step(omega)
        total += log_ell
    return total


def random_multinomial_instance(rng: np.random.Generator):
    K = int(rng.integers(2, 9))
    r = rng.multinomial(int(rng.integers(0, 51)), rng.dirichlet(np.ones(K)))
    obs = rng.choice(K, size=int(rng.integers(0, 201)), p=rng.dirichlet(np.ones(K)))
    return r, obs


def random_gaussian_instance(rng: np.random.Generator, dim: Optional[int] = None):
    d = int(rng.integers(1, 4)) if dim is None else dim
    root = rng.normal(size=(d, d)) + 2.0 * np.eye(d)
    center = rng.normal(size=d)
    r = center + rng.normal(size=(int(rng.integers(0, 51)), d)) @ root
    obs = center + rng.normal(size=(int(rng.integers(0, 201)), d)) @ root
    return r, obs


def recursion_vs_batch_multinomial(rng: np.random.Generator, instances: int) -> float:
    worst = 0.0
    for _ in range(instances):
        r, obs = random_multinomial_instance(rng)
        rec = recursive_log_ulr(UncertainModel.from_evidence(MULTINOMIAL, r), obs)
        worst = max(worst, abs(rec - batch_log_ulr(MULTINOMIAL, r, obs)))
    return worst


def recursion_vs_batch_gaussian(rng: np.random.Generator, instances: int, dim: Optional[int] = None) -> float:
    worst = 0.0
    for _ in range(instances):
        r, obs = random_gaussian_instance(rng, dim)
        d = r.shape[1]
        rec = recursive_log_ulr(UncertainModel.from_evidence(GAUSSIAN, r, size=d), obs)
        batch = batch_log_ulr(GAUSSIAN, r, obs, NiwParams.weakly_informative(d))
        worst = max(worst, abs(rec - batch))
    return worst


def quadrature_predictive_1d(params: NiwParams, omega: float) -> float:
    """log of the d=1 posterior predictive by integrating over (mean, variance).

    In one dimension the inverse-Wishart factor is an inverse-gamma law with
    shape nu/2 and scale S/2, and the mean is normal with variance
    sigma^2 / kappa.
    """
    if params.dim != 1:
        raise ValueError("quadrature oracle is one-dimensional")
    kappa, nu = params.kappa, params.nu
    center, scale = float(params.varpi[0]), float(params.S[0, 0])
    a, b = 0.5 * nu, 0.5 * scale
    log_norm_ig = a * math.log(b) - math.lgamma(a)

    def inner(s2):
        sd = math.sqrt(s2)
        lo, hi = min(center, omega) - 12.0 * sd, max(center, omega) + 12.0 * sd

        # N(omega; mu, s2) * N(mu; center, s2 / kappa)
        def f(mu):
            q = (omega - mu) ** 2 + kappa * (mu - center) ** 2
            return math.sqrt(kappa) / (2.0 * math.pi * s2) * math.exp(-0.5 * q / s2)

        mass = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-10, limit=100)[0]
        # inverse-gamma density of the variance
        return mass * math.exp(log_norm_ig - (a + 1.0) * math.log(s2) - b / s2)

    mode = 0.5 * scale / (0.5 * nu + 1.0)
    pieces = [0.0, mode, 10.0 * mode, 1e3 * mode, np.inf]
    total = sum(
        integrate.quad(inner, a, b, epsabs=0.0, epsrel=1e-9, limit=200)[0] for a, b in zip(pieces, pieces[1:])
    )
    return float(np.log(total))


def random_niw_1d(rng: np.random.Generator) -> NiwParams:
    prior = NiwParams.weakly_informative(1)
    n = int(rng.integers(0, 6))
    if n == 0:
        return prior
    return niw_absorb_batch(prior, rng.normal(rng.normal(), rng.uniform(0.5, 2.0), size=(n, 1)))


def quadrature_predictive_check(rng: np.random.Generator, instances: int) -> float:
    worst = 0.0
    for _ in range(instances):
        params = random_niw_1d(rng)
        omega = float(params.varpi[0] + rng.normal(scale=2.0))
        closed = niw_log_predictive(params, np.array([omega]))
        worst = max(worst, abs(closed - quadrature_predictive_1d(params, omega)))
    return worst
