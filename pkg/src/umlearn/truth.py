"""Ground-truth distributions: samplers, densities, Gaussian fits and KL oracles.

Three families are supported: a single Gaussian, a finite Gaussian mixture and
a categorical (multinomial) distribution.  All specs are immutable; samplers
take an explicit ``numpy.random.Generator`` so every stream is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ModelSupportError

_LOG_2PI = np.log(2.0 * np.pi)


def _as_spd(cov, name="cov") -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} must be positive definite") from None
    return cov


def sym_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix via its eigendecomposition."""
    w, v = np.linalg.eigh(cov)
    return (v * np.sqrt(w)) @ v.T


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_spd(self.cov)
        if cov.shape[0] != mean.shape[0]:
            raise ConfigError("mean and cov dimensions differ")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        chol = np.linalg.cholesky(self.cov)
        z = np.linalg.solve(chol, (x - self.mean).T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        return -0.5 * (self.dim * _LOG_2PI + logdet + (z * z).sum(axis=0))


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Gaussian mixture; ``covs`` holds one covariance per component."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = np.broadcast_to(covs, (len(w),) + covs.shape).copy()
        if w.ndim != 1 or len(w) != means.shape[0] or len(w) != covs.shape[0]:
            raise ConfigError("mixture weights, means and covs disagree in length")
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must lie in (0, 1] and sum to 1")
        for k, c in enumerate(covs):
            _as_spd(c, f"covs[{k}]")
        if covs.shape[1] != means.shape[1]:
            raise ConfigError("component dimensions differ")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def components(self) -> list[GaussianSpec]:
        return [GaussianSpec(m, c) for m, c in zip(self.means, self.covs)]

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        per = np.stack([np.log(w) + g.logpdf(x) for w, g in zip(self.weights, self.components())])
        return logsumexp(per, axis=0)


@dataclass(frozen=True, eq=False)
class MultinomialSpec:
    """Categorical distribution over ``0..K-1``."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 1 or len(pi) < 2:
            raise ConfigError("pi must be a vector with at least 2 categories")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ConfigError("pi must lie on the probability simplex")
        object.__setattr__(self, "pi", pi)

    @property
    def categories(self) -> int:
        return len(self.pi)

    def logpdf(self, k) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pi[np.asarray(k, dtype=int)])


DistributionSpec = Union[GaussianSpec, MixtureSpec, MultinomialSpec]


def sample(spec: DistributionSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. observations.

    Gaussian draws use the symmetric square root of the covariance.  Mixtures
    consume one uniform (component choice by inverse CDF) and then one normal
    vector per sample, in that order.  Categorical draws use one uniform each.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if isinstance(spec, GaussianSpec):
        z = rng.standard_normal((n, spec.dim))
        return spec.mean + z @ sym_sqrt(spec.cov)
    if isinstance(spec, MixtureSpec):
        return sample_components(spec, rng, n)[0]
    if isinstance(spec, MultinomialSpec):
        u = rng.random(n)
        k = np.searchsorted(np.cumsum(spec.pi), u, side="right")
        return np.minimum(k, spec.categories - 1)
    raise TypeError(f"unsupported spec {type(spec).__name__}")


def sample_components(spec: MixtureSpec, rng: np.random.Generator, n: int):
    """Like :func:`sample` for a mixture, also returning component labels."""
    u = rng.random(n)
    comp = np.minimum(np.searchsorted(np.cumsum(spec.weights), u, side="right"), len(spec.weights) - 1)
    z = rng.standard_normal((n, spec.dim))
    roots = np.stack([sym_sqrt(c) for c in spec.covs])
    return spec.means[comp] + np.einsum("ni,nij->nj", z, roots[comp]), comp


def moment_match_gaussian(spec: DistributionSpec) -> GaussianSpec:
    """Gaussian with the same first two moments (the KL-optimal Gaussian fit)."""
    if isinstance(spec, GaussianSpec):
        return spec
    if not isinstance(spec, MixtureSpec):
        raise TypeError("moment matching needs a Gaussian or mixture spec")
    w = spec.weights
    mean = w @ spec.means
    second = np.einsum("c,cij->ij", w, spec.covs + np.einsum("ci,cj->cij", spec.means, spec.means))
    cov = second - np.outer(mean, mean)
    return GaussianSpec(mean, 0.5 * (cov + cov.T))


def kl_gaussian(p: GaussianSpec, q: GaussianSpec) -> float:
    """Closed-form KL(p || q) between multivariate Gaussians."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.cov, q.cov):
        return 0.0
    try:
        lq = np.linalg.cholesky(q.cov)
    except np.linalg.LinAlgError:
        raise ValueError("q.cov is singular") from None
    lp = np.linalg.cholesky(p.cov)
    a = np.linalg.solve(lq, lp)
    diff = np.linalg.solve(lq, q.mean - p.mean)
    logdet_q = 2.0 * np.log(np.diag(lq)).sum()
    logdet_p = 2.0 * np.log(np.diag(lp)).sum()
    kl = 0.5 * ((a * a).sum() - p.dim + diff @ diff + logdet_q - logdet_p)
    return max(float(kl), 0.0)


def kl_multinomial(p: MultinomialSpec, q: MultinomialSpec) -> float:
    mask = p.pi > 0
    if np.any(q.pi[mask] == 0):
        return float("inf")
    return float(np.sum(p.pi[mask] * (np.log(p.pi[mask]) - np.log(q.pi[mask]))))


def kl_monte_carlo(
    p: DistributionSpec,
    q_logpdf: Callable[[np.ndarray], np.ndarray],
    n: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo estimate of KL(p || q) and its standard error."""
    x = sample(p, rng, n)
    diff = p.logpdf(x) - q_logpdf(x)
    if not np.all(np.isfinite(diff)):
        raise ModelSupportError("non-finite log density ratio: q does not cover p's samples")
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n))


def spec_from_json(obj: dict) -> DistributionSpec:
    kind = obj.get("type")
    try:
        if kind == "gaussian":
            return GaussianSpec(obj["mean"], obj["cov"])
        if kind == "mixture":
            means = obj["means"]
            if "covs" in obj:
                covs = obj["covs"]
            else:
                covs = obj["cov"]
            weights = obj.get("weights")
            if weights is None:
                weights = [1.0 / len(means)] * len(means)
            return MixtureSpec(weights, means, covs)
        if kind == "multinomial":
            return MultinomialSpec(obj["pi"])
    except KeyError as exc:
        raise ConfigError(f"{kind} spec is missing field {exc}") from None
    raise ConfigError(f"unknown distribution type {kind!r}")


def spec_to_json(spec: DistributionSpec) -> dict:
    if isinstance(spec, GaussianSpec):
        return {"type": "gaussian", "mean": spec.mean.tolist(), "cov": spec.cov.tolist()}
    if isinstance(spec, MixtureSpec):
        return {
            "type": "mixture",
            "weights": spec.weights.tolist(),
            "means": spec.means.tolist(),
            "covs": spec.covs.tolist(),
        }
    return {"type": "multinomial", "pi": spec.pi.tolist()}


# Observation models of the well-specified Gaussian experiment.
TABLE_I = {
    "Q1": GaussianSpec([0.0, 0.0], np.eye(2)),
    "Q2": GaussianSpec([0.0, 0.0], 1.1 * np.eye(2)),
    "Q3": GaussianSpec([0.0, 0.0], 1.5 * np.eye(2)),
}

_CORNERS = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])

# Four-component mixtures of the misspecified experiment.
TABLE_III = {
    "Q1": MixtureSpec([0.25] * 4, 1.5 * _CORNERS, 0.12 * np.eye(2)),
    "Q2": MixtureSpec([0.25] * 4, 1.0 * _CORNERS, 1.37 * np.eye(2)),
    "Q3": MixtureSpec([0.25] * 4, 1.5 * _CORNERS, 0.25 * np.eye(2)),
}
