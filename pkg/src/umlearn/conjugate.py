"""Conjugate uncertain-likelihood machinery for two likelihood families.

Multinomial likelihoods use a Dirichlet prior; multivariate Gaussian
likelihoods (unknown mean and covariance) use a Normal-Inverse-Wishart prior.
For each family this module provides

* hyperparameter updates (one observation at a time and in batch),
* posterior predictive densities,
* the per-observation uncertain likelihood update ``log ell``,
* the batch uncertain likelihood ratio ``log Lambda`` written as a ratio of
  normalizers (an oracle independent of the per-step recursion),
* the asymptotic ratio ``log Lambda~`` (posterior over prior density at the
  KL-optimal parameters),
* vectorized predictive streams used by the simulation harness.

Everything is carried in log space.  Categories are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from scipy.special import gammaln, multigammaln

from .errors import DegenerateStateError, ModelSupportError
from .truth import GaussianSpec, MultinomialSpec, spec_from_json, spec_to_json

MULTINOMIAL = "multinomial"
GAUSSIAN = "gaussian"
FAMILIES = (MULTINOMIAL, GAUSSIAN)
CERTAIN = "CERTAIN"

# Exact likelihood parameters used by certain agents.
LikelihoodParams = Union[MultinomialSpec, GaussianSpec]

SPD_PIVOT_TOL = 1e-10


def check_spd(S: np.ndarray, what: str = "S") -> np.ndarray:
    """Return the Cholesky factor of ``S``; raise if the smallest pivot is too small."""
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise DegenerateStateError(f"{what} is not positive definite") from None
    pivots = np.diag(chol) ** 2
    scale = max(float(np.max(np.abs(np.diag(S)))), 1.0)
    if pivots.min() <= SPD_PIVOT_TOL * scale:
        raise DegenerateStateError(f"{what} is numerically singular (pivot {pivots.min():.3g})")
    return chol


# ---------------------------------------------------------------------------
# Dirichlet / multinomial


@dataclass(frozen=True, eq=False)
class DirichletParams:
    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        if psi.ndim != 1 or len(psi) < 2:
            raise ValueError("Dirichlet parameters need K >= 2 entries")
        if not np.all(psi > 0) or not np.all(np.isfinite(psi)):
            raise ValueError("Dirichlet parameters must be positive and finite")
        object.__setattr__(self, "psi", psi)

    @classmethod
    def vacuous(cls, k: int) -> "DirichletParams":
        return cls(np.ones(k))

    @property
    def categories(self) -> int:
        return len(self.psi)

    def to_json(self) -> dict:
        return {"psi": self.psi.tolist()}


def dirichlet_absorb(params: DirichletParams, category: int) -> DirichletParams:
    k = int(category)
    if not 0 <= k < params.categories:
        raise ValueError(f"category {category} outside 0..{params.categories - 1}")
    psi = params.psi.copy()
    psi[k] += 1.0
    return DirichletParams(psi)


def dirichlet_absorb_counts(params: DirichletParams, counts) -> DirichletParams:
    """Batch update: psi(r) = r + psi."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape != params.psi.shape or np.any(counts < 0):
        raise ValueError("counts must be a nonnegative vector of length K")
    return DirichletParams(params.psi + counts)


def log_multivariate_beta(psi) -> float:
    psi = np.asarray(psi, dtype=float)
    return float(gammaln(psi).sum() - gammaln(psi.sum()))


def dirichlet_log_predictive(params: DirichletParams, category: int) -> float:
    return float(np.log(params.psi[category]) - np.log(params.psi.sum()))


def dirichlet_logpdf(params: DirichletParams, pi) -> float:
    pi = np.asarray(pi, dtype=float)
    return float(np.sum((params.psi - 1.0) * np.log(pi)) - log_multivariate_beta(params.psi))


# ---------------------------------------------------------------------------
# Normal-Inverse-Wishart / Gaussian


@dataclass(frozen=True, eq=False)
class NiwParams:
    varpi: np.ndarray
    kappa: float
    nu: float
    S: np.ndarray

    def __post_init__(self):
        varpi = np.atleast_1d(np.asarray(self.varpi, dtype=float))
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        d = varpi.shape[0]
        if S.shape != (d, d):
            raise ValueError("S must be d x d")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.nu > d - 1:
            raise ValueError("nu must exceed d - 1")
        S = 0.5 * (S + S.T)
        check_spd(S)
        object.__setattr__(self, "varpi", varpi)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "nu", float(self.nu))

    @classmethod
    def weakly_informative(cls, d: int) -> "NiwParams":
        """kappa0 = 1, nu0 = d + 2, varpi0 = 0, S0 = I."""
        return cls(np.zeros(d), 1.0, d + 2.0, np.eye(d))

    @property
    def dim(self) -> int:
        return self.varpi.shape[0]

    def to_json(self) -> dict:
        return {"varpi": self.varpi.tolist(), "kappa": self.kappa, "nu": self.nu, "S": self.S.tolist()}


def niw_absorb_one(params: NiwParams, omega) -> NiwParams:
    omega = np.asarray(omega, dtype=float)
    k0, v0 = params.kappa, params.varpi
    k1 = k0 + 1.0
    v1 = (k0 * v0 + omega) / k1
    S = params.S + np.outer(omega, omega) + k0 * np.outer(v0, v0) - k1 * np.outer(v1, v1)
    return NiwParams(v1, k1, params.nu + 1.0, S)


def niw_absorb_batch(prior: NiwParams, data) -> NiwParams:
    """Absorb a nonempty batch of d-vectors.

    The scatter is formed as ``S0 + C + (k0 n / (k0 + n)) (xbar - v0)(xbar - v0)'``
    with ``C`` the centred scatter, which equals the uncentred textbook form
    but keeps large-sample sums from cancelling.
    """
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch; skip the call instead")
    k0, v0 = prior.kappa, prior.varpi
    xbar = x.mean(axis=0)
    centred = x - xbar
    scatter = centred.T @ centred
    dev = xbar - v0
    kappa = k0 + n
    S = prior.S + scatter + (k0 * n / kappa) * np.outer(dev, dev)
    return NiwParams((k0 * v0 + n * xbar) / kappa, kappa, prior.nu + n, S)


def log_niw_normalizer(params: NiwParams) -> float:
    """log Z = (nu d / 2) log 2 + log Gamma_d(nu / 2) + (d / 2) log(2 pi / kappa) - (nu / 2) log|S|."""
    d = params.dim
    _, logdet = np.linalg.slogdet(params.S)
    return float(
        0.5 * params.nu * d * np.log(2.0)
        + multigammaln(0.5 * params.nu, d)
        + 0.5 * d * np.log(2.0 * np.pi / params.kappa)
        - 0.5 * params.nu * logdet
    )


def niw_logpdf(params: NiwParams, mean, cov) -> float:
    """Log density of the NIW distribution at (mean, cov)."""
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = params.dim
    chol = check_spd(cov, "cov")
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    inv = np.linalg.inv(cov)
    dev = mean - params.varpi
    return float(
        -log_niw_normalizer(params)
        - 0.5 * (params.nu + d + 2.0) * logdet
        - 0.5 * np.trace(inv @ params.S)
        - 0.5 * params.kappa * dev @ inv @ dev
    )


def student_t_logpdf(omega, nu_hat: float, center, shape) -> np.ndarray | float:
    """Multivariate Student-t log density; ``omega`` may be one point or a stack of rows."""
    if not nu_hat > 0:
        raise ValueError("nu_hat must be positive")
    shape = np.atleast_2d(np.asarray(shape, dtype=float))
    try:
        chol = np.linalg.cholesky(shape)
    except np.linalg.LinAlgError:
        raise ValueError("shape matrix is not positive definite") from None
    d = shape.shape[0]
    omega = np.asarray(omega, dtype=float)
    single = omega.ndim <= 1 and omega.size == d
    x = omega.reshape(-1, d)
    z = np.linalg.solve(chol, (x - np.asarray(center, dtype=float)).T)
    q = (z * z).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    out = (
        gammaln(0.5 * (nu_hat + d))
        - gammaln(0.5 * nu_hat)
        - 0.5 * d * np.log(nu_hat * np.pi)
        - 0.5 * logdet
        - 0.5 * (nu_hat + d) * np.log1p(q / nu_hat)
    )
    return float(out[0]) if single else out


def predictive_t_params(params: NiwParams) -> tuple[float, np.ndarray, np.ndarray]:
    """Degrees of freedom, centre and shape of the NIW posterior predictive."""
    d = params.dim
    nu_hat = params.nu - d + 1.0
    shape = (params.kappa + 1.0) / (params.kappa * nu_hat) * params.S
    return nu_hat, params.varpi, shape


def niw_log_predictive(params: NiwParams, omega) -> float:
    return student_t_logpdf(np.asarray(omega, dtype=float), *predictive_t_params(params))


# ---------------------------------------------------------------------------
# Uncertain models


State = Union[DirichletParams, NiwParams]


def default_prior(family: str, size: int) -> State:
    """Vacuous Dirichlet (all ones) or the weakly-informative NIW prior."""
    if family == MULTINOMIAL:
        return DirichletParams.vacuous(size)
    if family == GAUSSIAN:
        return NiwParams.weakly_informative(size)
    raise ValueError(f"unknown family {family!r}")


def absorb_evidence(family: str, prior: State, evidence) -> State:
    """Hyperparameters after the prior evidence (counts or a batch of points)."""
    if family == MULTINOMIAL:
        return dirichlet_absorb_counts(prior, evidence)
    x = np.asarray(evidence, dtype=float).reshape(-1, prior.dim)
    return prior if len(x) == 0 else niw_absorb_batch(prior, x)


def evidence_size(family: str, evidence) -> int:
    if family == MULTINOMIAL:
        return int(np.asarray(evidence).sum())
    return int(np.atleast_2d(np.asarray(evidence, dtype=float)).shape[0]) if np.size(evidence) else 0


@dataclass(frozen=True, eq=False)
class UncertainModel:
    """One (agent, hypothesis) stream of uncertain likelihood updates.

    ``theta_state`` is conditioned on evidence and observations, and is
    ``None`` for a certain agent, which instead carries ``certain_params``.
    ``ignorance_state`` is conditioned on the observations alone.
    """

    family: str
    theta_state: Optional[State]
    ignorance_state: State
    log_ulr: float = 0.0
    evidence_count: Union[int, str] = 0
    certain_params: Optional[LikelihoodParams] = None
    t: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        certain = self.evidence_count == CERTAIN
        if certain != (self.certain_params is not None):
            raise ValueError("certain_params must be present exactly when evidence_count is CERTAIN")
        if not certain and self.theta_state is None:
            raise ValueError("finite-evidence model needs a theta_state")

    @classmethod
    def from_evidence(cls, family: str, evidence, prior: Optional[State] = None, size: Optional[int] = None):
        """Build from prior evidence: a count vector (multinomial) or an (n, d) array."""
        if prior is None:
            if size is None:
                size = len(evidence) if family == MULTINOMIAL else np.atleast_2d(evidence).shape[1]
            prior = default_prior(family, size)
        return cls(family, absorb_evidence(family, prior, evidence), prior, 0.0, evidence_size(family, evidence))

    @classmethod
    def certain(cls, params: LikelihoodParams, prior: Optional[State] = None):
        if isinstance(params, MultinomialSpec):
            family, size = MULTINOMIAL, params.categories
        elif isinstance(params, GaussianSpec):
            family, size = GAUSSIAN, params.dim
        else:
            raise TypeError("certain params must be a MultinomialSpec or GaussianSpec")
        prior = default_prior(family, size) if prior is None else prior
        return cls(family, None, prior, 0.0, CERTAIN, params)

    @property
    def is_certain(self) -> bool:
        return self.evidence_count == CERTAIN

    def step(self, omega) -> tuple[float, "UncertainModel"]:
        """Absorb one observation; return ``log ell`` and the updated model."""
        if self.is_certain:
            log_ell, ign = certain_ull(self.certain_params, self.ignorance_state, omega)
            return log_ell, replace(self, ignorance_state=ign, log_ulr=self.log_ulr + log_ell, t=self.t + 1)
        if self.family == MULTINOMIAL:
            return multinomial_ull(self, omega)
        return mvn_ull(self, omega)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "theta_state": None if self.theta_state is None else self.theta_state.to_json(),
            "ignorance_state": self.ignorance_state.to_json(),
            "log_ulr": self.log_ulr,
            "evidence_count": self.evidence_count,
            "certain_params": None if self.certain_params is None else spec_to_json(self.certain_params),
            "t": self.t,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UncertainModel":
        family = obj["family"]

        def state(s):
            if s is None:
                return None
            if family == MULTINOMIAL:
                return DirichletParams(s["psi"])
            return NiwParams(s["varpi"], s["kappa"], s["nu"], s["S"])

        certain = obj.get("certain_params")
        return cls(
            family,
            state(obj.get("theta_state")),
            state(obj["ignorance_state"]),
            float(obj["log_ulr"]),
            obj["evidence_count"],
            None if certain is None else spec_from_json(certain),
            int(obj.get("t", 0)),
        )


def multinomial_ull(state: UncertainModel, category: int) -> tuple[float, UncertainModel]:
    """log ell = log[(n_k + r_k + 1)(t + K)] - log[(|r| + t + K)(n_k + 1)] for the vacuous prior."""
    if state.family != MULTINOMIAL or state.is_certain:
        raise ValueError("multinomial_ull needs a finite-evidence multinomial model")
    k = int(category)
    num = dirichlet_log_predictive(state.theta_state, k)
    den = dirichlet_log_predictive(state.ignorance_state, k)
    log_ell = num - den
    new = replace(
        state,
        theta_state=dirichlet_absorb(state.theta_state, k),
        ignorance_state=dirichlet_absorb(state.ignorance_state, k),
        log_ulr=state.log_ulr + log_ell,
        t=state.t + 1,
    )
    return log_ell, new


def mvn_ull(state: UncertainModel, omega) -> tuple[float, UncertainModel]:
    """Ratio of the two Student-t posterior predictives, then absorb ``omega``."""
    if state.family != GAUSSIAN or state.is_certain:
        raise ValueError("mvn_ull needs a finite-evidence Gaussian model")
    omega = np.asarray(omega, dtype=float)
    log_ell = niw_log_predictive(state.theta_state, omega) - niw_log_predictive(state.ignorance_state, omega)
    new = replace(
        state,
        theta_state=niw_absorb_one(state.theta_state, omega),
        ignorance_state=niw_absorb_one(state.ignorance_state, omega),
        log_ulr=state.log_ulr + log_ell,
        t=state.t + 1,
    )
    return log_ell, new


def certain_ull(params: LikelihoodParams, ignorance_state: State, omega) -> tuple[float, State]:
    """Exact likelihood over the ignorance predictive; the ignorance state absorbs ``omega``."""
    if isinstance(params, MultinomialSpec):
        k = int(omega)
        if params.pi[k] == 0:
            raise ModelSupportError(f"category {k} has zero probability under the certain model")
        log_ell = float(np.log(params.pi[k])) - dirichlet_log_predictive(ignorance_state, k)
        return log_ell, dirichlet_absorb(ignorance_state, k)
    omega = np.asarray(omega, dtype=float)
    log_ell = float(params.logpdf(omega)[0]) - niw_log_predictive(ignorance_state, omega)
    return log_ell, niw_absorb_one(ignorance_state, omega)


# ---------------------------------------------------------------------------
# Batch ratio and asymptotic target


def _category_counts(observations, k: int) -> np.ndarray:
    obs = np.asarray(observations, dtype=int).ravel()
    if obs.size and (obs.min() < 0 or obs.max() >= k):
        raise ValueError("observation category out of range")
    return np.bincount(obs, minlength=k).astype(float)


def batch_log_ulr(family: str, evidence, observations, prior: Optional[State] = None) -> float:
    """log Lambda(t) from closed-form normalizers of the pooled data sets.

    ``log Z(r + w) + log Z(prior) - log Z(w) - log Z(r)`` with the multivariate
    beta function (multinomial) or the NIW normalizer (Gaussian).  Evidence is
    a count vector for the multinomial family and an (n, d) array otherwise.
    """
    if family == MULTINOMIAL:
        r = np.asarray(evidence, dtype=float)
        psi0 = DirichletParams.vacuous(len(r)).psi if prior is None else prior.psi
        n = _category_counts(observations, len(r))
        # paired so that empty evidence cancels exactly
        return (log_multivariate_beta(psi0 + r + n) - log_multivariate_beta(psi0 + n)) + (
            log_multivariate_beta(psi0) - log_multivariate_beta(psi0 + r)
        )
    if family != GAUSSIAN:
        raise ValueError(f"unknown family {family!r}")
    obs = np.asarray(observations, dtype=float)
    d = prior.dim if prior is not None else np.atleast_2d(obs if obs.size else evidence).shape[1]
    prior = NiwParams.weakly_informative(d) if prior is None else prior
    r = np.asarray(evidence, dtype=float).reshape(-1, d)
    w = obs.reshape(-1, d)

    def log_z(data):
        return log_niw_normalizer(prior if len(data) == 0 else niw_absorb_batch(prior, data))

    return (log_z(np.vstack([r, w])) - log_z(w)) + (log_z(w[:0]) - log_z(r))


def asymptotic_log_ulr(family: str, evidence, truth_params: LikelihoodParams, prior: Optional[State] = None) -> float:
    """log of f(phi* | psi(r)) / f0(phi*), the finite-evidence limit of log Lambda."""
    if family == MULTINOMIAL:
        pi = np.asarray(truth_params.pi, dtype=float)
        if np.any(pi <= 0):
            raise ModelSupportError("truth lies on the simplex boundary")
        r = np.asarray(evidence, dtype=float)
        prior = DirichletParams.vacuous(len(r)) if prior is None else prior
        return dirichlet_logpdf(dirichlet_absorb_counts(prior, r), pi) - dirichlet_logpdf(prior, pi)
    if family != GAUSSIAN:
        raise ValueError(f"unknown family {family!r}")
    try:
        check_spd(truth_params.cov, "truth covariance")
    except DegenerateStateError as exc:
        raise ModelSupportError(str(exc)) from None
    prior = NiwParams.weakly_informative(truth_params.dim) if prior is None else prior
    post = absorb_evidence(GAUSSIAN, prior, evidence)
    return niw_logpdf(post, truth_params.mean, truth_params.cov) - niw_logpdf(prior, truth_params.mean, truth_params.cov)


# ---------------------------------------------------------------------------
# Vectorized predictive streams (fast path for the simulation harness)


def previous_occurrences(categories) -> np.ndarray:
    """For each position t, how many times ``categories[t]`` occurred before t."""
    c = np.asarray(categories, dtype=np.int64).ravel()
    if c.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(c, kind="stable")
    sorted_c = c[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_c)) + 1]
    group_start = np.repeat(starts, np.diff(np.r_[starts, c.size]))
    out = np.empty_like(c)
    out[order] = np.arange(c.size) - group_start
    return out


def dirichlet_log_predictive_stream(params: DirichletParams, categories) -> np.ndarray:
    """Sequential log predictive of each category given the earlier ones."""
    c = np.asarray(categories, dtype=np.int64).ravel()
    n_prev = previous_occurrences(c)
    t = np.arange(c.size, dtype=float)
    return np.log(params.psi[c] + n_prev) - np.log(params.psi.sum() + t)


def niw_log_predictive_stream(params: NiwParams, observations) -> np.ndarray:
    """Sequential Student-t log predictive of each row given the earlier rows."""
    x = np.asarray(observations, dtype=float).reshape(-1, params.dim)
    T, d = x.shape
    if T == 0:
        return np.zeros(0)
    k0, v0 = params.kappa, params.varpi
    n = np.arange(T, dtype=float)
    ref = x.mean(axis=0)
    y = x - ref
    csum = np.vstack([np.zeros(d), np.cumsum(y, axis=0)[:-1]])
    couter = np.concatenate([np.zeros((1, d, d)), np.cumsum(np.einsum("ti,tj->tij", y, y), axis=0)[:-1]])
    with np.errstate(invalid="ignore", divide="ignore"):
        ybar = np.where(n[:, None] > 0, csum / np.maximum(n, 1.0)[:, None], 0.0)
    scatter = couter - np.einsum("t,ti,tj->tij", n, ybar, ybar)
    dev = ybar + ref - v0
    kappa = k0 + n
    varpi = (k0 * v0 + n[:, None] * (ybar + ref)) / kappa[:, None]
    S = params.S + scatter + (k0 * n / kappa)[:, None, None] * np.einsum("ti,tj->tij", dev, dev)
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    nu_hat = params.nu + n - d + 1.0
    shape = ((kappa + 1.0) / (kappa * nu_hat))[:, None, None] * S
    try:
        chol = np.linalg.cholesky(shape)
    except np.linalg.LinAlgError:
        raise DegenerateStateError("predictive shape lost positive definiteness") from None
    diff = x - varpi
    z = np.linalg.solve(chol, diff[:, :, None])[:, :, 0]
    q = (z * z).sum(axis=1)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return (
        gammaln(0.5 * (nu_hat + d))
        - gammaln(0.5 * nu_hat)
        - 0.5 * d * np.log(nu_hat * np.pi)
        - 0.5 * logdet
        - 0.5 * (nu_hat + d) * np.log1p(q / nu_hat)
    )


def log_predictive_stream(state: State, observations) -> np.ndarray:
    if isinstance(state, DirichletParams):
        return dirichlet_log_predictive_stream(state, observations)
    return niw_log_predictive_stream(state, observations)


def exact_loglik(params: LikelihoodParams, observations) -> np.ndarray:
    """Per-observation log likelihood under certain parameters."""
    if isinstance(params, MultinomialSpec):
        c = np.asarray(observations, dtype=np.int64).ravel()
        if np.any(params.pi[c] == 0):
            raise ModelSupportError("observed a category with zero certain probability")
        return np.log(params.pi[c])
    return params.logpdf(np.asarray(observations, dtype=float).reshape(-1, params.dim))


def log_ell_stream(model: UncertainModel, observations) -> np.ndarray:
    """All ``log ell`` values a model would emit over ``observations``.

    Equal to iterating :meth:`UncertainModel.step`, but vectorized.
    """
    den = log_predictive_stream(model.ignorance_state, observations)
    if model.is_certain:
        return exact_loglik(model.certain_params, observations) - den
    return log_predictive_stream(model.theta_state, observations) - den
