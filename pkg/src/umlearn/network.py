"""Network topology and the log-linear social learning belief update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .conjugate import asymptotic_log_ulr
from .errors import ConfigError

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Network:
    """Agent count and doubly-stochastic weight matrix ``A``.

    Row ``i`` holds the weights agent ``i`` puts on its neighbours' beliefs.
    """

    weights: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", A)
        problems = network_problems(A)
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    def to_json(self) -> dict:
        return {"m": self.m, "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Network":
        if obj.get("type") == "cycle":
            return make_cycle_graph(int(obj["m"]), float(obj.get("self_weight", 0.5)))
        try:
            m = int(obj["m"])
            A = np.asarray(obj["weights"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad network description: {exc}") from None
        if A.ndim == 1:
            A = A.reshape(m, m) if A.size == m * m else A
        if A.shape != (m, m):
            raise ConfigError(f"weights must be {m} x {m}")
        return cls(A)


def network_problems(A: np.ndarray) -> list[str]:
    """Violations of the double-stochasticity, self-loop and connectivity conditions."""
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        return ["weight matrix must be square and nonempty"]
    out = []
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        out.append("weights must be finite and nonnegative")
    rows, cols = A.sum(axis=1), A.sum(axis=0)
    if np.max(np.abs(rows - 1.0)) > STOCHASTIC_TOL:
        out.append(f"row sums deviate from 1 (max error {np.max(np.abs(rows - 1.0)):.3g})")
    if np.max(np.abs(cols - 1.0)) > STOCHASTIC_TOL:
        out.append(f"column sums deviate from 1 (max error {np.max(np.abs(cols - 1.0)):.3g})")
    if np.any(np.diag(A) <= 0):
        out.append("diagonal entries must be positive")
    adjacency = (A > 0) & ~np.eye(A.shape[0], dtype=bool)
    n_comp, _ = connected_components(adjacency, directed=True, connection="strong")
    if n_comp != 1:
        out.append("graph is not strongly connected")
    return out


def make_cycle_graph(m: int, self_weight: float = 0.5) -> Network:
    """Directed cycle with self-loops: agent i listens to itself and agent i+1 (mod m)."""
    if m < 2:
        raise ConfigError("a cycle needs at least 2 agents")
    if not 0.0 < self_weight < 1.0:
        raise ConfigError("self_weight must lie in (0, 1)")
    A = self_weight * np.eye(m)
    A[np.arange(m), (np.arange(m) + 1) % m] += 1.0 - self_weight
    return Network(A)


def spectral_bound(network: Network, t: int) -> tuple[float, float]:
    """(||A^t - 11'/m||_2, sqrt(2) m lambda^t) with lambda = 1 - eta / (4 m^2).

    ``eta`` is the smallest positive entry of ``A``.
    """
    A, m = network.weights, network.m
    eta = A[A > 0].min()
    lam = 1.0 - eta / (4.0 * m * m)
    gap = np.linalg.norm(np.linalg.matrix_power(A, t) - np.full((m, m), 1.0 / m), 2)
    return float(gap), float(np.sqrt(2.0) * m * lam**t)


@dataclass
class BeliefLedger:
    """Log-beliefs of every agent (rows) for every hypothesis (columns)."""

    log_mu: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, m: int, n_hypotheses: int) -> "BeliefLedger":
        return cls(np.zeros((m, n_hypotheses)), 0)


def belief_step(ledger: BeliefLedger, network: Network, log_ell: np.ndarray) -> BeliefLedger:
    """log mu_{t+1} = A log mu_t + log ell, for all hypotheses at once."""
    log_ell = np.asarray(log_ell, dtype=float)
    if log_ell.shape != ledger.log_mu.shape or ledger.log_mu.shape[0] != network.m:
        raise ValueError(
            f"shape mismatch: ledger {ledger.log_mu.shape}, log_ell {log_ell.shape}, m={network.m}"
        )
    return BeliefLedger(network.weights @ ledger.log_mu + log_ell, ledger.t + 1)


def propagate(
    network: Network, log_ell: np.ndarray, checkpoints, start: np.ndarray | None = None, block: int = 256
) -> np.ndarray:
    """Apply :func:`belief_step` over a whole (T, m, H) stream of ``log ell``.

    Returns the log-beliefs after each step listed in ``checkpoints``
    (1-based step counts), shape (len(checkpoints), m, H).  Steps are
    processed in blocks of at most ``block``: over a block of length L,
    x <- A^L x + sum_j A^(L-1-j) log_ell[j], which is the same recursion
    unrolled.
    """
    log_ell = np.asarray(log_ell, dtype=float)
    T, m, H = log_ell.shape
    if m != network.m:
        raise ValueError(f"log_ell has {m} agents, network has {network.m}")
    x = np.zeros((m, H)) if start is None else np.array(start, dtype=float)
    marks = np.asarray(checkpoints, dtype=int)
    if marks.size and (marks.min() < 1 or marks.max() > T or np.any(np.diff(marks) <= 0)):
        raise ValueError("checkpoints must be strictly increasing within 1..T")

    A = network.weights
    powers = np.empty((block + 1, m, m))
    powers[0] = np.eye(m)
    for k in range(1, block + 1):
        powers[k] = A @ powers[k - 1]

    ends = np.union1d(marks, np.r_[np.arange(block, T, block), T]).astype(int)
    out = np.empty((marks.size, m, H))
    t, j = 0, 0
    for end in ends:
        L = end - t
        x = powers[L] @ x + np.einsum("jab,jbh->ah", powers[L - 1 :: -1][:L], log_ell[t:end])
        t = end
        if j < marks.size and marks[j] == end:
            out[j] = x
            j += 1
    return out


def consensus_gap(log_mu: np.ndarray) -> np.ndarray:
    """Per-hypothesis spread max_i,j |log mu_i - log mu_j|."""
    log_mu = np.atleast_2d(np.asarray(log_mu, dtype=float))
    return log_mu.max(axis=0) - log_mu.min(axis=0)


def per_agent_targets(models) -> np.ndarray:
    """Matrix of log Lambda~ for every agent (rows) and hypothesis (columns).

    ``models[i][h]`` is ``(family, evidence, truth_params)`` or
    ``(family, evidence, truth_params, prior)``.
    """
    return np.array([[asymptotic_log_ulr(*entry) for entry in row] for row in models], dtype=float)


def convergence_target(models) -> np.ndarray:
    """Network limit (1/m) sum_i log Lambda~_i for each hypothesis."""
    return per_agent_targets(models).mean(axis=0)
