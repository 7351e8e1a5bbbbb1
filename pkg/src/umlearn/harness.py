"""Monte Carlo simulation engine: evidence, observation streams, belief runs, ensembles."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .config import GRID, AgentSpec, ExperimentConfig
from .conjugate import (
    GAUSSIAN,
    MULTINOMIAL,
    LikelihoodParams,
    UncertainModel,
    absorb_evidence,
    asymptotic_log_ulr,
    default_prior,
    exact_loglik,
    log_predictive_stream,
)
from .errors import UMLearnError
from .network import consensus_gap, propagate, spectral_bound
from .partition import cell_of, cell_probabilities, histogram
from .truth import DistributionSpec, MultinomialSpec, moment_match_gaussian, sample

EVIDENCE_STREAM, OBSERVATION_STREAM = 0, 1


class RunAborted(UMLearnError):
    """A run stopped on a numerical or support failure; carries where it happened."""

    def __init__(self, seed: int, agent: int, message: str):
        super().__init__(f"run with seed {seed} aborted at agent {agent}: {message}")
        self.seed, self.agent, self.message = seed, agent, message


# ---------------------------------------------------------------------------
# Seeds


def run_seed(master: int, index: int) -> int:
    """Per-run seed split off the master seed by run counter."""
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0])


def agent_rng(seed: int, agent: int, stream: int) -> np.random.Generator:
    """Independent stream per (run seed, agent, purpose)."""
    return np.random.default_rng(np.random.SeedSequence([seed, agent, stream]))


# ---------------------------------------------------------------------------
# Agent models


def model_size(agent: AgentSpec, spec: DistributionSpec) -> int:
    if agent.model.family == GRID:
        return agent.model.grid.cells
    if agent.model.family == MULTINOMIAL:
        return spec.categories
    return spec.dim


def model_params(agent: AgentSpec, spec: DistributionSpec) -> LikelihoodParams:
    """Best-fitting parameters of the agent's model family for a distribution.

    Categorical data keeps its own probabilities; Gaussian models use the
    moment-matched fit; grid models use the exact cell masses.
    """
    if agent.model.family == MULTINOMIAL:
        return spec
    if agent.model.family == GAUSSIAN:
        return moment_match_gaussian(spec)
    p = cell_probabilities(agent.model.grid, spec)
    return MultinomialSpec(p / p.sum())


def to_model_space(agent: AgentSpec, draws: np.ndarray) -> np.ndarray:
    """Grid agents see cell indices; everyone else sees the raw draws."""
    if agent.model.family == GRID:
        return cell_of(agent.model.grid, draws.reshape(len(draws), -1))
    return draws


def summarize_evidence(agent: AgentSpec, spec: DistributionSpec, draws: np.ndarray):
    """Counts for categorical models, the raw (n, d) array for Gaussian ones."""
    if agent.model.family == GRID:
        return histogram(agent.model.grid, draws.reshape(len(draws), -1))
    if agent.model.family == MULTINOMIAL:
        return np.bincount(draws.astype(int), minlength=spec.categories)
    return draws.reshape(len(draws), spec.dim)


@dataclass(eq=False)
class Evidence:
    """Per (agent, hypothesis) prior evidence, or certain parameters.

    ``data[i][h]`` is a count vector or an (n, d) array; ``sizes[i, h]`` is
    ``|r|``.  In the certain regime ``data`` is None and ``certain_params``
    holds the assigned model parameters.
    """

    sizes: Optional[np.ndarray]
    data: Optional[list]
    certain_params: Optional[list] = None

    @property
    def certain(self) -> bool:
        return self.certain_params is not None


def draw_evidence(config: ExperimentConfig, rng) -> Evidence:
    """Draw prior evidence for every (agent, hypothesis).

    ``rng`` is either a run seed (each agent then uses its own evidence
    stream) or a single Generator shared by all agents.  Sizes are uniform
    integers on the configured range, drawn independently per pair.
    """
    if config.certain:
        params = [[model_params(a, config.spec(q)) for q in a.hypotheses] for a in config.agents]
        return Evidence(None, None, params)
    lo, hi = config.evidence
    sizes = np.zeros((config.m, len(config.hypotheses)), dtype=np.int64)
    data = []
    for i, agent in enumerate(config.agents):
        g = rng if isinstance(rng, np.random.Generator) else agent_rng(rng, i, EVIDENCE_STREAM)
        row = []
        for h, q in enumerate(agent.hypotheses):
            n = int(g.integers(lo, hi, endpoint=True))
            spec = config.spec(q)
            sizes[i, h] = n
            row.append(summarize_evidence(agent, spec, sample(spec, g, n)))
        data.append(row)
    return Evidence(sizes, data)


def build_models(config: ExperimentConfig, evidence: Evidence) -> list[list[UncertainModel]]:
    models = []
    for i, agent in enumerate(config.agents):
        fam = agent.model.conjugate_family
        size = model_size(agent, config.spec(agent.observation))
        prior = config.prior_for(fam, size) or default_prior(fam, size)
        if evidence.certain:
            row = [UncertainModel.certain(p, prior) for p in evidence.certain_params[i]]
        else:
            row = [UncertainModel(fam, absorb_evidence(fam, prior, r), prior, 0.0, int(n)) for r, n in zip(evidence.data[i], evidence.sizes[i])]
        models.append(row)
    return models


def agent_targets(config: ExperimentConfig, evidence: Evidence) -> Optional[np.ndarray]:
    """log Lambda~ per (agent, hypothesis) at the fit of each agent's observation law."""
    if evidence.certain:
        return None
    out = np.empty((config.m, len(config.hypotheses)))
    for i, agent in enumerate(config.agents):
        fam = agent.model.conjugate_family
        spec = config.spec(agent.observation)
        truth = model_params(agent, spec)
        prior = config.prior_for(fam, model_size(agent, spec))
        for h, r in enumerate(evidence.data[i]):
            out[i, h] = asymptotic_log_ulr(fam, r, truth, prior)
    return out


def agent_log_ell(models: list[UncertainModel], observations: np.ndarray) -> np.ndarray:
    """(T, H) matrix of log ell for one agent; the ignorance predictive is shared."""
    den = log_predictive_stream(models[0].ignorance_state, observations)
    cols = []
    for mdl in models:
        if mdl.is_certain:
            num = exact_loglik(mdl.certain_params, observations)
        else:
            num = log_predictive_stream(mdl.theta_state, observations)
        cols.append(num - den)
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# Runs


@dataclass(eq=False)
class RunResult:
    seed: int
    checkpoints: np.ndarray
    log_belief: np.ndarray  # (C, m, H)
    cum_log_ulr: np.ndarray  # (C, m, H) accumulated log Lambda of each agent
    gaps: np.ndarray  # (C, H)
    targets: Optional[np.ndarray]  # (m, H), None when certain
    evidence_sizes: Optional[np.ndarray]

    @property
    def final_log_ulr(self) -> np.ndarray:
        return self.cum_log_ulr[-1]


def run_single(config: ExperimentConfig, seed: int, evidence: Optional[Evidence] = None) -> RunResult:
    """One run: every agent observes T draws, updates its models, and beliefs mix over A."""
    network = config.network()
    if evidence is None:
        evidence = draw_evidence(config, seed)
    models = build_models(config, evidence)
    T, marks = config.horizon, np.asarray(config.checkpoints)
    H = len(config.hypotheses)
    log_ell = np.empty((T, config.m, H))
    for i, agent in enumerate(config.agents):
        spec = config.spec(agent.observation)
        draws = sample(spec, agent_rng(seed, i, OBSERVATION_STREAM), T)
        try:
            log_ell[:, i, :] = agent_log_ell(models[i], to_model_space(agent, draws))
        except UMLearnError as exc:
            raise RunAborted(seed, i, str(exc)) from exc
    if not np.all(np.isfinite(log_ell)):
        bad = int(np.argwhere(~np.isfinite(log_ell))[0, 1])
        raise RunAborted(seed, bad, "non-finite uncertain likelihood update")
    log_belief = propagate(network, log_ell, marks)
    cum = np.cumsum(log_ell, axis=0)[marks - 1]
    gaps = np.stack([consensus_gap(x) for x in log_belief])
    return RunResult(seed, marks, log_belief, cum, gaps, agent_targets(config, evidence), evidence.sizes)


@dataclass(eq=False)
class EnsembleResult:
    config_name: str
    checkpoints: np.ndarray
    runs: list[RunResult]
    mean_log_belief: np.ndarray  # (C, m, H)
    log_mean_belief: np.ndarray  # log of the mean of linear beliefs
    targets: Optional[np.ndarray]  # (m, H)
    failures: list[str] = field(default_factory=list)

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    @property
    def network_target(self) -> Optional[np.ndarray]:
        return None if self.targets is None else self.targets.mean(axis=0)


def _run_task(args):
    config, seed, evidence_seed = args
    try:
        ev = None if evidence_seed is None else draw_evidence(config, evidence_seed)
        return run_single(config, seed, ev)
    except RunAborted as exc:
        return exc


def worker_count(runs: int) -> int:
    cap = os.environ.get("UM_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            pass
    return max(1, min(n, runs))


def run_ensemble(config: ExperimentConfig, workers: Optional[int] = None) -> EnsembleResult:
    """``config.runs`` runs with seeds split from ``config.seed``.

    Unless ``redraw_evidence`` is set, every run reuses the evidence drawn
    with the first run's seed, so only the observation streams change.
    Aggregation follows run order, independent of completion order.
    """
    seeds = [run_seed(config.seed, k) for k in range(config.runs)]
    shared = None if config.redraw_evidence else seeds[0]
    tasks = [(config, s, shared) for s in seeds]
    workers = worker_count(config.runs) if workers is None else workers
    if workers <= 1:
        outcomes = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    runs = [o for o in outcomes if isinstance(o, RunResult)]
    failures = [str(o) for o in outcomes if not isinstance(o, RunResult)]
    marks = np.asarray(config.checkpoints)
    if not runs:
        empty = np.full((len(marks), config.m, len(config.hypotheses)), np.nan)
        return EnsembleResult(config.name, marks, [], empty, empty.copy(), None, failures)
    stack = np.stack([r.log_belief for r in runs])
    targets = None if runs[0].targets is None else np.mean([r.targets for r in runs], axis=0)
    return EnsembleResult(
        config.name,
        marks,
        runs,
        stack.mean(axis=0),
        logsumexp(stack, axis=0) - np.log(len(runs)),
        targets,
        failures,
    )


def estimate_slope(result, window, reference: Optional[int] = None) -> np.ndarray:
    """Least-squares slope of log-belief against t over checkpoints in ``window``.

    ``result`` is a RunResult, an EnsembleResult, or a ``(t, series)`` pair
    whose series has time on the first axis.  With ``reference`` set, the
    slope of ``log mu(theta) - log mu(theta_reference)`` is returned instead.
    """
    t1, t2 = window
    if not t2 > t1 >= 1:
        raise ValueError("window must satisfy t2 > t1 >= 1")
    if isinstance(result, RunResult):
        t, y = result.checkpoints, result.log_belief
    elif isinstance(result, EnsembleResult):
        t, y = result.checkpoints, result.mean_log_belief
    else:
        t, y = result
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if reference is not None:
        y = y - y[..., reference : reference + 1]
    sel = (t >= t1) & (t <= t2)
    if sel.sum() < 2:
        raise ValueError("fewer than 2 checkpoints inside the slope window")
    ts = t[sel] - t[sel].mean()
    ys = y[sel] - y[sel].mean(axis=0)
    return np.tensordot(ts, ys, axes=(0, 0)) / (ts @ ts)


# ---------------------------------------------------------------------------
# Output files

CENTRALIZATION_TOL = 1e-8
CONSENSUS_TOL = 0.05
TARGET_TOL = 0.3
PEAK_TOL = 0.2


def slope_window(horizon: int) -> tuple[int, int]:
    return max(1, horizon // 10), horizon


def summarize(config: ExperimentConfig, ens: EnsembleResult) -> dict:
    """Consensus gaps, slopes and invariant verdicts of an ensemble."""
    out: dict = {
        "config": config.to_json(),
        "grids": [a.model.grid.to_json() if a.model.grid is not None else None for a in config.agents],
        "runs": len(ens.runs),
        "seeds": ens.seeds,
        "failures": ens.failures,
        "certain": config.certain,
        "truth": config.hypotheses[config.truth],
        "hypotheses": list(config.hypotheses),
        "horizon": config.horizon,
    }
    if not ens.runs:
        out["invariants"] = {"all_runs_completed": False}
        return out
    final = ens.mean_log_belief[-1]
    running_max = ens.mean_log_belief.max(axis=0)
    gaps = np.stack([r.gaps[-1] for r in ens.runs])
    central = max(
        float(np.max(np.abs(r.log_belief.sum(axis=1) - r.cum_log_ulr.sum(axis=1)))) for r in ens.runs
    )
    finite = all(np.all(np.isfinite(r.log_belief)) and np.all(np.isfinite(r.cum_log_ulr)) for r in ens.runs)
    spectral = all(g <= b + 1e-12 for g, b in (spectral_bound(config.network(), t) for t in range(1, 51)))
    out.update(
        {
            "final_mean_log_belief": final.tolist(),
            "final_network_mean": final.mean(axis=0).tolist(),
            "running_max_mean_log_belief": running_max.tolist(),
            "final_consensus_gap": {"max_over_runs": gaps.max(axis=0).tolist(), "per_run": gaps.tolist()},
        }
    )
    window = slope_window(config.horizon)
    try:
        out["slopes"] = {
            "window": list(window),
            "raw": estimate_slope(ens, window).tolist(),
            "relative_to_truth": estimate_slope(ens, window, reference=config.truth).tolist(),
        }
    except ValueError:
        out["slopes"] = None
    out["invariants"] = {
        "all_runs_completed": not ens.failures,
        "finite": bool(finite),
        "centralization_max_error": central,
        "centralization": bool(central < CENTRALIZATION_TOL),
        "spectral_bound": bool(spectral),
    }
    return out


def invariants_hold(summary: dict) -> bool:
    inv = summary.get("invariants", {})
    return bool(inv) and all(v for k, v in inv.items() if isinstance(v, bool))


def targets_document(config: ExperimentConfig, ens: EnsembleResult) -> dict:
    net = ens.network_target
    sizes = ens.runs[0].evidence_sizes if ens.runs else None
    return {
        "hypotheses": list(config.hypotheses),
        "certain": config.certain,
        "network_target": None if net is None else dict(zip(config.hypotheses, net.tolist())),
        "per_agent": None if ens.targets is None else ens.targets.tolist(),
        "evidence_sizes": None if sizes is None else sizes.tolist(),
    }


def write_outputs(config: ExperimentConfig, ens: EnsembleResult, out_dir) -> dict:
    """Write beliefs.csv, targets.json and summary.json; return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "beliefs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "checkpoint_t", "agent", "hypothesis", "log_belief"])
        for k, run in enumerate(ens.runs):
            for c, t in enumerate(run.checkpoints):
                for i in range(config.m):
                    for h, name in enumerate(config.hypotheses):
                        w.writerow([k, int(t), i, name, repr(float(run.log_belief[c, i, h]))])
    summary = summarize(config, ens)
    _dump_json(out / "targets.json", targets_document(config, ens))
    _dump_json(out / "summary.json", summary)
    return summary


def _dump_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
