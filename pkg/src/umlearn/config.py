"""Experiment configuration: JSON schema, validation and built-in presets.

A config is a JSON object::

    {
      "name": "table1-gaussian",
      "network": {"type": "cycle", "m": 4, "self_weight": 0.5},
      "distributions": {"Q1": {"type": "gaussian", ...}, ...},
      "model": {"family": "gaussian"},
      "hypotheses": ["theta1", "theta2", "theta3"],
      "truth": "theta1",
      "agents": [{"observation": "Q1", "hypotheses": ["Q1", "Q2", "Q1"]}, ...],
      "evidence": {"range": [1000, 10000]},
      "horizon": 10000,
      "checkpoints": {"type": "log", "count": 100},
      "runs": 10,
      "seed": 0
    }

``model.family`` is ``multinomial``, ``gaussian`` or ``grid``; a grid model
also carries ``grid`` (``{lo, hi, cells}`` or ``{dims, hyperplanes}``).  An
agent may override the model with its own ``model`` entry.  ``evidence`` is
either ``{"range": [lo, hi]}`` or the string ``"certain"``.  With
``"redraw": true`` the evidence is redrawn for every Monte Carlo run instead of
being shared by the whole ensemble.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .conjugate import CERTAIN, DirichletParams, GAUSSIAN, MULTINOMIAL, NiwParams
from .errors import ConfigError
from .network import Network
from .partition import RectilinearGrid
from .truth import (
    TABLE_I,
    TABLE_III,
    DistributionSpec,
    GaussianSpec,
    MixtureSpec,
    MultinomialSpec,
    spec_from_json,
    spec_to_json,
)

GRID = "grid"
MODEL_FAMILIES = (MULTINOMIAL, GAUSSIAN, GRID)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    family: str
    grid: Optional[RectilinearGrid] = None

    def __post_init__(self):
        if self.family not in MODEL_FAMILIES:
            raise ConfigError(f"model family must be one of {MODEL_FAMILIES}, got {self.family!r}")
        if (self.family == GRID) != (self.grid is not None):
            raise ConfigError("a grid is required for, and only for, the grid family")

    @property
    def conjugate_family(self) -> str:
        return GAUSSIAN if self.family == GAUSSIAN else MULTINOMIAL

    def to_json(self) -> dict:
        out = {"family": self.family}
        if self.grid is not None:
            out["grid"] = self.grid.to_json()
        return out

    @classmethod
    def from_json(cls, obj) -> "ModelSpec":
        if isinstance(obj, str):
            obj = {"family": obj}
        grid = obj.get("grid")
        return cls(obj.get("family", ""), None if grid is None else RectilinearGrid.from_json(grid))


@dataclass(frozen=True)
class AgentSpec:
    """Observation distribution and the evidence distribution for each hypothesis."""

    observation: str
    hypotheses: tuple[str, ...]
    model: ModelSpec

    def to_json(self) -> dict:
        return {"observation": self.observation, "hypotheses": list(self.hypotheses), "model": self.model.to_json()}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    weights: np.ndarray
    distributions: dict[str, DistributionSpec]
    agents: tuple[AgentSpec, ...]
    hypotheses: tuple[str, ...]
    truth: int
    evidence: Union[tuple[int, int], str]
    horizon: int
    checkpoints: tuple[int, ...]
    runs: int = 1
    seed: int = 0
    redraw_evidence: bool = False
    priors: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.agents)

    @property
    def certain(self) -> bool:
        return self.evidence == CERTAIN

    def network(self) -> Network:
        return Network(self.weights)

    def spec(self, name: str) -> DistributionSpec:
        return self.distributions[name]

    def prior_for(self, family: str, size: int):
        """Configured prior override for a conjugate family, or None for the default."""
        obj = self.priors.get(family)
        if obj is None:
            return None
        if family == MULTINOMIAL:
            psi = np.asarray(obj["psi"], dtype=float)
            return DirichletParams(np.full(size, float(psi)) if psi.ndim == 0 else psi)
        return NiwParams(obj["varpi"], obj["kappa"], obj["nu"], obj["S"])

    def with_overrides(self, **kw) -> "ExperimentConfig":
        obj = self.to_json()
        for key, value in kw.items():
            if value is not None:
                obj[key] = value
        if kw.get("horizon") is not None and "checkpoints" not in kw:
            obj["checkpoints"] = {"type": "log", "count": DEFAULT_CHECKPOINTS}
        return config_from_json(obj)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "network": {"m": self.m, "weights": self.weights.tolist()},
            "distributions": {k: spec_to_json(v) for k, v in self.distributions.items()},
            "hypotheses": list(self.hypotheses),
            "truth": self.hypotheses[self.truth],
            "agents": [a.to_json() for a in self.agents],
            "evidence": "certain" if self.certain else {"range": list(self.evidence), "redraw": self.redraw_evidence},
            "horizon": self.horizon,
            "checkpoints": list(self.checkpoints),
            "runs": self.runs,
            "seed": self.seed,
            "priors": self.priors,
        }


DEFAULT_CHECKPOINTS = 100


def log_checkpoints(horizon: int, count: int = DEFAULT_CHECKPOINTS) -> tuple[int, ...]:
    """About ``count`` log-spaced steps in [1, horizon], always including both ends."""
    pts = np.unique(np.round(np.geomspace(1, horizon, max(count, 2))).astype(int))
    return tuple(int(p) for p in pts)


def resolve_checkpoints(obj, horizon: int) -> tuple[int, ...]:
    if obj is None:
        return log_checkpoints(horizon)
    if isinstance(obj, list):
        pts = sorted({int(p) for p in obj})
    elif obj.get("type", "log") == "log":
        return log_checkpoints(horizon, int(obj.get("count", DEFAULT_CHECKPOINTS)))
    elif obj["type"] == "linear":
        count = int(obj.get("count", DEFAULT_CHECKPOINTS))
        pts = sorted(set(np.linspace(horizon / count, horizon, count).round().astype(int).tolist()))
    else:
        raise ConfigError(f"unknown checkpoint schedule {obj['type']!r}")
    if not pts or pts[0] < 1 or pts[-1] > horizon:
        raise ConfigError("checkpoints must lie in [1, horizon]")
    return tuple(pts)


def default_horizon(families) -> int:
    return 10_000 if GAUSSIAN in families else 100_000


def _parse_evidence(obj):
    if isinstance(obj, str):
        if obj.lower() != "certain":
            raise ConfigError(f"evidence must be a range or 'certain', got {obj!r}")
        return CERTAIN, False
    if obj.get("certain"):
        return CERTAIN, False
    try:
        lo, hi = (int(v) for v in obj["range"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("evidence needs a two-element integer 'range'") from None
    if lo < 0 or hi < lo:
        raise ConfigError("evidence range must satisfy 0 <= lo <= hi")
    return (lo, hi), bool(obj.get("redraw", False))


def config_from_json(obj: dict) -> ExperimentConfig:
    """Build and check a config.  Network weights are stored unvalidated so
    that ``validate`` can report topology problems as verdicts."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    try:
        net = obj["network"]
        if net.get("type") == "cycle":
            weights = Network.from_json(net).weights
        else:
            m = int(net["m"])
            weights = np.asarray(net["weights"], dtype=float).reshape(m, m)
        dists = {name: spec_from_json(s) for name, s in obj["distributions"].items()}
        hypotheses = tuple(str(h) for h in obj["hypotheses"])
        default_model = obj.get("model")
        agents = []
        for a in obj["agents"]:
            model_obj = a.get("model", default_model)
            if model_obj is None:
                raise ConfigError("every agent needs a model")
            agents.append(AgentSpec(str(a["observation"]), tuple(str(q) for q in a["hypotheses"]), ModelSpec.from_json(model_obj)))
        truth = obj.get("truth", 0)
    except KeyError as exc:
        raise ConfigError(f"config is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    if isinstance(truth, str):
        if truth not in hypotheses:
            raise ConfigError(f"truth {truth!r} is not a listed hypothesis")
        truth = hypotheses.index(truth)
    if not 0 <= int(truth) < len(hypotheses):
        raise ConfigError("truth index out of range")
    if weights.shape[0] != len(agents):
        raise ConfigError(f"network has {weights.shape[0]} agents but {len(agents)} agent specs are given")
    for i, a in enumerate(agents):
        _check_agent(i, a, dists, len(hypotheses))

    evidence, redraw = _parse_evidence(obj.get("evidence", {"range": [0, 0]}))
    horizon = int(obj.get("horizon", default_horizon({a.model.family for a in agents})))
    if horizon < 1:
        raise ConfigError("horizon must be at least 1")
    runs = int(obj.get("runs", 1))
    if runs < 1:
        raise ConfigError("runs must be at least 1")
    return ExperimentConfig(
        name=str(obj.get("name", "custom")),
        weights=weights,
        distributions=dists,
        agents=tuple(agents),
        hypotheses=hypotheses,
        truth=int(truth),
        evidence=evidence,
        horizon=horizon,
        checkpoints=resolve_checkpoints(obj.get("checkpoints"), horizon),
        runs=runs,
        seed=int(obj.get("seed", 0)),
        redraw_evidence=redraw,
        priors=dict(obj.get("priors", {})),
    )


def _check_agent(i: int, agent: AgentSpec, dists: dict, n_hyp: int) -> None:
    names = (agent.observation,) + agent.hypotheses
    missing = [n for n in names if n not in dists]
    if missing:
        raise ConfigError(f"agent {i} refers to unknown distributions {missing}")
    if len(agent.hypotheses) != n_hyp:
        raise ConfigError(f"agent {i} lists {len(agent.hypotheses)} hypotheses, expected {n_hyp}")
    specs = [dists[n] for n in names]
    if agent.model.family == MULTINOMIAL:
        if not all(isinstance(s, MultinomialSpec) for s in specs):
            raise ConfigError(f"agent {i}: multinomial models need multinomial distributions")
        if len({s.categories for s in specs}) != 1:
            raise ConfigError(f"agent {i}: category counts differ")
    else:
        if not all(isinstance(s, (GaussianSpec, MixtureSpec)) for s in specs):
            raise ConfigError(f"agent {i}: {agent.model.family} models need continuous distributions")
        dims = {s.dim for s in specs}
        if len(dims) != 1:
            raise ConfigError(f"agent {i}: distribution dimensions differ")
        if agent.model.grid is not None and agent.model.grid.dims != dims.pop():
            raise ConfigError(f"agent {i}: grid and distribution dimensions differ")


def load_config(source: str) -> ExperimentConfig:
    """A preset name or a path to a JSON file."""
    if source in PRESETS:
        return config_from_json(PRESETS[source]())
    try:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source!r}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_json(obj)


# ---------------------------------------------------------------------------
# Presets


# Hypothesis assignment of the three-hypothesis experiments: agent 2 (index 1)
# alone sees Q2 under theta2 and agent 3 (index 2) alone sees Q3 under theta3.
def table_ii_agents(model: dict) -> list[dict]:
    rows = []
    for i in range(4):
        hyp = ["Q1", "Q2" if i == 1 else "Q1", "Q3" if i == 2 else "Q1"]
        rows.append({"observation": "Q1", "hypotheses": hyp, "model": model})
    return rows


FIG3_NETWORK = {"type": "cycle", "m": 4, "self_weight": 0.5}
PAPER_RANGES = ([1, 500], [500, 1000], [1000, 10000], [10000, 100000])


def _evidence(evidence) -> object:
    if evidence is None or (isinstance(evidence, str) and evidence.lower() == "certain"):
        return "certain"
    return {"range": [int(evidence[0]), int(evidence[1])]}


def _three_hypothesis(name, dists, model, evidence, horizon, runs) -> dict:
    return {
        "name": name,
        "network": dict(FIG3_NETWORK),
        "distributions": {k: spec_to_json(v) for k, v in dists.items()},
        "hypotheses": ["theta1", "theta2", "theta3"],
        "truth": "theta1",
        "agents": table_ii_agents(model),
        "evidence": _evidence(evidence),
        "horizon": horizon,
        "checkpoints": {"type": "log", "count": DEFAULT_CHECKPOINTS},
        "runs": runs,
        "seed": 0,
    }


def table1_gaussian(evidence=(1000, 10000), horizon=10_000, runs=10) -> dict:
    return _three_hypothesis("table1-gaussian", TABLE_I, {"family": "gaussian"}, evidence, horizon, runs)


def table3_mixture_gaussian(evidence=(1000, 10000), horizon=10_000, runs=10) -> dict:
    return _three_hypothesis("table3-mixture-gaussian", TABLE_III, {"family": "gaussian"}, evidence, horizon, runs)


def mixture_grid(g: int, evidence=(1000, 10000), horizon=100_000, runs=10) -> dict:
    model = {"family": "grid", "grid": {"lo": [-3.0, -3.0], "hi": [3.0, 3.0], "cells": g}}
    return _three_hypothesis(f"mixture-grid-g{g}", TABLE_III, model, evidence, horizon, runs)


# Desk-scale categorical analogue of the three-hypothesis experiments.
MULTINOMIAL_K4 = {
    "Q1": MultinomialSpec([0.25, 0.25, 0.25, 0.25]),
    "Q2": MultinomialSpec([0.255, 0.245, 0.25, 0.25]),
    "Q3": MultinomialSpec([0.26, 0.24, 0.25, 0.25]),
}


def multinomial_k4(evidence=(1000, 10000), horizon=100_000, runs=10) -> dict:
    return _three_hypothesis("multinomial-k4", MULTINOMIAL_K4, {"family": "multinomial"}, evidence, horizon, runs)


PRESETS = {
    "table1-gaussian": table1_gaussian,
    "table1-gaussian-certain": lambda: {**table1_gaussian("certain"), "name": "table1-gaussian-certain"},
    "table3-mixture-gaussian": table3_mixture_gaussian,
    "table3-mixture-gaussian-certain": lambda: {
        **table3_mixture_gaussian("certain"),
        "name": "table3-mixture-gaussian-certain",
    },
    "multinomial-k4": multinomial_k4,
    "multinomial-k4-certain": lambda: {**multinomial_k4("certain"), "name": "multinomial-k4-certain"},
    **{f"mixture-grid-g{g}": (lambda g=g: mixture_grid(g)) for g in (2, 4, 8, 16)},
}
