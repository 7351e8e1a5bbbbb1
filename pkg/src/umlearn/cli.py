"""Command-line entry point.

Exit codes: 0 success, 1 invariant or oracle failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .config import PRESETS, ExperimentConfig, load_config
from .conjugate import GAUSSIAN, MULTINOMIAL
from .errors import ConfigError, UMLearnError
from .harness import (
    CONSENSUS_TOL,
    PEAK_TOL,
    TARGET_TOL,
    agent_targets,
    draw_evidence,
    invariants_hold,
    model_params,
    run_ensemble,
    run_seed,
    write_outputs,
)
from .network import network_problems
from .truth import GaussianSpec, kl_gaussian, kl_multinomial

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ARGMIN_RTOL = 1e-9


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="umlearn", description="Distributed hypothesis testing with uncertain models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a config against the network and identifiability assumptions")
    v.add_argument("config", help="JSON file or preset name")
    v.add_argument("--dump", action="store_true", help="print the normalized config")

    r = sub.add_parser("run", help="run a Monte Carlo ensemble and write result files")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--runs", type=int)
    r.add_argument("--horizon", type=int)

    t = sub.add_parser("targets", help="print convergence targets for the evidence of one seed")
    t.add_argument("config")
    t.add_argument("--seed", type=int)

    o = sub.add_parser("oracle", help="cross-check recursive updates against batch and quadrature oracles")
    o.add_argument("--family", choices=[MULTINOMIAL, GAUSSIAN], required=True)
    o.add_argument("--instances", type=int, default=100)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--dim", type=int, help="Gaussian dimension (random in 1..3 when omitted); 1 adds quadrature checks")

    rep = sub.add_parser("report", help="tabulate a results directory against acceptance tolerances")
    rep.add_argument("results_dir")

    sub.add_parser("presets", help="list built-in presets")
    return p


# ---------------------------------------------------------------------------
# validate


def model_divergences(config: ExperimentConfig, agent_index: int) -> np.ndarray:
    """KL from the agent's observation law to each hypothesis model, up to a shared constant.

    For Gaussian models only the first two moments of the observation law
    matter, so the moment-matched fit stands in for it.
    """
    agent = config.agents[agent_index]
    truth = model_params(agent, config.spec(agent.observation))
    out = []
    for q in agent.hypotheses:
        fit = model_params(agent, config.spec(q))
        out.append(kl_gaussian(truth, fit) if isinstance(fit, GaussianSpec) else kl_multinomial(truth, fit))
    return np.array(out)


def argmin_set(values: np.ndarray) -> set[int]:
    best = values.min()
    return {h for h, v in enumerate(values) if v <= best + ARGMIN_RTOL * max(abs(best), 1.0)}


def cmd_validate(args) -> int:
    config = load_config(args.config)
    if args.dump:
        print(json.dumps(config.to_json(), indent=2))
    ok = True
    problems = network_problems(config.weights)
    print(f"network: m={config.m}")
    for label, bad in (
        ("double stochasticity", [p for p in problems if "sums" in p or "nonnegative" in p]),
        ("positive self-weights", [p for p in problems if "diagonal" in p]),
        ("strong connectivity", [p for p in problems if "connected" in p or "square" in p]),
    ):
        print(f"  [{'PASS' if not bad else 'FAIL'}] {label}" + (f": {'; '.join(bad)}" if bad else ""))
        ok &= not bad

    names = config.hypotheses
    joint = set(range(len(names)))
    print("identifiability:")
    for i, agent in enumerate(config.agents):
        kl = model_divergences(config, i)
        best = argmin_set(kl)
        joint &= best
        kl_txt = ", ".join(f"{names[h]}={v:.6g}" for h, v in enumerate(kl))
        print(f"  agent {i} ({agent.model.family}): KL {kl_txt}; indistinguishable {{{', '.join(names[h] for h in sorted(best))}}}")
    unique = joint == {config.truth}
    joint_txt = ", ".join(names[h] for h in sorted(joint)) or "empty"
    print(f"  [{'PASS' if unique else 'FAIL'}] intersection {{{joint_txt}}} is exactly {{{names[config.truth]}}}")
    ok &= unique
    print("VALID" if ok else "INVALID")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# run / targets


def cmd_run(args) -> int:
    config = load_config(args.config).with_overrides(seed=args.seed, runs=args.runs, horizon=args.horizon)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {str(out)!r} is not writable: {exc.strerror}") from None
    ens = run_ensemble(config)
    summary = write_outputs(config, ens, out)
    print(f"{config.name}: {len(ens.runs)} runs, T={config.horizon}, {len(config.checkpoints)} checkpoints -> {out}")
    for msg in ens.failures:
        print(f"  aborted: {msg}")
    ok = invariants_hold(summary)
    print("invariants:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_targets(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    if config.certain:
        print("certain regime: beliefs diverge, no finite targets")
        return EXIT_OK
    ev = draw_evidence(config, run_seed(config.seed, 0))
    per_agent = agent_targets(config, ev)
    print(f"{'agent':>6} " + " ".join(f"{h:>14}" for h in config.hypotheses))
    for i, row in enumerate(per_agent):
        print(f"{i:>6} " + " ".join(f"{v:14.6f}" for v in row))
    print(f"{'net':>6} " + " ".join(f"{v:14.6f}" for v in per_agent.mean(axis=0)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    if args.instances < 0:
        raise ConfigError("--instances must be nonnegative")
    if args.dim is not None and args.dim < 1:
        raise ConfigError("--dim must be positive")
    rng = np.random.default_rng(args.seed)
    ok = True
    if args.family == MULTINOMIAL:
        worst = oracles.recursion_vs_batch_multinomial(rng, args.instances)
        ok &= worst < oracles.BATCH_TOL
        print(f"multinomial recursion vs batch: {args.instances} instances, max |delta log Lambda| = {worst:.3e}")
    else:
        worst = oracles.recursion_vs_batch_gaussian(rng, args.instances, args.dim)
        ok &= worst < oracles.BATCH_TOL
        print(f"gaussian recursion vs batch: {args.instances} instances, max |delta log Lambda| = {worst:.3e}")
        if args.dim == 1:
            quad = oracles.quadrature_predictive_check(rng, args.instances)
            ok &= quad < oracles.QUAD_TOL
            print(f"gaussian d=1 predictive vs quadrature: max |delta log p| = {quad:.3e}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# report


def _load_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError:
        raise ConfigError(f"missing results file {str(path)!r}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None


def cmd_report(args) -> int:
    root = Path(args.results_dir)
    if not (root / "beliefs.csv").is_file():
        raise ConfigError(f"missing results file {str(root / 'beliefs.csv')!r}")
    summary = _load_json(root / "summary.json")
    targets = _load_json(root / "targets.json")
    if "final_network_mean" not in summary:
        print("no completed runs")
        return EXIT_FAIL
    names = summary["hypotheses"]
    truth = names.index(summary["truth"])
    final = summary["final_network_mean"]
    gaps = summary["final_consensus_gap"]["max_over_runs"]
    slopes = summary.get("slopes") or {}
    raw = np.asarray(slopes.get("raw", [[np.nan] * len(names)]))
    # certain-mode beliefs share the ignorance predictive's growth, so decay is
    # judged against the truth's trajectory
    rel = np.asarray(slopes.get("relative_to_truth", [[np.nan] * len(names)]))
    shown = rel if summary["certain"] else raw
    running_max = np.asarray(summary["running_max_mean_log_belief"]).mean(axis=0)
    net_target = targets.get("network_target")

    print(f"{'hypothesis':<12}{'final':>14}{'target':>14}{'gap':>12}{'slope':>14}  verdict")
    all_ok = True
    for h, name in enumerate(names):
        checks = []
        if summary["certain"]:
            if h == truth:
                checks.append(running_max[h] - final[h] <= PEAK_TOL)
            else:
                checks.append(bool(np.all(rel[:, h] < 0)))
            target_txt = "-"
        else:
            tgt = net_target[name]
            checks.append(abs(final[h] - tgt) < TARGET_TOL)
            checks.append(gaps[h] < CONSENSUS_TOL)
            target_txt = f"{tgt:14.4f}"
        ok = all(checks)
        all_ok &= ok
        print(f"{name:<12}{final[h]:14.4f}{target_txt:>14}{gaps[h]:12.2e}{np.mean(shown[:, h]):14.3e}  {'PASS' if ok else 'FAIL'}")
    inv = invariants_hold(summary)
    print(f"invariants: {'PASS' if inv else 'FAIL'} (centralization error {summary['invariants'].get('centralization_max_error', float('nan')):.2e})")
    all_ok &= inv
    print("PASS" if all_ok else "FAIL")
    return EXIT_OK if all_ok else EXIT_FAIL


def cmd_presets(args) -> int:
    for name in PRESETS:
        print(name)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "targets": cmd_targets,
    "oracle": cmd_oracle,
    "report": cmd_report,
    "presets": cmd_presets,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UMLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
