import numpy as np
import pytest

from umlearn.config import MULTINOMIAL_K4, PRESETS, config_from_json, multinomial_k4, table1_gaussian
from umlearn.conjugate import MULTINOMIAL, batch_log_ulr
from umlearn.harness import (
    OBSERVATION_STREAM,
    agent_rng,
    draw_evidence,
    estimate_slope,
    run_ensemble,
    run_seed,
    run_single,
    summarize,
)
from umlearn.truth import sample, spec_to_json


def single_agent(evidence, horizon=200, runs=1, seed=0):
    return config_from_json(
        {
            "name": "solo",
            "network": {"m": 1, "weights": [[1.0]]},
            "distributions": {k: spec_to_json(v) for k, v in MULTINOMIAL_K4.items()},
            "hypotheses": ["a", "b"],
            "agents": [{"observation": "Q1", "hypotheses": ["Q1", "Q2"], "model": {"family": "multinomial"}}],
            "evidence": evidence,
            "horizon": horizon,
            "runs": runs,
            "seed": seed,
        }
    )


def test_evidence_range_of_one_gives_one_sample():
    ev = draw_evidence(single_agent({"range": [1, 1]}), 7)
    np.testing.assert_array_equal(ev.sizes, [[1, 1]])
    assert all(r.sum() == 1 for r in ev.data[0])


def test_evidence_sizes_are_uniform_on_the_range():
    cfg = single_agent({"range": [500, 1000]})
    rng = np.random.default_rng(0)
    sizes = np.concatenate([draw_evidence(cfg, rng).sizes.ravel() for _ in range(600)])
    assert sizes.min() >= 500 and sizes.max() <= 1000
    se = np.sqrt((501**2 - 1) / 12 / len(sizes))
    assert abs(sizes.mean() - 750) < 3 * se


def test_certain_evidence_holds_parameters():
    ev = draw_evidence(single_agent("certain"), 0)
    assert ev.certain and ev.sizes is None
    np.testing.assert_array_equal(ev.certain_params[0][1].pi, MULTINOMIAL_K4["Q2"].pi)


def test_single_agent_run_equals_batch_ratio():
    cfg = single_agent({"range": [20, 60]}, horizon=300)
    seed = run_seed(5, 0)
    res = run_single(cfg, seed)
    ev = draw_evidence(cfg, seed)
    obs = sample(MULTINOMIAL_K4["Q1"], agent_rng(seed, 0, OBSERVATION_STREAM), cfg.horizon)
    for h in range(2):
        expected = batch_log_ulr(MULTINOMIAL, ev.data[0][h], obs)
        assert res.final_log_ulr[0, h] == pytest.approx(expected, abs=1e-9)
        assert res.log_belief[-1, 0, h] == pytest.approx(expected, abs=1e-9)


def test_vacuous_evidence_keeps_beliefs_at_one():
    res = run_single(single_agent({"range": [0, 0]}, horizon=1000), 3)
    np.testing.assert_array_equal(res.log_belief, 0.0)
    np.testing.assert_array_equal(res.targets, 0.0)


def test_large_evidence_rejects_theta3_at_the_third_agent():
    cfg = config_from_json(table1_gaussian(evidence=(10_000, 100_000), horizon=10_000, runs=1))
    res = run_single(cfg, run_seed(0, 0))
    final = res.log_belief[-1]
    assert np.argmin(final[2]) == 2
    assert np.argmin(final.mean(axis=0)) == 2


def test_ensemble_of_one_matches_run_single():
    cfg = single_agent({"range": [10, 30]}, horizon=500, runs=1, seed=9)
    ens = run_ensemble(cfg, workers=1)
    res = run_single(cfg, run_seed(9, 0))
    np.testing.assert_array_equal(ens.mean_log_belief, res.log_belief)
    np.testing.assert_array_equal(ens.log_mean_belief, res.log_belief)


def test_ensemble_is_deterministic_and_worker_independent():
    cfg = config_from_json(multinomial_k4(evidence=(10, 50), horizon=2000, runs=3))
    a = run_ensemble(cfg, workers=1)
    b = run_ensemble(cfg, workers=2)
    assert a.seeds == b.seeds
    assert a.mean_log_belief.tobytes() == b.mean_log_belief.tobytes()


def test_redraw_changes_evidence_between_runs():
    obj = multinomial_k4(evidence=(10, 5000), horizon=100, runs=3)
    shared = run_ensemble(config_from_json(obj), workers=1)
    obj["evidence"]["redraw"] = True
    fresh = run_ensemble(config_from_json(obj), workers=1)
    assert all(np.array_equal(r.evidence_sizes, shared.runs[0].evidence_sizes) for r in shared.runs)
    assert not np.array_equal(fresh.runs[0].evidence_sizes, fresh.runs[1].evidence_sizes)


@pytest.mark.slow
def test_k4_ensemble_mean_reaches_the_network_target():
    cfg = config_from_json(multinomial_k4(evidence=(500, 1000), horizon=100_000, runs=5))
    ens = run_ensemble(cfg)
    np.testing.assert_array_less(np.abs(ens.mean_log_belief[-1] - ens.network_target), 0.2)


def test_estimate_slope_on_exact_lines():
    t = np.arange(1, 101)
    y = np.stack([3.0 - 0.5 * t, 2.0 * t], axis=1)
    np.testing.assert_allclose(estimate_slope((t, y), (10, 100)), [-0.5, 2.0])
    np.testing.assert_allclose(estimate_slope((t, y), (10, 100), reference=1), [-2.5, 0.0], atol=1e-12)


@pytest.mark.parametrize("window", [(5, 5), (0, 10), (200, 300)])
def test_estimate_slope_rejects_bad_windows(window):
    t = np.arange(1, 101)
    with pytest.raises(ValueError):
        estimate_slope((t, t.astype(float)), window)


def test_certain_truth_trajectory_settles():
    cfg = config_from_json(PRESETS["table1-gaussian-certain"]()).with_overrides(runs=3)
    ens = run_ensemble(cfg, workers=1)
    s = summarize(cfg, ens)
    truth = np.array(s["final_mean_log_belief"])[:, 0]
    peak = np.array(s["running_max_mean_log_belief"])[:, 0]
    np.testing.assert_array_less(peak - truth, 0.2)
    assert np.all(np.array(s["slopes"]["relative_to_truth"])[:, 1:] < 0)


@pytest.mark.parametrize("name", ["table1-gaussian", "multinomial-k4", "mixture-grid-g8"])
def test_preset_runs_are_finite_and_centralized(name):
    cfg = config_from_json(PRESETS[name]()).with_overrides(runs=2, horizon=3000)
    ens = run_ensemble(cfg, workers=1)
    inv = summarize(cfg, ens)["invariants"]
    assert inv["finite"] and inv["all_runs_completed"] and inv["spectral_bound"]
    assert inv["centralization_max_error"] < 1e-8
    for r in ens.runs:
        np.testing.assert_allclose(r.log_belief.sum(axis=1), r.cum_log_ulr.sum(axis=1), rtol=0, atol=1e-8)
