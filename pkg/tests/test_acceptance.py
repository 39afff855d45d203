"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``. The training
criteria (5 and 6) share one set of runs, about five minutes on one core.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from riskgen import sim
from riskgen.baselines import GridSpec, grid_search, independent_policy_train, random_sampling
from riskgen.cli import run_training
from riskgen.config import from_dict
from riskgen.graph import BlockDef, ScenarioGraph, build_preset, encode_state
from riskgen.metrics import collision_rate, distance_to_route, policy_heatmap
from riskgen.policy import (
    PolicyConfig,
    conditionals,
    gaussian_entropy,
    gaussian_log_prob,
    grad_entropy,
    grad_log_prob,
    init_params,
    log_prob,
    sample,
    sample_batch,
)
from riskgen.routes import heldout_routes, intersection_route, training_routes
from riskgen.trainer import StateSampler, TrainConfig, fit, position_scale, simulator_evaluator, train

from collision_oracle import in_boundary_band, random_pose_pairs, raster_overlap

CYCLIST = build_preset("cyclist_crossing")
SEEDS = range(5)


# -- 1 ---------------------------------------------------------------------

def _fd(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _random_graph(rng):
    n = int(rng.integers(1, 5))
    blocks = []
    for k in range(n):
        parents = tuple(f"b{j}" for j in range(k) if rng.random() < 0.6)
        blocks.append(BlockDef(f"b{k}", float(rng.uniform(1, 100)), 0.0, parents))
    return ScenarioGraph("fd", tuple(blocks), activation="immediate")


def test_gradient_correctness(verdict):
    start = time.perf_counter()
    worst, configs = 0.0, 0
    for seed in range(24):
        rng = np.random.default_rng(100 + seed)
        graph = _random_graph(rng) if seed % 3 else CYCLIST
        state = encode_state(intersection_route(20.0, ["left", "right", "straight"][seed % 3], 8.0), 20.0 + seed, 3)
        cap = None if seed % 2 else 0.7
        p = init_params(graph, state.encoded.size, hidden_state=5, hidden_action=4, seed=seed, init_sigma=0.3, sigma_cap=cap)
        p = p.with_vector(p.vector + 0.3 * rng.standard_normal(p.vector.size))
        s = sample(p, state, graph, rng)

        def lp(v):
            mu, sig = conditionals(p.with_vector(v), state, graph, s.actions[None])
            return gaussian_log_prob(s.actions, mu[0], sig[0])

        def ent(v):
            _, sig = conditionals(p.with_vector(v), state, graph, s.actions[None])
            return gaussian_entropy(sig[0])

        worst = max(
            worst,
            _rel(grad_log_prob(p, s, state, graph), _fd(lp, p.vector)),
            _rel(grad_entropy(p, state, graph, s), _fd(ent, p.vector)),
        )
        configs += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and configs >= 20 and elapsed < 10.0
    verdict(1, "gradient correctness", ok, f"{configs} configs, worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------

def test_probability_identities(verdict):
    state = encode_state(heldout_routes()["left"], 30.0)
    rng = np.random.default_rng(0)

    ind = CYCLIST.independent()
    p = init_params(ind, 21, seed=5, init_sigma=0.3)
    chain_err = 0.0
    for _ in range(50):
        s = sample(p, state, ind, rng)
        direct = stats.multivariate_normal(s.mu, np.diag(s.sigma**2)).logpdf(s.actions)
        chain_err = max(chain_err, abs(log_prob(s) - direct))

    q = init_params(CYCLIST, 21, seed=2, init_sigma=0.2)
    n = 100_000
    acts, mu, sigma, _ = sample_batch(q, np.repeat(state.encoded[None], n, 0), CYCLIST, rng)
    neg_lp = np.sum(0.5 * math.log(2 * math.pi) + np.log(sigma) + 0.5 * ((acts - mu) / sigma) ** 2, axis=1)
    ent = np.sum(0.5 * np.log(2 * math.pi * math.e * sigma**2), axis=1)
    se = neg_lp.std(ddof=1) / math.sqrt(n)
    mc_gap = abs(neg_lp.mean() - ent.mean()) / se

    norm_err = max(
        abs(policy_heatmap(q, state, CYCLIST, b).probs.sum() - 1.0) for b in CYCLIST.names
    )
    ok = chain_err < 1e-10 and mc_gap < 3.0 and norm_err < 1e-9
    verdict(
        2, "probability identities", ok,
        f"chain rule err {chain_err:.1e}, entropy MC gap {mc_gap:.2f} SE, heatmap sum err {norm_err:.1e}",
    )
    assert ok


# -- 3 ---------------------------------------------------------------------

def test_collision_oracle(verdict):
    rng = np.random.default_rng(2024)
    checked = disagreements = 0
    for a, da, b, db in random_pose_pairs(rng, 10_000):
        if in_boundary_band(a, da, b, db, 0.02):
            continue
        checked += 1
        disagreements += sim.check_collision(a, da, b, db) != raster_overlap(a, da, b, db)
    ok = disagreements == 0 and checked > 8_000
    verdict(3, "collision oracle", ok, f"{disagreements} disagreements on {checked} pairs outside the 2 cm band")
    assert ok


# -- 4 ---------------------------------------------------------------------

def test_bandit_convergence(verdict):
    block = BlockDef("B", 40.0, 20.0)
    graph = ScenarioGraph("bandit", (block,), activation="immediate")
    state = encode_state([[0.0, 0.0], [10.0, 0.0]], 35.0, 2)
    targets = np.random.default_rng(7).uniform(block.low + 2, block.high - 2, 10)
    start = time.perf_counter()
    errors = []
    for seed, c in enumerate(targets):
        p = init_params(graph, state.encoded.size, hidden_state=8, hidden_action=8, seed=seed)

        def reward(spec, _state, c=c):
            return -abs(spec.values[0] - c), False

        p, _ = train(p, graph, TrainConfig(max_epochs=500, seed=seed), lambda rng: state, reward)
        mu, _ = conditionals(p, state, graph, np.zeros((1, 1)))
        errors.append(abs(mu[0, 0] * block.scale + block.shift - c))
    elapsed = time.perf_counter() - start
    hits = sum(e <= 0.05 * block.scale for e in errors)
    ok = hits == 10 and elapsed < 30.0
    verdict(4, "bandit convergence", ok, f"{hits}/10 seeds within 2 m (worst {max(errors):.2f} m), {elapsed:.1f}s")
    assert ok


# -- 5 and 6 -----------------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    """Five seeds each of the autoregressive and independent policies."""
    routes = training_routes()
    out = {"ar": [], "ind": [], "start": time.perf_counter()}
    for seed in SEEDS:
        cfg = TrainConfig(seed=seed)
        out["ar"].append(fit(CYCLIST, cfg, PolicyConfig(), StateSampler(routes), simulator_evaluator(CYCLIST)))
        out["ind"].append(independent_policy_train(
            CYCLIST, cfg, PolicyConfig(), StateSampler(routes), simulator_evaluator(CYCLIST.independent())
        ))
    return out


def test_method_ordering(trained, verdict, monkeypatch):
    ar = [collision_rate(rec, 10) for _, rec in trained["ar"]]
    ind = [collision_rate(rec, 10) for _, rec in trained["ind"]]

    # same number of rollouts as a stable window: 10 epochs of 16
    sampler = StateSampler(training_routes())
    rand = []
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        states = [sampler(rng) for _ in range(160)]
        results = random_sampling(CYCLIST, states, 160, rng)
        rand.append(np.mean([r.collision for r in results]))

    calls = []
    real = sim.simulate

    def counting(*args, **kwargs):
        calls.append(1)
        return real(*args, **kwargs)

    monkeypatch.setattr(sim, "simulate", counting)
    state = encode_state(heldout_routes()["straight"], 30.0, 10, position_scale(CYCLIST))
    results = grid_search(CYCLIST, state, GridSpec((4, 3, 20, 10)))
    elapsed = time.perf_counter() - trained["start"]

    checks = {
        "AR >= 0.5": np.mean(ar) >= 0.5,
        "random <= 0.15": np.mean(rand) <= 0.15,
        "AR >= independent": np.mean(ar) >= np.mean(ind),
        "grid 10800": len(calls) == 10_800 and len(results) == 10_800,
        "< 30 min": elapsed < 1800,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    detail = (
        f"AR {np.mean(ar):.3f} {np.round(ar, 3).tolist()}, independent {np.mean(ind):.3f} "
        f"{np.round(ind, 3).tolist()}, random {np.mean(rand):.3f}, grid rollouts {len(calls)}, "
        f"{elapsed:.0f}s" + (f"; failed: {', '.join(failed)}" if failed else "")
    )
    verdict(5, "method ordering", ok, detail)
    assert ok, detail


def test_adaptivity(trained, verdict):
    routes = heldout_routes()
    half_y = CYCLIST.block("Y").scale / 2
    rows, ok = [], True
    for seed, (params, _) in zip(SEEDS, trained["ar"]):
        picks = {}
        for name in ("left", "right"):
            state = encode_state(routes[name], 35.0, 10, position_scale(CYCLIST))
            x = policy_heatmap(params, state, CYCLIST, "X").argmax()[0]
            y = policy_heatmap(params, state, CYCLIST, "Y").argmax()[0]
            picks[name] = (x, y, distance_to_route((x, y), routes[name]))
        differs = picks["left"][:2] != picks["right"][:2]
        near = all(d <= half_y for _, _, d in picks.values())
        ok &= differs and near
        rows.append(
            f"seed {seed}: left ({picks['left'][0]:.1f}, {picks['left'][1]:.1f}) d={picks['left'][2]:.1f}, "
            f"right ({picks['right'][0]:.1f}, {picks['right'][1]:.1f}) d={picks['right'][2]:.1f}"
        )
    verdict(6, "adaptivity", ok, "; ".join(rows))
    assert ok


# -- 7 ---------------------------------------------------------------------

def test_determinism(tmp_path, verdict):
    experiment = from_dict({"scenario": "cyclist_crossing", "train": {"seed": 17, "max_epochs": 20}})
    first = run_training(experiment, tmp_path)
    second = run_training(experiment, tmp_path)
    a, b = (first / "metrics.csv").read_bytes(), (second / "metrics.csv").read_bytes()
    ok = a == b and first != second
    verdict(7, "determinism", ok, f"{first.name} vs {second.name}: {'identical' if a == b else 'different'} metric logs")
    assert ok
