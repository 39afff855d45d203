import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskgen import sim
from riskgen.baselines import (
    GridSpec,
    axis_points,
    grid_search,
    human_design,
    human_design_route,
    independent_policy_train,
    random_sampling,
    random_specs,
)
from riskgen.errors import ConfigError
from riskgen.graph import BlockDef, ScenarioGraph, build_preset, encode_state
from riskgen.policy import PolicyConfig, init_from_config, init_params, sample
from riskgen.results import rank
from riskgen.routes import heldout_routes, training_routes
from riskgen.trainer import StateSampler, TrainConfig, simulator_evaluator

CYCLIST = build_preset("cyclist_crossing")


def tiny_graph(scale=10.0):
    return ScenarioGraph("tiny", (BlockDef("V", scale, 8.0),), activation="immediate")


def test_cyclist_grid_counts():
    grid = GridSpec((4, 3, 20, 10))
    assert [len(a) for a in grid.axes(CYCLIST)] == [25, 6, 18, 4]
    assert grid.size(CYCLIST) == 10_800
    x, y, theta, d = grid.axes(CYCLIST)
    assert x[0] == -50.0 and x[-1] == 46.0
    assert theta[0] == 0.0 and theta[-1] == 340.0
    assert list(d) == [0.0, 10.0, 20.0, 30.0]


def test_step_larger_than_range_gives_one_point():
    assert GridSpec((20.0,)).size(tiny_graph(10.0)) == 1
    np.testing.assert_array_equal(GridSpec((20.0,)).axes(tiny_graph(10.0))[0], [3.0])


@given(st.floats(-1e3, 1e3), st.floats(0.01, 500), st.floats(0.01, 100))
def test_axis_count_is_ceiling(low, length, step):
    pts = axis_points(low, low + length, step)
    ratio = round(length / step, 9)
    assert len(pts) == max(1, math.ceil(ratio))
    assert pts[0] == low
    assert np.all(pts < low + length + 1e-9 * max(1.0, abs(low) + length))


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridSpec((1.0, 0.0))
    with pytest.raises(ConfigError):
        GridSpec((1.0,)).axes(CYCLIST)
    state = encode_state(heldout_routes()["straight"], 30.0)
    with pytest.raises(ConfigError, match="cap"):
        grid_search(CYCLIST, state, (4, 3, 20, 10), cap=10_000)


VEHICLE = ScenarioGraph(
    "g", (BlockDef("X", 40.0, 20.0), BlockDef("Y", 18.0, 0.0), BlockDef("V", 14.0, 8.0)),
    activation="immediate", heading_deg=90.0,
)


def test_grid_search_ranked_and_order_free():
    g = VEHICLE
    state = encode_state(heldout_routes()["straight"], 30.0)
    results = grid_search(g, state, (10, 6, 7))
    assert len(results) == 4 * 3 * 2
    rewards = [r.reward for r in results]
    assert rewards == sorted(rewards, reverse=True)
    shuffled = list(results)
    np.random.default_rng(0).shuffle(shuffled)
    assert rank(shuffled) == results


def test_random_theta_mean():
    specs = random_specs(CYCLIST, 10_000, np.random.default_rng(1))
    theta = np.array([s.values[2] for s in specs])
    assert abs(theta.mean() - 180.0) < 3.6
    for k, b in enumerate(CYCLIST.blocks):
        vals = np.array([s.values[k] for s in specs])
        assert vals.min() >= b.low and vals.max() <= b.high


def test_random_sampling_count_and_seed():
    state = encode_state(heldout_routes()["left"], 30.0)
    one = random_sampling(CYCLIST, state, 1, np.random.default_rng(0))
    assert len(one) == 1
    a = random_sampling(CYCLIST, state, 20, np.random.default_rng(4))
    b = random_sampling(CYCLIST, state, 20, np.random.default_rng(4))
    assert a == b
    with pytest.raises(ConfigError):
        random_specs(CYCLIST, 0, np.random.default_rng(0))


def test_independent_heads_see_state_only():
    ind = CYCLIST.independent()
    p = init_params(ind, 21, hidden_state=64, hidden_action=32)
    for k in range(len(ind)):
        assert p.shapes[f"head{k}.W"][1] == 64


def test_independent_zero_init_matches_autoregressive_sigma():
    state = encode_state(heldout_routes()["left"], 30.0)
    rng = np.random.default_rng(0)
    ar = sample(init_params(CYCLIST, 21, zero=True), state, CYCLIST, rng)
    ind = sample(init_params(CYCLIST.independent(), 21, zero=True), state, CYCLIST.independent(), rng)
    np.testing.assert_array_equal(ar.sigma, ind.sigma)


def test_independent_training_runs():
    cfg = TrainConfig(max_epochs=2, seed=0)
    params, records = independent_policy_train(
        CYCLIST, cfg, PolicyConfig(hidden_state=8, hidden_action=6),
        StateSampler(training_routes()), simulator_evaluator(CYCLIST.independent()),
    )
    assert len(records) == 2
    assert all(pc == 0 for pc in params.parent_counts)


@pytest.mark.parametrize("name", ["cyclist_crossing", "red_light_runner", "unprotected_left", "signalized_right"])
def test_human_design_fixed_valid_and_colliding(name):
    g = build_preset(name)
    spec = human_design(g)
    assert spec == human_design(name)
    spec.check(g)
    route = heldout_routes()[human_design_route(name)]
    result = sim.simulate(spec, encode_state(route, 30.0), g)
    assert result.collision and not result.route_occupied


def test_human_design_ignores_state():
    # fixedness: nothing about the route or speed enters the lookup
    assert human_design(CYCLIST).values == human_design("cyclist_crossing").values
    with pytest.raises(ConfigError):
        human_design(CYCLIST, "nope")


def test_baselines_share_simulate(monkeypatch):
    calls = []
    real = sim.simulate

    def counting(*args, **kwargs):
        calls.append(1)
        return real(*args, **kwargs)

    monkeypatch.setattr(sim, "simulate", counting)
    state = encode_state(heldout_routes()["straight"], 30.0)
    random_sampling(CYCLIST, state, 7, np.random.default_rng(0))
    assert len(calls) == 7
    grid_search(VEHICLE, state, (20.0, 18.0, 5.0))
    assert len(calls) == 7 + 2 * 1 * 3
    evaluate = simulator_evaluator(CYCLIST)
    p = init_from_config(CYCLIST, PolicyConfig(hidden_state=4, hidden_action=4), seed=0)
    evaluate(sample(p, state, CYCLIST, np.random.default_rng(0)).spec, state)
    assert len(calls) == 7 + 6 + 1
