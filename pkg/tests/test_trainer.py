import numpy as np
import pytest

from riskgen import sim
from riskgen.errors import ConfigError, NumericError
from riskgen.graph import build_preset, encode_state
from riskgen.policy import PolicyConfig, conditionals, grad_log_prob, init_params, replay
from riskgen.routes import training_routes
from riskgen.trainer import (
    Adam,
    EpochRecord,
    StateSampler,
    TrainConfig,
    clip_by_norm,
    collect_batch,
    fit,
    policy_gradient,
    sample_env_state,
    simulator_evaluator,
    train,
    train_epoch,
)

CYCLIST = build_preset("cyclist_crossing")
ROUTES = training_routes()


def constant(value):
    return lambda spec, state: (value, False)


def small_params(seed=0):
    return init_params(CYCLIST, 21, hidden_state=8, hidden_action=6, seed=seed)


def test_sample_env_state_singleton_and_mean():
    rng = np.random.default_rng(0)
    only = ROUTES[3]
    for _ in range(20):
        np.testing.assert_array_equal(sample_env_state([only], (20, 50), rng).route, only)
    speeds = [sample_env_state(ROUTES, (20, 50), rng).target_speed for _ in range(10_000)]
    assert abs(np.mean(speeds) - 35.0) < 1.0
    assert min(speeds) >= 20 and max(speeds) <= 50


def test_sample_env_state_seeded():
    a = [sample_env_state(ROUTES, (20, 50), np.random.default_rng(5)).encoded for _ in range(3)]
    np.testing.assert_array_equal(a[0], a[1])
    with pytest.raises(ConfigError):
        sample_env_state([], (20, 50), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        StateSampler([])


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.max_epochs, cfg.learning_rate, cfg.batch_size, cfg.entropy_weight) == (100, 0.008, 16, 0.001)
    assert cfg.baseline is False
    for bad in ({"max_epochs": 0}, {"batch_size": 0}, {"learning_rate": 0.0}, {"entropy_weight": -1.0}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_epoch_record_bounds():
    assert EpochRecord(1, 0.0, 8, 16, 0.0, 0.0).collision_rate == 0.5
    with pytest.raises(ConfigError):
        EpochRecord(1, 0.0, 17, 16, 0.0, 0.0)


def test_zero_reward_no_entropy_leaves_params():
    p = small_params()
    cfg = TrainConfig(max_epochs=3, entropy_weight=0.0)
    q, records = train(p, CYCLIST, cfg, StateSampler(ROUTES), constant(0.0))
    np.testing.assert_array_equal(q.vector, p.vector)
    assert len(records) == 3


def test_single_rewarded_entry_direction():
    p = small_params(1)
    calls = []

    def evaluate(spec, state):
        calls.append(spec)
        return (1.0 if len(calls) == 1 else 0.0), False

    rng = np.random.default_rng(3)
    batch = collect_batch(p, CYCLIST, StateSampler(ROUTES), evaluate, 16, rng)
    grad = policy_gradient(p, CYCLIST, batch, entropy_weight=0.0)
    state = batch.states[0]
    eps = (batch.actions[0] - batch.mu[0]) / batch.sigma[0]
    expected = grad_log_prob(p, replay(p, state, CYCLIST, eps), state, CYCLIST) / 16
    np.testing.assert_allclose(grad, expected, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("reward", [1.0, -3.5, 12.25])
def test_update_algebra_single_sample(reward):
    p = small_params(2)
    rng = np.random.default_rng(4)
    batch = collect_batch(p, CYCLIST, StateSampler(ROUTES), constant(reward), 1, rng)
    grad = policy_gradient(p, CYCLIST, batch, entropy_weight=0.0)
    state = batch.states[0]
    eps = (batch.actions[0] - batch.mu[0]) / batch.sigma[0]
    expected = reward * grad_log_prob(p, replay(p, state, CYCLIST, eps), state, CYCLIST)
    assert np.max(np.abs(grad - expected)) < 1e-10


def test_one_epoch_runs_batch_size_rollouts(monkeypatch):
    calls = []
    real = sim.simulate

    def counting(*args, **kwargs):
        calls.append(1)
        return real(*args, **kwargs)

    monkeypatch.setattr(sim, "simulate", counting)
    cfg = TrainConfig(max_epochs=1, batch_size=16)
    _, records = train(small_params(), CYCLIST, cfg, StateSampler(ROUTES), simulator_evaluator(CYCLIST))
    assert len(calls) == 16
    assert len(records) == 1 and records[0].batch_size == 16


def test_full_length_run_records_every_epoch():
    _, records = train(small_params(), CYCLIST, TrainConfig(), StateSampler(ROUTES), constant(-1.0))
    assert [r.epoch for r in records] == list(range(1, 101))


def test_seeded_runs_identical():
    cfg = TrainConfig(max_epochs=3, seed=9)
    runs = [
        fit(CYCLIST, cfg, PolicyConfig(hidden_state=8, hidden_action=6), StateSampler(ROUTES), simulator_evaluator(CYCLIST))
        for _ in range(2)
    ]
    assert runs[0][1] == runs[1][1]
    np.testing.assert_array_equal(runs[0][0].vector, runs[1][0].vector)


def test_entropy_pressure_raises_sigma():
    p = small_params(5)
    probes = np.stack([encode_state(r, 35.0).encoded for r in ROUTES])
    zeros = np.zeros((len(probes), len(CYCLIST)))
    sigmas = [conditionals(p, probes, CYCLIST, zeros)[1].mean()]

    def track(params, record):
        sigmas.append(conditionals(params, probes, CYCLIST, zeros)[1].mean())

    cfg = TrainConfig(max_epochs=20, entropy_weight=0.01)
    train(p, CYCLIST, cfg, StateSampler(ROUTES), constant(0.0), on_epoch=track)
    assert np.all(np.diff(sigmas) >= 0)
    assert sigmas[-1] > sigmas[0]


def test_non_finite_gradient_aborts_epoch():
    p = small_params()
    cfg = TrainConfig(max_epochs=1)
    before = p.vector.copy()
    with pytest.raises(NumericError, match="parameters left unchanged"):
        train_epoch(
            p, CYCLIST, cfg, StateSampler(ROUTES), constant(float("nan")),
            Adam(cfg.learning_rate), np.random.default_rng(0), 1,
        )
    np.testing.assert_array_equal(p.vector, before)


def test_adam_first_step_is_signed_learning_rate():
    opt = Adam(0.01)
    theta = opt.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(theta, [0.01, -0.01, 0.0], atol=1e-8)


def test_clip_by_norm():
    g, n = clip_by_norm(np.array([30.0, 40.0]), 10.0)
    assert n == 50.0
    np.testing.assert_allclose(g, [6.0, 8.0])
    g, n = clip_by_norm(np.array([3.0, 4.0]), 10.0)
    np.testing.assert_array_equal(g, [3.0, 4.0])
