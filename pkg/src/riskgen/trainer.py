"""REINFORCE training loop with an entropy bonus and Adam-style ascent."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from riskgen import sim
from riskgen.errors import ConfigError, NumericError
from riskgen.graph import SPEED_RANGE_KMH, EnvState, ScenarioGraph, ScenarioSpec, encode_state, rescale
from riskgen.policy import (
    PolicyConfig,
    PolicyParams,
    backprop,
    gaussian_entropy,
    gaussian_log_prob,
    init_from_config,
    sample_batch,
    score_terms,
)

log = logging.getLogger(__name__)

# (spec, state) -> (reward, collided)
Evaluator = Callable[[ScenarioSpec, EnvState], tuple[float, bool]]


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    learning_rate: float = 0.008
    batch_size: int = 16
    entropy_weight: float = 0.001
    seed: int = 0
    grad_clip: float = 10.0
    baseline: bool = False  # subtract the batch-mean reward
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError("train.max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if self.entropy_weight < 0:
            raise ConfigError("train.entropy_weight must be >= 0")
        if not self.grad_clip > 0:
            raise ConfigError("train.grad_clip must be > 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_reward: float
    collisions: int
    batch_size: int
    mean_entropy: float
    grad_norm: float

    def __post_init__(self):
        if not 0 <= self.collisions <= self.batch_size:
            raise ConfigError("collision count outside [0, batch_size]")

    @property
    def collision_rate(self) -> float:
        return self.collisions / self.batch_size


class StateSampler:
    """Uniform draws over a route set and a target-speed interval (km/h)."""

    def __init__(
        self,
        routes: Sequence,
        speed_range: tuple[float, float] = SPEED_RANGE_KMH,
        n_waypoints: int = 10,
        position_scale: float = 100.0,
    ):
        if len(routes) == 0:
            raise ConfigError("route set is empty")
        lo, hi = speed_range
        if not lo <= hi:
            raise ConfigError(f"bad speed range {speed_range}")
        self.routes = [np.asarray(r, dtype=float) for r in routes]
        self.speed_range = (float(lo), float(hi))
        self.n_waypoints = n_waypoints
        self.position_scale = position_scale

    def __call__(self, rng) -> EnvState:
        return sample_env_state(
            self.routes, self.speed_range, rng, self.n_waypoints, self.position_scale
        )

    def state(self, route_index: int, speed: float) -> EnvState:
        return encode_state(
            self.routes[route_index], speed, self.n_waypoints, self.position_scale
        )


def sample_env_state(
    route_set: Sequence,
    speed_range: tuple[float, float],
    rng,
    n_waypoints: int = 10,
    position_scale: float = 100.0,
) -> EnvState:
    if len(route_set) == 0:
        raise ConfigError("route set is empty")
    route = route_set[int(rng.integers(len(route_set)))]
    speed = rng.uniform(*speed_range)
    return encode_state(route, speed, n_waypoints, position_scale)


def position_scale(graph: ScenarioGraph) -> float:
    return graph.block("X").scale if "X" in graph.names else 100.0


def simulator_evaluator(
    graph: ScenarioGraph,
    sim_config: sim.SimConfig = sim.SimConfig(),
    reward_config: sim.RewardConfig = sim.RewardConfig(),
) -> Evaluator:
    """The default environment: roll out in the simulator and score it."""

    def evaluate(spec: ScenarioSpec, state: EnvState) -> tuple[float, bool]:
        result = sim.simulate(spec, state, graph, sim_config, record_trace=False)
        return sim.compute_reward(result, reward_config), result.collision

    return evaluate


class Adam:
    """Adaptive-moment step in the ascent direction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Batch:
    states: list[EnvState]
    actions: np.ndarray  # (N, K) raw actions
    mu: np.ndarray
    sigma: np.ndarray
    specs: list[ScenarioSpec]
    rewards: np.ndarray
    collisions: np.ndarray

    @property
    def encoded(self) -> np.ndarray:
        return np.stack([s.encoded for s in self.states])


def collect_batch(
    params: PolicyParams,
    graph: ScenarioGraph,
    sampler: Callable,
    evaluate: Evaluator,
    batch_size: int,
    rng,
) -> Batch:
    states = [sampler(rng) for _ in range(batch_size)]
    encoded = np.stack([s.encoded for s in states])
    actions, mu, sigma, _ = sample_batch(params, encoded, graph, rng)
    specs, rewards, collisions = [], [], []
    for i, state in enumerate(states):
        values = tuple(rescale(float(a), b) for a, b in zip(actions[i], graph.blocks))
        spec = ScenarioSpec(
            tuple(actions[i]), values,
            gaussian_log_prob(actions[i], mu[i], sigma[i]), gaussian_entropy(sigma[i]),
        )
        reward, collided = evaluate(spec, state)
        specs.append(spec)
        rewards.append(reward)
        collisions.append(collided)
    return Batch(states, actions, mu, sigma, specs, np.array(rewards, dtype=float), np.array(collisions))


def policy_gradient(
    params: PolicyParams,
    graph: ScenarioGraph,
    batch: Batch,
    entropy_weight: float,
    baseline: bool = False,
) -> np.ndarray:
    """Raw ascent direction ``mean_i(R_i grad log pi_i) + lambda mean_i(grad H_i)``.

    Both terms are ascended: the step raises expected reward and policy
    entropy together.
    """
    n = len(batch.states)
    weights = batch.rewards - batch.rewards.mean() if baseline else batch.rewards
    g_mu, g_sigma = score_terms(batch.actions, batch.mu, batch.sigma)
    g_mu = g_mu * weights[:, None] / n
    g_sigma = g_sigma * weights[:, None] / n + entropy_weight / (n * batch.sigma)
    return backprop(params, batch.encoded, graph, batch.actions, g_mu, g_sigma)


def clip_by_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def train_epoch(
    params: PolicyParams,
    graph: ScenarioGraph,
    config: TrainConfig,
    sampler: Callable,
    evaluate: Evaluator,
    optimizer: Adam,
    rng,
    epoch: int = 0,
) -> tuple[PolicyParams, EpochRecord]:
    batch = collect_batch(params, graph, sampler, evaluate, config.batch_size, rng)
    try:
        grad = policy_gradient(params, graph, batch, config.entropy_weight, config.baseline)
    except NumericError as exc:
        raise NumericError(f"epoch {epoch}: {exc}; parameters left unchanged") from exc
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"epoch {epoch}: non-finite policy gradient; parameters left unchanged")
    grad, norm = clip_by_norm(grad, config.grad_clip)
    updated = params.with_vector(optimizer.step(params.vector, grad))
    if not np.all(np.isfinite(updated.vector)):
        raise NumericError(f"epoch {epoch}: update produced non-finite parameters")
    record = EpochRecord(
        epoch=epoch,
        mean_reward=float(batch.rewards.mean()),
        collisions=int(batch.collisions.sum()),
        batch_size=config.batch_size,
        mean_entropy=float(np.mean([s.entropy for s in batch.specs])),
        grad_norm=norm,
    )
    return updated, record


def train(
    params: PolicyParams,
    graph: ScenarioGraph,
    config: TrainConfig,
    sampler: Callable,
    evaluate: Evaluator,
    rng=None,
    on_epoch: Callable[[PolicyParams, EpochRecord], None] | None = None,
) -> tuple[PolicyParams, list[EpochRecord]]:
    """Run ``config.max_epochs`` epochs; ``on_epoch`` sees each updated policy."""
    params.check_graph(graph)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    records = []
    for epoch in range(1, config.max_epochs + 1):
        params, record = train_epoch(params, graph, config, sampler, evaluate, optimizer, rng, epoch)
        records.append(record)
        log.debug(
            "epoch %d reward %.3f collisions %d/%d", epoch, record.mean_reward,
            record.collisions, record.batch_size,
        )
        if on_epoch is not None:
            on_epoch(params, record)
    return params, records


def fit(
    graph: ScenarioGraph,
    config: TrainConfig,
    policy: PolicyConfig,
    sampler: Callable,
    evaluate: Evaluator,
    on_epoch: Callable[[PolicyParams, EpochRecord], None] | None = None,
) -> tuple[PolicyParams, list[EpochRecord]]:
    """Initialise a policy from ``config.seed`` and train it.

    The initial weights and the training stream come from separate child
    seeds, so changing the batch size does not change the initial policy.
    """
    init_seed, run_seed = np.random.SeedSequence(config.seed).spawn(2)
    params = init_from_config(graph, policy, int(init_seed.generate_state(1)[0]))
    return train(params, graph, config, sampler, evaluate, np.random.default_rng(run_seed), on_epoch)
