"""Autoregressive conditional Gaussian policy with hand-written backprop.

Layout: one tanh state encoder shared by all blocks, then per block a tanh
hidden layer fed with ``[encoding, raw actions of the block's parents]``
and two outputs: ``mu = 0.5 * tanh(.)``, which keeps the mean inside the
block's range, and ``sigma = max(softplus(.), sigma_floor)``.

All parameters live in one flat float64 vector so the optimizer and the
finite-difference checks can treat them uniformly; named views are cut out
of it by :class:`PolicyParams`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from riskgen.errors import ConfigError, NumericError
from riskgen.graph import EnvState, ScenarioGraph, ScenarioSpec, rescale

SIGMA_FLOOR = 0.05
INIT_SIGMA = 0.1
CHECKPOINT_VERSION = "riskgen-policy/1"
MU_BOUND = 0.5
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _layout(state_dim: int, h_s: int, h_a: int, parent_counts) -> list[tuple[str, tuple[int, ...]]]:
    shapes = [("enc.W", (h_s, state_dim)), ("enc.b", (h_s,))]
    for k, p in enumerate(parent_counts):
        shapes += [
            (f"head{k}.W", (h_a, h_s + p)),
            (f"head{k}.b", (h_a,)),
            (f"head{k}.mu_w", (h_a,)),
            (f"head{k}.mu_b", (1,)),
            (f"head{k}.sigma_w", (h_a,)),
            (f"head{k}.sigma_b", (1,)),
        ]
    return shapes


@dataclass(frozen=True, eq=False)
class PolicyParams:
    vector: np.ndarray
    state_dim: int
    hidden_state: int
    hidden_action: int
    parent_counts: tuple[int, ...]
    seed: int | None = None
    sigma_floor: float = SIGMA_FLOOR
    sigma_cap: float | None = None
    _slices: dict = field(init=False, repr=False)

    def __post_init__(self):
        layout = _layout(self.state_dim, self.hidden_state, self.hidden_action, self.parent_counts)
        slices, offset = {}, 0
        for name, shape in layout:
            size = int(np.prod(shape))
            slices[name] = (offset, offset + size, shape)
            offset += size
        if not self.sigma_floor > 0:
            raise ConfigError("sigma_floor must be > 0")
        if self.sigma_cap is not None and not self.sigma_cap > self.sigma_floor:
            raise ConfigError("sigma_cap must exceed sigma_floor")
        if self.vector.shape != (offset,):
            raise ConfigError(f"parameter vector has shape {self.vector.shape}, expected ({offset},)")
        object.__setattr__(self, "parent_counts", tuple(self.parent_counts))
        object.__setattr__(self, "_slices", slices)

    def __getitem__(self, name: str) -> np.ndarray:
        start, stop, shape = self._slices[name]
        return self.vector[start:stop].reshape(shape)

    @property
    def n_blocks(self) -> int:
        return len(self.parent_counts)

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: s[2] for name, s in self._slices.items()}

    def slice_of(self, name: str) -> slice:
        start, stop, _ = self._slices[name]
        return slice(start, stop)

    def with_vector(self, vector: np.ndarray) -> "PolicyParams":
        return PolicyParams(
            np.asarray(vector, dtype=float), self.state_dim, self.hidden_state,
            self.hidden_action, self.parent_counts, self.seed, self.sigma_floor,
            self.sigma_cap,
        )

    def check_graph(self, graph: ScenarioGraph) -> None:
        counts = tuple(len(b.parents) for b in graph.blocks)
        if counts != self.parent_counts:
            raise ConfigError(
                f"policy heads expect parent counts {self.parent_counts}, "
                f"graph {graph.name!r} has {counts}"
            )


@dataclass(frozen=True)
class PolicyConfig:
    hidden_state: int = 64
    hidden_action: int = 32
    n_waypoints: int = 10
    init_sigma: float = INIT_SIGMA
    sigma_floor: float = SIGMA_FLOOR
    sigma_cap: float | None = None

    def __post_init__(self):
        if self.hidden_state < 1 or self.hidden_action < 1:
            raise ConfigError("policy hidden sizes must be >= 1")
        if self.n_waypoints < 2:
            raise ConfigError("policy.n_waypoints must be >= 2")
        if not self.sigma_floor > 0:
            raise ConfigError("policy.sigma_floor must be > 0")
        if not self.init_sigma > 0:
            raise ConfigError("policy.init_sigma must be > 0")
        if self.sigma_cap is not None and not self.sigma_floor < self.init_sigma < self.sigma_cap:
            raise ConfigError("policy needs sigma_floor < init_sigma < sigma_cap")

    @property
    def state_dim(self) -> int:
        return 2 * self.n_waypoints + 1


def init_params(
    graph: ScenarioGraph,
    state_dim: int,
    hidden_state: int = 64,
    hidden_action: int = 32,
    seed: int | None = 0,
    zero: bool = False,
    init_sigma: float | None = INIT_SIGMA,
    sigma_floor: float = SIGMA_FLOOR,
    sigma_cap: float | None = None,
) -> PolicyParams:
    """Fan-in uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``init_sigma`` (range fraction) offsets each sigma bias so the heads
    start near that standard deviation instead of ``softplus(0) = 0.69``,
    which spans more than the whole range. ``zero=True`` gives all-zero
    parameters and ignores it.
    """
    counts = tuple(len(b.parents) for b in graph.blocks)
    layout = _layout(state_dim, hidden_state, hidden_action, counts)
    rng = np.random.default_rng(seed)
    # weight and bias of a layer share the layer's fan-in
    fan_in = {"enc": state_dim}
    fan_in.update({f"head{k}": hidden_state + p for k, p in enumerate(counts)})
    chunks = []
    for name, shape in layout:
        size = int(np.prod(shape))
        if zero:
            chunks.append(np.zeros(size))
            continue
        layer, part = name.split(".")
        n_in = fan_in[layer] if part in ("W", "b") else hidden_action
        bound = 1.0 / math.sqrt(n_in)
        chunk = rng.uniform(-bound, bound, size)
        if init_sigma is not None and part == "sigma_b":
            chunk += _sigma_offset(init_sigma, sigma_floor, sigma_cap)
        chunks.append(chunk)
    return PolicyParams(
        np.concatenate(chunks), state_dim, hidden_state, hidden_action, counts, seed,
        sigma_floor, sigma_cap,
    )


def _sigma_offset(init_sigma: float, floor: float, cap: float | None) -> float:
    """Pre-activation at which the sigma output equals ``init_sigma``."""
    if cap is None:
        return math.log(math.expm1(init_sigma))
    frac = (init_sigma - floor) / (cap - floor)
    return math.log(frac / (1.0 - frac))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sigma(params: PolicyParams, pre: np.ndarray) -> np.ndarray:
    if params.sigma_cap is None:
        return np.maximum(_softplus(pre), params.sigma_floor)
    return params.sigma_floor + (params.sigma_cap - params.sigma_floor) * _sigmoid(pre)


def _dsigma(params: PolicyParams, pre: np.ndarray) -> np.ndarray:
    if params.sigma_cap is None:
        # the floor is a hard clamp: no gradient where it is active
        return _sigmoid(pre) * (_softplus(pre) > params.sigma_floor)
    s = _sigmoid(pre)
    return (params.sigma_cap - params.sigma_floor) * s * (1.0 - s)


def _encode(params: PolicyParams, states: np.ndarray) -> np.ndarray:
    return np.tanh(states @ params["enc.W"].T + params["enc.b"])


def _head(params: PolicyParams, k: int, h: np.ndarray, parent_actions: np.ndarray):
    inp = np.concatenate((h, parent_actions), axis=1) if parent_actions.shape[1] else h
    z = np.tanh(inp @ params[f"head{k}.W"].T + params[f"head{k}.b"])
    mu = MU_BOUND * np.tanh(z @ params[f"head{k}.mu_w"] + params[f"head{k}.mu_b"][0])
    pre = z @ params[f"head{k}.sigma_w"] + params[f"head{k}.sigma_b"][0]
    sigma = _sigma(params, pre)
    return inp, z, mu, pre, sigma


def _as_states(params: PolicyParams, states) -> np.ndarray:
    if isinstance(states, EnvState):
        states = states.encoded
    s = np.atleast_2d(np.asarray(states, dtype=float))
    if s.shape[1] != params.state_dim:
        raise ConfigError(f"state encoding has length {s.shape[1]}, policy expects {params.state_dim}")
    return s


def _check_continuous(graph: ScenarioGraph) -> None:
    for b in graph.blocks:
        if b.kind != "continuous":
            raise ConfigError(
                f"block {b.name!r} is discrete; only continuous blocks can be sampled"
            )


@dataclass(frozen=True, eq=False)
class PolicySample:
    spec: ScenarioSpec
    mu: np.ndarray
    sigma: np.ndarray
    actions: np.ndarray
    eps: np.ndarray

    @property
    def log_prob(self) -> float:
        return self.spec.log_prob

    @property
    def entropy(self) -> float:
        return self.spec.entropy


def conditionals(params: PolicyParams, states, graph: ScenarioGraph, actions) -> tuple[np.ndarray, np.ndarray]:
    """Per-block ``(mu, sigma)``, each ``(B, K)``, given all raw actions."""
    params.check_graph(graph)
    s = _as_states(params, states)
    acts = np.atleast_2d(np.asarray(actions, dtype=float))
    h = _encode(params, s)
    mus, sigmas = [], []
    for k in range(len(graph)):
        _, _, mu, _, sigma = _head(params, k, h, acts[:, graph.parent_indices(k)])
        mus.append(mu)
        sigmas.append(sigma)
    return np.column_stack(mus), np.column_stack(sigmas)


def sample_batch(params: PolicyParams, states, graph: ScenarioGraph, rng, eps=None):
    """Draw one scenario per state row; returns ``(actions, mu, sigma, eps)``."""
    params.check_graph(graph)
    _check_continuous(graph)
    s = _as_states(params, states)
    n, K = len(s), len(graph)
    if eps is None:
        eps = rng.standard_normal((n, K))
    eps = np.asarray(eps, dtype=float).reshape(n, K)
    h = _encode(params, s)
    actions = np.zeros((n, K))
    mu = np.zeros((n, K))
    sigma = np.zeros((n, K))
    for k in range(K):
        _, _, mu[:, k], _, sigma[:, k] = _head(params, k, h, actions[:, graph.parent_indices(k)])
        actions[:, k] = mu[:, k] + sigma[:, k] * eps[:, k]
    return actions, mu, sigma, eps


def sample(params: PolicyParams, state: EnvState, graph: ScenarioGraph, rng) -> PolicySample:
    eps = rng.standard_normal(len(graph))
    return replay(params, state, graph, eps)


def replay(params: PolicyParams, state: EnvState, graph: ScenarioGraph, eps) -> PolicySample:
    """Rebuild a sample from recorded standard-normal draws."""
    actions, mu, sigma, eps = sample_batch(params, state.encoded, graph, None, np.asarray(eps)[None, :])
    a, m, s, e = actions[0], mu[0], sigma[0], eps[0]
    values = tuple(rescale(float(x), b) for x, b in zip(a, graph.blocks))
    spec = ScenarioSpec(
        tuple(a), values, gaussian_log_prob(a, m, s), gaussian_entropy(s)
    )
    return PolicySample(spec, m, s, a, e)


def gaussian_log_prob(actions, mu, sigma) -> float:
    """Chain-rule joint log-density: sum of per-block Gaussian log-densities."""
    a, m, s = (np.asarray(x, dtype=float) for x in (actions, mu, sigma))
    if np.any(s <= 0):
        raise NumericError("sigma must be > 0")
    return float(np.sum(-_HALF_LOG_2PI - np.log(s) - (a - m) ** 2 / (2.0 * s * s)))


def gaussian_entropy(sigma) -> float:
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 0):
        raise NumericError("sigma must be > 0")
    return float(np.sum(0.5 * np.log(2.0 * math.pi * math.e * s * s)))


def log_prob(sample: PolicySample) -> float:
    return gaussian_log_prob(sample.actions, sample.mu, sample.sigma)


def entropy(sample: PolicySample) -> float:
    return gaussian_entropy(sample.sigma)


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in layer {name}")


def backprop(
    params: PolicyParams,
    states,
    graph: ScenarioGraph,
    actions,
    grad_mu: np.ndarray,
    grad_sigma: np.ndarray,
) -> np.ndarray:
    """Pull ``dL/dmu`` and ``dL/dsigma`` (each ``(B, K)``) back to the flat parameters.

    Raw actions enter the heads as constant inputs, so no gradient flows
    from a child head into its parents' sampled values.
    """
    params.check_graph(graph)
    s = _as_states(params, states)
    acts = np.atleast_2d(np.asarray(actions, dtype=float))
    grad_mu = np.atleast_2d(grad_mu)
    grad_sigma = np.atleast_2d(grad_sigma)
    h_s = params.hidden_state
    grad = np.zeros_like(params.vector)

    h = _encode(params, s)
    _finite("enc", h)
    grad_h = np.zeros_like(h)
    for k in range(len(graph)):
        name = f"head{k}"
        inp, z, mu, pre, sigma = _head(params, k, h, acts[:, graph.parent_indices(k)])
        _finite(name, np.concatenate((mu, sigma)))
        g_pre = grad_sigma[:, k] * _dsigma(params, pre)
        g_mu = grad_mu[:, k] * (MU_BOUND - mu * mu / MU_BOUND)
        grad[params.slice_of(f"{name}.mu_w")] = z.T @ g_mu
        grad[params.slice_of(f"{name}.mu_b")] = g_mu.sum()
        grad[params.slice_of(f"{name}.sigma_w")] = z.T @ g_pre
        grad[params.slice_of(f"{name}.sigma_b")] = g_pre.sum()
        g_z = np.outer(g_mu, params[f"{name}.mu_w"]) + np.outer(g_pre, params[f"{name}.sigma_w"])
        g_hidden = g_z * (1.0 - z * z)
        grad[params.slice_of(f"{name}.W")] = (g_hidden.T @ inp).ravel()
        grad[params.slice_of(f"{name}.b")] = g_hidden.sum(axis=0)
        grad_h += (g_hidden @ params[f"{name}.W"])[:, :h_s]
        _finite(name, grad[params.slice_of(f"{name}.W")])

    g_enc = grad_h * (1.0 - h * h)
    grad[params.slice_of("enc.W")] = (g_enc.T @ s).ravel()
    grad[params.slice_of("enc.b")] = g_enc.sum(axis=0)
    _finite("enc", grad[params.slice_of("enc.W")])
    return grad


def score_terms(actions, mu, sigma):
    """``(dlogp/dmu, dlogp/dsigma)`` of the Gaussian log-density."""
    diff = np.asarray(actions) - mu
    return diff / sigma**2, -1.0 / sigma + diff**2 / sigma**3


def grad_log_prob(params: PolicyParams, sample: PolicySample, state: EnvState, graph: ScenarioGraph) -> np.ndarray:
    a = sample.actions[None, :]
    mu, sigma = conditionals(params, state, graph, a)
    g_mu, g_sigma = score_terms(a, mu, sigma)
    return backprop(params, state, graph, a, g_mu, g_sigma)


def grad_entropy(params: PolicyParams, state: EnvState, graph: ScenarioGraph, sample: PolicySample) -> np.ndarray:
    a = sample.actions[None, :]
    _, sigma = conditionals(params, state, graph, a)
    return backprop(params, state, graph, a, np.zeros_like(sigma), 1.0 / sigma)


def save_params(params: PolicyParams, path: str | Path, graph: ScenarioGraph, extra: dict | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "state_dim": params.state_dim,
        "hidden_state": params.hidden_state,
        "hidden_action": params.hidden_action,
        "parent_counts": list(params.parent_counts),
        "seed": params.seed,
        "sigma_floor": params.sigma_floor,
        "sigma_cap": params.sigma_cap,
        "shapes": {k: list(v) for k, v in params.shapes.items()},
        "graph": graph.to_dict(),
        **(extra or {}),
    }
    with open(path, "wb") as fh:
        np.savez(fh, vector=params.vector, meta=np.array(json.dumps(meta)))


def load_params(path: str | Path, graph: ScenarioGraph | None = None) -> tuple[PolicyParams, dict]:
    """Read a checkpoint; validates its head layout against ``graph`` if given."""
    try:
        with np.load(path, allow_pickle=False) as data:
            vector = data["vector"].copy()
            meta = json.loads(str(data["meta"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    params = PolicyParams(
        vector, meta["state_dim"], meta["hidden_state"], meta["hidden_action"],
        tuple(meta["parent_counts"]), meta.get("seed"), meta.get("sigma_floor", SIGMA_FLOOR),
        meta.get("sigma_cap"),
    )
    if {k: list(v) for k, v in params.shapes.items()} != meta["shapes"]:
        raise ConfigError(f"{path}: layer shapes do not match the stored layout")
    if graph is not None:
        params.check_graph(graph)
    return params, meta


def init_from_config(graph: ScenarioGraph, config: PolicyConfig, seed: int | None = 0) -> PolicyParams:
    return init_params(
        graph, config.state_dim, config.hidden_state, config.hidden_action, seed,
        init_sigma=config.init_sigma, sigma_floor=config.sigma_floor, sigma_cap=config.sigma_cap,
    )
