"""``riskgen`` command line: train, eval, baseline, heatmap, replay, presets-list.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import click
import numpy as np

from riskgen import __version__, baselines, config as cfg, metrics, render
from riskgen.errors import ConfigError, RiskgenError
from riskgen.graph import ScenarioGraph, ScenarioSpec, build_preset, encode_state, preset_names, rescale
from riskgen.policy import load_params, sample_batch, save_params
from riskgen.results import ScoredSpec, collision_fraction, evaluate_specs, write_ranked
from riskgen.routes import heldout_routes, training_routes
from riskgen.sim import read_trace, simulate, write_trace
from riskgen.trainer import EpochRecord, StateSampler, fit, position_scale, simulator_evaluator

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
METRICS_HEADER = ("epoch", "mean_reward", "collision_rate", "entropy", "grad_norm")


def resolve_route(text: str) -> np.ndarray:
    """``heldout:<name>``, ``training:<index>`` or a CSV file of ``x,y`` rows."""
    kind, _, key = text.partition(":")
    if kind == "heldout" and key:
        routes = heldout_routes()
        if key not in routes:
            raise ConfigError(f"unknown held-out route {key!r}; choose from {', '.join(routes)}")
        return routes[key]
    if kind == "training" and key:
        routes = training_routes()
        try:
            return routes[int(key)]
        except (ValueError, IndexError):
            raise ConfigError(f"training route index must be 0..{len(routes) - 1}, got {key!r}") from None
    path = Path(text)
    if not path.is_file():
        raise ConfigError(f"route {text!r} is not heldout:<name>, training:<i> or an existing file")
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{path}: cannot parse waypoints ({exc})") from exc


def metrics_row(record: EpochRecord) -> list[str]:
    return [
        str(record.epoch), repr(record.mean_reward), repr(record.collision_rate),
        repr(record.mean_entropy), repr(record.grad_norm),
    ]


def new_run_dir(root: Path, stem: str) -> Path:
    """First unused ``<stem>-NNN`` under ``root``; earlier runs are never touched."""
    root.mkdir(parents=True, exist_ok=True)
    for i in range(1, 100_000):
        path = root / f"{stem}-{i:03d}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue
    raise RiskgenError(f"no free run directory under {root}")


def run_training(experiment: cfg.ExperimentConfig, out: Path, independent: bool = False) -> Path:
    graph = experiment.graph()
    if independent:
        graph = graph.independent()
    run = new_run_dir(out, graph.name)
    (run / "checkpoints").mkdir()
    (run / "config.yaml").write_text(experiment.dumps())
    manifest = {
        "version": f"riskgen {__version__}",
        "config_sha256": experiment.digest(),
        "seed": experiment.train.seed,
        "scenario": graph.name,
        "independent": independent,
    }
    (run / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    sampler = StateSampler(
        experiment.routes.build(), experiment.routes.speed_range,
        experiment.policy.n_waypoints, position_scale(graph),
    )
    evaluate = simulator_evaluator(graph, experiment.sim, experiment.reward)
    with open(run / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)

        def on_epoch(params, record):
            writer.writerow(metrics_row(record))
            fh.flush()
            save_params(
                params, run / "checkpoints" / f"epoch_{record.epoch:03d}.npz", graph,
                {"epoch": record.epoch, "config_sha256": manifest["config_sha256"]},
            )

        _, records = fit(graph, experiment.train, experiment.policy, sampler, evaluate, on_epoch)
    last = run / "checkpoints" / f"epoch_{records[-1].epoch:03d}.npz"
    shutil.copyfile(last, run / "policy.npz")
    window = min(10, len(records))
    summary = {
        "epochs": len(records),
        "final_collision_rate": metrics.collision_rate(records, window),
        "iterations_to_stability": metrics.iterations_to_stability(records),
    }
    (run / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return run


def _load_experiment(path: str | None, scenario: str | None = None) -> cfg.ExperimentConfig:
    if path is None:
        if scenario is None:
            raise ConfigError("scenario: give a config file or --scenario")
        experiment = cfg.from_dict({"scenario": scenario})
    else:
        experiment = cfg.load(path)
    return cfg.apply_env(experiment)


@click.group()
@click.version_option(__version__, prog_name="riskgen")
@click.option("-v", "--verbose", is_flag=True, help="Log every epoch.")
def cli(verbose: bool):
    """Generate risky driving scenarios with a learned autoregressive policy."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(message)s")


@cli.command("presets-list")
def presets_list():
    """List the built-in scenario graphs."""
    for name in preset_names():
        graph = build_preset(name)
        blocks = ", ".join(
            f"{b.name}[{b.low:g},{b.high:g}]" + (f"|{','.join(b.parents)}" if b.parents else "")
            for b in graph.blocks
        )
        click.echo(f"{name}\t{graph.actor}\t{graph.activation}\t{blocks}")


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--out", default="runs", show_default=True, type=click.Path(file_okay=False))
def train(config_path: str, out: str):
    """Train a policy; writes a new run directory under OUT."""
    experiment = _load_experiment(config_path)
    run = run_training(experiment, Path(out))
    summary = json.loads((run / "summary.json").read_text())
    click.echo(f"run directory: {run}")
    click.echo(f"final 10-epoch collision rate: {summary['final_collision_rate']:.3f}")


def _env_int(name: str, default: int) -> int:
    text = os.environ.get(name)
    if not text:
        return default
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {text!r}") from None


def _state_for(checkpoint_meta: dict, graph: ScenarioGraph, route: str, speed: float):
    n_waypoints = (checkpoint_meta["state_dim"] - 1) // 2
    return encode_state(resolve_route(route), speed, n_waypoints, position_scale(graph))


def _load_checkpoint(path: str):
    params, meta = load_params(path)
    return params, ScenarioGraph.from_dict(meta["graph"]), meta


@cli.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--route", required=True, help="heldout:<name>, training:<i> or a CSV of x,y rows.")
@click.option("--speed", required=True, type=float, help="Ego target speed, km/h.")
@click.option("--episodes", default=100, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Ranked spec CSV.")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="Trace of the top-ranked scenario.")
def eval_cmd(checkpoint, route, speed, episodes, seed, out_path, trace_path):
    """Sample scenarios from a checkpoint on one state and simulate them."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    seed, workers = _env_int(cfg.ENV_SEED, seed), _env_int(cfg.ENV_WORKERS, 1)
    params, graph, meta = _load_checkpoint(checkpoint)
    state = _state_for(meta, graph, route, speed)
    rng = np.random.default_rng(seed)
    actions, *_ = sample_batch(params, np.repeat(state.encoded[None], episodes, 0), graph, rng)
    specs = [
        ScenarioSpec(tuple(a), tuple(rescale(float(x), b) for x, b in zip(a, graph.blocks)))
        for a in actions
    ]
    results = evaluate_specs(specs, state, graph, workers=workers)
    _report(results)
    if out_path:
        write_ranked(out_path, graph, results)
    if trace_path:
        best = max(results, key=lambda r: r.reward)
        write_trace(simulate(best.spec, state, graph), trace_path, graph, state, best.spec)


def _report(results: list[ScoredSpec]) -> None:
    click.echo(f"episodes: {len(results)}")
    click.echo(f"collision rate: {collision_fraction(results):.4f}")
    click.echo(f"mean reward: {np.mean([r.reward for r in results]):.4f}")


@cli.command()
@click.argument("method", type=click.Choice(["grid", "random", "human", "independent"]))
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--scenario", help="Preset name when no config file is given.")
@click.option("--route", default="heldout:straight", show_default=True)
@click.option("--speed", default=30.0, show_default=True, type=float, help="km/h")
@click.option("--count", type=int, help="Random draws (default from config).")
@click.option("--out", "out_path", default="baseline.csv", show_default=True, type=click.Path())
def baseline(method, config_path, scenario, route, speed, count, out_path):
    """Run a comparison method; ranked specs go to OUT (a run directory for independent)."""
    experiment = _load_experiment(config_path, scenario)
    graph = experiment.graph()
    if method == "independent":
        run = run_training(experiment, Path(out_path), independent=True)
        click.echo(f"run directory: {run}")
        return
    state = encode_state(resolve_route(route), speed, experiment.policy.n_waypoints, position_scale(graph))
    common = dict(sim_config=experiment.sim, reward_config=experiment.reward)
    if method == "grid":
        results = baselines.grid_search(
            graph, state, experiment.baseline.grid_steps, experiment.baseline.grid_cap,
            workers=experiment.workers, **common,
        )
    elif method == "random":
        n = experiment.baseline.random_count if count is None else count
        rng = np.random.default_rng(experiment.train.seed)
        results = baselines.random_sampling(graph, state, n, rng, workers=experiment.workers, **common)
    else:
        spec = baselines.human_design(graph)
        results = evaluate_specs([spec], state, graph, **common)
    write_ranked(out_path, graph, results)
    _report(results)


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--route", required=True)
@click.option("--speed", required=True, type=float, help="km/h")
@click.option("--block", help="Block for a 1D field.")
@click.option("--joint", help="Two comma-separated blocks for a 2D field, e.g. X,Y.")
@click.option("--given", multiple=True, help="Condition a parent, NAME=VALUE in physical units.")
@click.option("--resolution", type=int, help="Cells per axis (256 for 1D, 64 for 2D).")
@click.option("--out", "prefix", default="heatmap", show_default=True, help="Writes PREFIX.svg and PREFIX.csv.")
def heatmap(checkpoint, route, speed, block, joint, given, resolution, prefix):
    """Policy density over a block's physical range."""
    params, graph, meta = _load_checkpoint(checkpoint)
    state = _state_for(meta, graph, route, speed)
    if (block is None) == (joint is None):
        raise ConfigError("give exactly one of --block or --joint")
    if joint:
        names = tuple(s.strip() for s in joint.split(","))
        if len(names) != 2:
            raise ConfigError("--joint needs two block names")
        field = metrics.joint_heatmap(params, state, graph, names, resolution or metrics.HEATMAP_BINS_2D)
    else:
        condition = {}
        for item in given:
            name, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--given expects NAME=VALUE, got {item!r}")
            try:
                condition[name.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"--given {name}: {value!r} is not a number") from None
        field = metrics.policy_heatmap(
            params, state, graph, block, resolution or metrics.HEATMAP_BINS_1D, condition
        )
    title = f"{graph.name}: P({','.join(field.blocks)} | S) at {speed:g} km/h"
    render.write_heatmap(field, f"{prefix}.svg", f"{prefix}.csv", title)
    click.echo(f"wrote {prefix}.svg and {prefix}.csv; argmax at {field.argmax()}")


@cli.command()
@click.argument("trace_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", default="replay.svg", show_default=True, type=click.Path(dir_okay=False))
@click.option("--every", default=10, show_default=True, type=int, help="Footprint spacing in steps.")
def replay(trace_path, out_path, every):
    """Render a recorded trace without re-simulating."""
    if not Path(trace_path).is_file():
        raise ConfigError(f"trace {trace_path!r} does not exist")
    header, trace = read_trace(trace_path)
    Path(out_path).write_text(render.trace_svg(header, trace, every))
    click.echo(f"wrote {out_path} ({len(trace)} steps)")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="riskgen", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return EXIT_CONFIG
    except (RiskgenError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    return 0


def entry() -> None:
    sys.exit(main())

