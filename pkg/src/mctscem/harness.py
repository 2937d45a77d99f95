"""Episode loop, multi-trial experiment runner and result files.

Every planner runs through the same loop: reset, plan/act/record until the
episode ends, then retrain the ensemble on the whole buffer. Only the
``plan`` call differs between planners.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .cem import CEMPlanner
from .core import (STREAM_INIT, STREAM_PLAN, STREAM_RESET, STREAM_TRAIN, STREAM_WARMUP, PlannerConfig, rng_stream,
                   uniform_actions)
from .envs import ENVIRONMENTS, make_env
from .mcts import MCTSPlanner, dump_tree
from .model import EnsembleModel, ReplayBuffer, make_reward_fn

logger = logging.getLogger(__name__)

PLANNERS = ("cem", "mcts-random", "mcts-cem", "random")
# Episode index used for the seeding episode of uniform-random actions.
WARMUP_EPISODE = 10_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "pendulum"
    planner: str = "mcts-cem"
    episodes: int = 10
    trials: int = 5
    seed: int = 0
    out: str = "runs/default"
    planner_cfg: PlannerConfig = field(default_factory=PlannerConfig)
    train_epochs: int = 50
    hidden: int = 64
    lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 100_000
    warmup_episodes: int = 1
    max_episode_steps: int = 0
    step_penalty: float = -0.01
    tree_dump_every: int = 0
    # Floor on the ensemble's predicted next-state variances, in state units.
    # Kept apart from the action distribution's floor because state scales
    # differ by orders of magnitude between environments.
    model_var_floor: float = 1e-4

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown env {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        if self.planner not in PLANNERS:
            raise ConfigError(f"unknown planner {self.planner!r}; choose from {list(PLANNERS)}")
        if self.episodes < 1 or self.trials < 1:
            raise ConfigError("episodes and trials must be >= 1")
        if not self.model_var_floor > 0:
            raise ConfigError("model_var_floor must be positive")
        if self.train_epochs < 0 or self.warmup_episodes < 0 or self.tree_dump_every < 0:
            raise ConfigError("train_epochs, warmup_episodes and tree_dump_every must be >= 0")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.update(d.pop("planner_cfg"))
        return d


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def build_config(values: dict) -> ExperimentConfig:
    """Build a config from a flat mapping of field name to string/value."""
    exp_defaults = {f.name: f.default for f in dataclasses.fields(ExperimentConfig) if f.name != "planner_cfg"}
    plan_defaults = {f.name: f.default for f in dataclasses.fields(PlannerConfig)}
    exp_kwargs, plan_kwargs = {}, {}
    for key, raw in values.items():
        key = key.replace("-", "_")
        try:
            if key in exp_defaults:
                exp_kwargs[key] = _coerce(raw, exp_defaults[key]) if isinstance(raw, str) else raw
            elif key in plan_defaults:
                plan_kwargs[key] = _coerce(raw, plan_defaults[key]) if isinstance(raw, str) else raw
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    try:
        planner_cfg = PlannerConfig(**plan_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(planner_cfg=planner_cfg, **exp_kwargs)


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text())
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def format_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())


@dataclass
class EpisodeLog:
    trial: int
    episode: int
    rewards: list[float]
    model_loss: float
    duration: float = math.nan

    @property
    def cumulative(self) -> float:
        return float(sum(self.rewards))


@dataclass(frozen=True)
class EpisodeAggregate:
    episode: int
    mean: float
    std: float


class RandomPlanner:
    """Uniform-random actions; the bookkeeping baseline."""

    name = "random"

    def __init__(self, bounds):
        self.bounds = bounds

    def reset(self):
        pass

    def plan(self, state, rng):
        return uniform_actions(rng, self.bounds)


def make_planner(name: str, model, reward_fn, cfg: PlannerConfig, bounds):
    if name == "cem":
        return CEMPlanner(model, reward_fn, cfg, bounds)
    if name == "mcts-cem":
        return MCTSPlanner(model, reward_fn, cfg, bounds, "cem")
    if name == "mcts-random":
        return MCTSPlanner(model, reward_fn, cfg, bounds, "random")
    if name == "random":
        return RandomPlanner(bounds)
    raise ConfigError(f"unknown planner {name!r}")


PlannerFactory = Callable[[str, object, Callable, PlannerConfig, object], object]


def run_episode(env, planner, buffer: ReplayBuffer, rng_for_step: Callable[[int], np.random.Generator],
                reset_rng: np.random.Generator, on_plan: Callable[[int, object], None] | None = None) -> list[float]:
    """Plan, act and record until the episode ends; transitions go to ``buffer``.

    ``on_plan(step, planner)`` is called after every planning call.
    """
    state = env.reset(reset_rng)
    planner.reset()
    rewards = []
    step = 0
    while True:
        action = planner.plan(state, rng_for_step(step))
        if on_plan is not None:
            on_plan(step, planner)
        res = env.step(action)
        buffer.add(state, action, res.next_state, res.reward, res.done)
        rewards.append(float(res.reward))
        state = res.next_state
        step += 1
        if res.done:
            return rewards


def run_trial(cfg: ExperimentConfig, trial: int, planner_factory: PlannerFactory = make_planner) -> list[EpisodeLog]:
    seed = cfg.seed + trial
    env = make_env(cfg.env, cfg.max_episode_steps or None, cfg.step_penalty)
    pc = cfg.planner_cfg
    init_seed = int(rng_stream(seed, trial, 0, 0, STREAM_INIT).integers(0, 2 ** 31))
    model = EnsembleModel(env.spec.state_dim, env.spec.action_dim, pc.ensemble_m, cfg.hidden,
                          learn_reward=pc.reward_mode == "learned", var_floor=cfg.model_var_floor, seed=init_seed,
                          lr=cfg.lr, batch_size=cfg.batch_size)
    reward_fn = make_reward_fn(pc.reward_mode, env.reward, model)
    buffer = ReplayBuffer(cfg.buffer_capacity)

    warm = RandomPlanner(env.spec.action_bounds)
    for w in range(cfg.warmup_episodes):
        ep = WARMUP_EPISODE + w
        run_episode(env, warm, buffer, lambda t, ep=ep: rng_stream(seed, trial, ep, t, STREAM_WARMUP),
                    rng_stream(seed, trial, ep, 0, STREAM_RESET))
    if cfg.warmup_episodes:
        model.train(buffer, cfg.train_epochs, rng_stream(seed, trial, WARMUP_EPISODE, 0, STREAM_TRAIN))

    planner = planner_factory(cfg.planner, model, reward_fn, pc, env.spec.action_bounds)
    logs = []
    for episode in range(cfg.episodes):
        t0 = time.perf_counter()
        rewards = run_episode(env, planner, buffer,
                              lambda t, ep=episode: rng_stream(seed, trial, ep, t, STREAM_PLAN),
                              rng_stream(seed, trial, episode, 0, STREAM_RESET),
                              _tree_dumper(cfg, trial, episode))
        trace = model.train(buffer, cfg.train_epochs, rng_stream(seed, trial, episode, 0, STREAM_TRAIN))
        loss = float(trace[-1].mean()) if len(trace) else math.nan
        log = EpisodeLog(trial, episode, rewards, loss, time.perf_counter() - t0)
        logger.info("%s %s trial %d episode %d: return %.3f (%d steps, %.1fs)", cfg.env, cfg.planner,
                    trial, episode, log.cumulative, len(rewards), log.duration)
        logs.append(log)
    return logs


def _tree_dumper(cfg: ExperimentConfig, trial: int, episode: int):
    """Hook writing every ``tree_dump_every``-th search tree to ``<out>/trees/``."""
    if not cfg.tree_dump_every:
        return None
    directory = Path(cfg.out) / "trees"

    def hook(step, planner):
        tree = getattr(planner, "last_tree", None)
        if tree is not None and step % cfg.tree_dump_every == 0:
            _write(directory / f"trial_{trial:03d}_ep_{episode:03d}_step_{step:04d}.tsv", dump_tree(tree))

    return hook


def run_experiment(cfg: ExperimentConfig, planner_factory: PlannerFactory = make_planner,
                   write_partial: bool = True) -> list[EpisodeLog]:
    """Run ``cfg.trials`` independent trials (seed ``cfg.seed + trial``).

    Each completed trial is written to ``<out>/trials/`` straight away so a
    killed run keeps every finished trial.
    """
    out = Path(cfg.out)
    logs: list[EpisodeLog] = []
    for trial in range(cfg.trials):
        trial_logs = run_trial(cfg, trial, planner_factory)
        if write_partial:
            write_trial(trial_logs, out / "trials", trial)
        logs.extend(trial_logs)
    return logs


# -- results ------------------------------------------------------------------


def aggregate(logs: Sequence[EpisodeLog]) -> list[EpisodeAggregate]:
    """Mean and population std of cumulative reward per episode index."""
    if not logs:
        raise ValueError("no logs to aggregate")
    grid = {(log.trial, log.episode): log.cumulative for log in logs}
    if len(grid) != len(logs):
        raise ValueError("duplicate (trial, episode) entries")
    trials = sorted({t for t, _ in grid})
    episodes = sorted({e for _, e in grid})
    if len(grid) != len(trials) * len(episodes):
        raise ValueError("logs do not cover a full trials x episodes grid")
    out = []
    for e in episodes:
        vals = np.array([grid[(t, e)] for t in trials])
        out.append(EpisodeAggregate(e, float(vals.mean()), float(vals.std())))
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def steps_csv(logs: Iterable[EpisodeLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "episode", "step", "reward", "cumulative"])
    for log in sorted(logs, key=lambda l: (l.trial, l.episode)):
        total = 0.0
        for step, r in enumerate(log.rewards):
            total += r
            w.writerow([log.trial, log.episode, step, _fmt(r), _fmt(total)])
    return buf.getvalue()


def aggregate_csv(aggs: Iterable[EpisodeAggregate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "mean", "std"])
    for a in aggs:
        w.writerow([a.episode, _fmt(a.mean), _fmt(a.std)])
    return buf.getvalue()


def read_steps_csv(path) -> list[EpisodeLog]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    episodes: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (int(row["trial"]), int(row["episode"]))
        episodes.setdefault(key, []).append((int(row["step"]), float(row["reward"])))
    return [EpisodeLog(t, e, [r for _, r in sorted(rows)], math.nan) for (t, e), rows in sorted(episodes.items())]


def write_trial(logs: Sequence[EpisodeLog], directory: Path, trial: int) -> None:
    directory = Path(directory)
    _write(directory / f"trial_{trial:03d}.csv", steps_csv(logs))
    meta = [{"trial": l.trial, "episode": l.episode, "cumulative": l.cumulative, "model_loss": l.model_loss}
            for l in logs]
    _write(directory / f"trial_{trial:03d}.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_partial(out_dir) -> list[EpisodeLog]:
    """Recover the episode logs of every completed trial under ``out_dir``."""
    logs = []
    for path in sorted((Path(out_dir) / "trials").glob("trial_*.csv")):
        logs.extend(read_steps_csv(path))
    return logs


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def summary_dict(cfg: ExperimentConfig, logs: Sequence[EpisodeLog], aggs: Sequence[EpisodeAggregate]) -> dict:
    return {
        "library": "mctscem",
        "version": __version__,
        # the output path is left out so identical runs written to different
        # directories stay byte-identical
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
        "episodes": [dataclasses.asdict(a) for a in aggs],
        "final_episode_mean": aggs[-1].mean,
        "model_loss": [[l.trial, l.episode, l.model_loss] for l in sorted(logs, key=lambda l: (l.trial, l.episode))],
    }


def emit_results(logs: Sequence[EpisodeLog], aggs: Sequence[EpisodeAggregate], out_dir,
                 cfg: ExperimentConfig | None = None, figure: bool = True) -> dict[str, Path]:
    """Write ``steps.csv``, ``aggregate.csv``, ``summary.json`` and a learning-curve figure.

    CSV and JSON bytes depend only on the logs and config. Wall-clock times
    go to ``timing.txt`` and never into the CSV/JSON files.
    """
    out = Path(out_dir)
    paths = {"steps": out / "steps.csv", "aggregate": out / "aggregate.csv"}
    _write(paths["steps"], steps_csv(logs))
    _write(paths["aggregate"], aggregate_csv(aggs))
    if cfg is not None:
        paths["summary"] = out / "summary.json"
        _write(paths["summary"], json.dumps(summary_dict(cfg, logs, aggs), indent=2, sort_keys=True) + "\n")
    durations = [l for l in logs if not math.isnan(l.duration)]
    if durations:
        paths["timing"] = out / "timing.txt"
        _write(paths["timing"], "".join(f"trial {l.trial} episode {l.episode}: {l.duration:.2f}s\n" for l in durations))
    if figure:
        from .plotting import plot_learning_curves
        label = cfg.planner if cfg is not None else "run"
        title = cfg.env if cfg is not None else None
        paths["figure"] = plot_learning_curves({label: aggs}, out / "learning_curve.png", title=title)
    return paths


def run_and_emit(cfg: ExperimentConfig, figure: bool = True) -> tuple[list[EpisodeLog], list[EpisodeAggregate]]:
    logs = run_experiment(cfg)
    aggs = aggregate(logs)
    emit_results(logs, aggs, cfg.out, cfg, figure=figure)
    return logs, aggs


def comparison_csv(results: dict[str, Sequence[EpisodeAggregate]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["planner", "episode", "mean", "std"])
    for name, aggs in results.items():
        for a in aggs:
            w.writerow([name, a.episode, _fmt(a.mean), _fmt(a.std)])
    return buf.getvalue()


def run_comparison(cfg: ExperimentConfig, planners: Sequence[str], figure: bool = True
                   ) -> dict[str, tuple[list[EpisodeLog], list[EpisodeAggregate]]]:
    """Run several planners with otherwise identical settings, one sub-directory each."""
    out = Path(cfg.out)
    results = {}
    for name in planners:
        results[name] = run_and_emit(cfg.replace(planner=name, out=str(out / name)), figure=figure)
    curves = {name: aggs for name, (_, aggs) in results.items()}
    _write(out / "comparison.csv", comparison_csv(curves))
    if figure:
        from .plotting import plot_learning_curves
        plot_learning_curves(curves, out / "comparison.png", title=cfg.env)
    return results
