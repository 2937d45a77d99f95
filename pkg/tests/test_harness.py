import json

import numpy as np
import pytest

from mctscem.harness import (ConfigError, EpisodeLog, ExperimentConfig, aggregate, build_config, emit_results,
                             format_config, load_config, load_partial, make_planner, parse_config_text,
                             read_steps_csv, run_and_emit, run_comparison, run_experiment, steps_csv)
from mctscem.mcts import parse_tree_dump

TINY = dict(max_episode_steps=5, train_epochs=1, horizon=3, rollout_horizon=2, n_candidates=8, k_elite=2,
            cem_iters=1, n_sim=4, n_children=2, max_depth=2, ev_samples=4, ensemble_m=2, hidden=8)


def tiny(tmp_path, **kw):
    values = dict(TINY, out=str(tmp_path / "run"))
    values.update(kw)
    return build_config(values)


class CountingPlanner:
    calls: list = []

    def __init__(self, name):
        self.name = name

    def reset(self):
        pass

    def plan(self, state, rng):
        CountingPlanner.calls.append(self.name)
        return np.zeros(1)


def counting_factory(name, model, reward_fn, cfg, bounds):
    return CountingPlanner(name)


def test_random_planner_single_episode(tmp_path):
    cfg = tiny(tmp_path, planner="random", trials=1, episodes=1)
    logs = run_experiment(cfg)
    assert len(logs) == 1 and len(logs[0].rewards) == 5
    assert logs[0].cumulative == sum(logs[0].rewards)


def test_same_config_bit_identical_logs(tmp_path):
    cfg = tiny(tmp_path, planner="mcts-cem", trials=1, episodes=2)
    a = run_experiment(cfg, write_partial=False)
    b = run_experiment(cfg, write_partial=False)
    assert [l.rewards for l in a] == [l.rewards for l in b]
    assert [l.model_loss for l in a] == [l.model_loss for l in b]


def test_different_seeds_differ(tmp_path):
    a = run_experiment(tiny(tmp_path, planner="random", trials=1, episodes=1, seed=0), write_partial=False)
    b = run_experiment(tiny(tmp_path, planner="random", trials=1, episodes=1, seed=1), write_partial=False)
    assert a[0].rewards != b[0].rewards


def test_planner_agnostic_loop(tmp_path):
    # Every planner name goes through the same loop: identical number of plan calls.
    counts = {}
    for name in ("cem", "mcts-cem", "mcts-random"):
        CountingPlanner.calls = []
        logs = run_experiment(tiny(tmp_path, planner=name, trials=2, episodes=2), counting_factory,
                              write_partial=False)
        counts[name] = len(CountingPlanner.calls)
        assert set(CountingPlanner.calls) == {name}
        assert [len(l.rewards) for l in logs] == [5] * 4
    assert len(set(counts.values())) == 1 and counts["cem"] == 2 * 2 * 5


def test_counting_planners_see_identical_environments(tmp_path):
    # Same seed and same actions: rewards are identical whatever the planner name.
    rewards = []
    for name in ("cem", "mcts-random"):
        logs = run_experiment(tiny(tmp_path, planner=name, trials=1, episodes=2), counting_factory,
                              write_partial=False)
        rewards.append([l.rewards for l in logs])
    assert rewards[0] == rewards[1]


def test_incremental_trial_files(tmp_path):
    cfg = tiny(tmp_path, planner="random", trials=3, episodes=1)
    state = {"n": 0}

    def failing_factory(name, *args):
        state["n"] += 1
        if state["n"] == 3:
            raise KeyboardInterrupt
        return make_planner(name, *args)

    with pytest.raises(KeyboardInterrupt):
        run_experiment(cfg, failing_factory)
    recovered = load_partial(cfg.out)
    assert sorted({l.trial for l in recovered}) == [0, 1]
    assert (tmp_path / "run" / "trials" / "trial_001.json").exists()


def test_aggregate_examples():
    logs = [EpisodeLog(0, 0, [1.0], 0.0), EpisodeLog(1, 0, [3.0], 0.0)]
    (agg,) = aggregate(logs)
    assert agg.mean == 2.0 and agg.std == 1.0
    same = aggregate([EpisodeLog(t, 0, [2.0, 1.0], 0.0) for t in range(3)])
    assert same[0].std == 0.0 and same[0].mean == 3.0
    single = aggregate([EpisodeLog(0, e, [float(e)], 0.0) for e in range(3)])
    assert [a.mean for a in single] == [0.0, 1.0, 2.0]


def test_aggregate_rejects_ragged_and_empty():
    with pytest.raises(ValueError):
        aggregate([EpisodeLog(0, 0, [1.0], 0.0), EpisodeLog(0, 1, [1.0], 0.0), EpisodeLog(1, 0, [1.0], 0.0)])
    with pytest.raises(ValueError):
        aggregate([])


def test_emit_results_files(tmp_path):
    cfg = tiny(tmp_path, planner="random")
    logs = [EpisodeLog(0, 0, [0.5, -1.0, 0.25], 0.1, 1.0)]
    paths = emit_results(logs, aggregate(logs), tmp_path / "out", cfg, figure=True)
    rows = paths["steps"].read_text().splitlines()
    assert rows[0] == "trial,episode,step,reward,cumulative" and len(rows) == 4
    assert paths["aggregate"].read_text().splitlines()[0] == "episode,mean,std"
    assert paths["figure"].stat().st_size > 0
    summary = paths["summary"].read_text()
    data = json.loads(summary)
    assert json.dumps(data, indent=2, sort_keys=True) + "\n" == summary
    assert data["config"]["planner"] == "random" and "version" in data
    before = {k: p.read_bytes() for k, p in paths.items() if k in ("steps", "aggregate", "summary")}
    emit_results(logs, aggregate(logs), tmp_path / "out", cfg, figure=False)
    assert before == {k: paths[k].read_bytes() for k in before}


def test_emit_results_io_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_results([EpisodeLog(0, 0, [1.0], 0.0)], aggregate([EpisodeLog(0, 0, [1.0], 0.0)]), blocker / "sub",
                     figure=False)


def test_steps_csv_round_trip(tmp_path):
    logs = [EpisodeLog(0, 0, [0.1, 0.2], 0.0), EpisodeLog(1, 0, [1 / 3, -2.5], 0.0)]
    path = tmp_path / "s.csv"
    path.write_text(steps_csv(logs))
    assert [l.rewards for l in read_steps_csv(path)] == [l.rewards for l in logs]


def test_full_run_outputs_are_deterministic(tmp_path):
    outs = []
    for sub in ("a", "b"):
        cfg = tiny(tmp_path, planner="mcts-cem", trials=2, episodes=2, out=str(tmp_path / sub))
        run_and_emit(cfg, figure=False)
        outs.append({name: (tmp_path / sub / name).read_bytes() for name in ("steps.csv", "aggregate.csv",
                                                                            "summary.json")})
    assert outs[0] == outs[1]


def test_comparison_writes_per_planner_dirs(tmp_path):
    cfg = tiny(tmp_path, trials=1, episodes=1)
    results = run_comparison(cfg, ["random", "cem"], figure=True)
    assert set(results) == {"random", "cem"}
    text = (tmp_path / "run" / "comparison.csv").read_text().splitlines()
    assert text[0] == "planner,episode,mean,std" and len(text) == 3
    assert (tmp_path / "run" / "cem" / "steps.csv").exists()
    assert (tmp_path / "run" / "comparison.png").exists()


def test_tree_dumps_written(tmp_path):
    cfg = tiny(tmp_path, planner="mcts-random", trials=1, episodes=1, tree_dump_every=2)
    run_experiment(cfg)
    dumps = sorted((tmp_path / "run" / "trees").glob("*.tsv"))
    assert [p.name[-13:] for p in dumps] == ["step_0000.tsv", "step_0002.tsv", "step_0004.tsv"]
    assert parse_tree_dump(dumps[0].read_text())[0].visits == 4


def test_config_errors_before_work(tmp_path):
    with pytest.raises(ConfigError):
        tiny(tmp_path, env="cartpole")
    with pytest.raises(ConfigError):
        tiny(tmp_path, planner="greedy")
    with pytest.raises(ConfigError):
        build_config({"episodes": "0"})
    with pytest.raises(ConfigError):
        build_config({"unknown_key": "1"})
    with pytest.raises(ConfigError):
        build_config({"lam": "abc"})
    with pytest.raises(ConfigError):
        build_config({"warm_start": "maybe"})
    with pytest.raises(ConfigError):
        build_config({"k_elite": "1000"})


def test_config_text_round_trip(tmp_path):
    text = "# comment\nenv = sparse-mountain-car\nplanner = cem  # trailing\n\nlam = 0.5\nwarm_start = yes\n"
    values = parse_config_text(text)
    assert values == {"env": "sparse-mountain-car", "planner": "cem", "lam": "0.5", "warm_start": "yes"}
    path = tmp_path / "c.cfg"
    path.write_text(text)
    cfg = load_config(path, {"episodes": 3, "seed": None})
    assert cfg.env == "sparse-mountain-car" and cfg.planner_cfg.lam == 0.5 and cfg.planner_cfg.warm_start
    assert cfg.episodes == 3 and cfg.seed == 0
    path.write_text(format_config(cfg))
    assert load_config(path) == cfg
    with pytest.raises(ConfigError):
        parse_config_text("novalue\n")


def test_experiment_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.episodes == 10 and cfg.trials == 5
    assert "lam" in cfg.to_dict() and "planner_cfg" not in cfg.to_dict()
