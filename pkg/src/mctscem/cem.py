"""Cross-Entropy Method over H-step action sequences.

Used twice: as the stand-alone receding-horizon CEM planner, and to fit the
root action distribution that MCTS-CEM then reuses inside its tree.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import (Bounds, GaussianActionDistribution, PlannerConfig, clip_action, refit,
                   sample_sequences)
from .freenergy import (CandidateEvaluation, epistemic_value_from_gaussians, free_energy,
                        rank_candidates)

Objective = Callable[[np.ndarray], np.ndarray]


def rollout_scores(s0: np.ndarray, candidates: np.ndarray, model, reward_fn, cfg: PlannerConfig,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll every candidate through the model from ``s0``.

    Returns per-candidate ``(reward_sum, ev_sum, score)`` arrays. Epistemic
    value is only estimated when ``cfg.lam > 0``; otherwise ``ev_sum`` is 0.
    The sampling noise behind the mixture-entropy estimate is drawn once per
    time step and shared by all candidates, so candidates are compared under
    common random numbers.
    """
    candidates = np.asarray(candidates, dtype=float)
    n, horizon, _ = candidates.shape
    states = np.tile(np.asarray(s0, dtype=float), (n, 1))
    reward_sum = np.zeros(n)
    ev_sum = np.zeros(n)
    want_ev = cfg.lam > 0
    scale = getattr(model, "output_scale", None)
    for t in range(horizon):
        actions = candidates[:, t]
        reward_sum += reward_fn(states, actions)
        means, variances = model.member_gaussians(states, actions)
        if want_ev:
            noise = rng.standard_normal((means.shape[0], cfg.ev_samples, means.shape[2]))
            ev = epistemic_value_from_gaussians(means, variances, noise, cfg.knn_k, scale)
            ev_sum += np.maximum(ev, 0.0) if cfg.clamp_ev else ev
        if cfg.propagation == "mean":
            states = means.mean(axis=0)
        else:
            member = rng.integers(0, means.shape[0], size=n)
            cols = np.arange(n)
            states = means[member, cols] + np.sqrt(variances[member, cols]) * rng.standard_normal(means.shape[1:])
    return reward_sum, ev_sum, free_energy(reward_sum, ev_sum, cfg.lam)


def evaluate_candidates(s0: np.ndarray, candidates: np.ndarray, model, reward_fn, cfg: PlannerConfig,
                        rng: np.random.Generator) -> list[CandidateEvaluation]:
    reward_sum, ev_sum, score = rollout_scores(s0, candidates, model, reward_fn, cfg, rng)
    return [CandidateEvaluation(float(r), float(e), float(g)) for r, e, g in zip(reward_sum, ev_sum, score)]


def fit_root_distribution(s0: np.ndarray, model, reward_fn, cfg: PlannerConfig, bounds: Bounds,
                          rng: np.random.Generator, objective: Objective | None = None,
                          init: GaussianActionDistribution | None = None,
                          trace: list | None = None, iters: int | None = None) -> GaussianActionDistribution:
    """Run ``cfg.cem_iters`` (or ``iters``) rounds of sample, score, select and refit.

    ``objective`` maps an ``(n, H, d_a)`` candidate array to scores (lower is
    better) and replaces model rollouts when given. If ``trace`` is a list,
    the best elite score of each round is appended to it.
    """
    dist = init if init is not None else GaussianActionDistribution.standard(cfg.horizon, bounds.dim, cfg.var_floor)
    for _ in range(cfg.cem_iters if iters is None else iters):
        cands = sample_sequences(dist, rng, bounds, cfg.n_candidates)
        if objective is None:
            scores = rollout_scores(s0, cands, model, reward_fn, cfg, rng)[2]
        else:
            scores = np.asarray(objective(cands), dtype=float)
        elite = rank_candidates(scores)[: cfg.k_elite]
        if trace is not None:
            trace.append(float(scores[elite[0]]))
        dist = refit(cands, elite, cfg.var_floor)
    return dist


def cem_plan(s0: np.ndarray, model, reward_fn, cfg: PlannerConfig, bounds: Bounds,
             rng: np.random.Generator, objective: Objective | None = None,
             init: GaussianActionDistribution | None = None) -> np.ndarray:
    """First step of the fitted mean, clipped to the action bounds."""
    dist = fit_root_distribution(s0, model, reward_fn, cfg, bounds, rng, objective, init)
    return clip_action(dist.mean[0], bounds)


class CEMPlanner:
    """Receding-horizon CEM: refit from N(0, I) (or a warm start) every step."""

    name = "cem"

    def __init__(self, model, reward_fn, cfg: PlannerConfig, bounds: Bounds):
        self.model = model
        self.reward_fn = reward_fn
        self.cfg = cfg
        self.bounds = bounds
        self.last_dist: GaussianActionDistribution | None = None

    def reset(self) -> None:
        self.last_dist = None

    def plan(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        init = self.last_dist.shifted() if (self.cfg.warm_start and self.last_dist is not None) else None
        dist = fit_root_distribution(state, self.model, self.reward_fn, self.cfg, self.bounds, rng, init=init)
        self.last_dist = dist
        return clip_action(dist.mean[0], self.bounds)
