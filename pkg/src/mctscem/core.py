"""Shared value types, seeded random streams and the Gaussian action-sequence
distribution used by every planner.

States and actions are plain 1-D ``numpy`` arrays; an action sequence is an
``(H, d_a)`` array. Bounds are a pair of ``(d_a,)`` arrays ``(low, high)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_VAR_FLOOR = 1e-4

# Stream tags so that independent consumers under one (trial, episode, step)
# never share a generator.
STREAM_PLAN = 0
STREAM_RESET = 1
STREAM_TRAIN = 2
STREAM_WARMUP = 3
STREAM_INIT = 4


class Bounds(NamedTuple):
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def box(cls, low: float | Sequence[float], high: float | Sequence[float], dim: int | None = None) -> "Bounds":
        lo = np.atleast_1d(np.asarray(low, dtype=float))
        hi = np.atleast_1d(np.asarray(high, dtype=float))
        if dim is not None:
            lo = np.broadcast_to(lo, (dim,)).copy()
            hi = np.broadcast_to(hi, (dim,)).copy()
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError(f"invalid bounds low={lo} high={hi}")
        return cls(lo, hi)

    @property
    def dim(self) -> int:
        return int(self.low.shape[0])


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    done: bool

    def __post_init__(self):
        for name in ("state", "action", "next_state"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite {name} in transition")
        if not np.isfinite(self.reward):
            raise ValueError("non-finite reward in transition")


@dataclass(frozen=True)
class GaussianActionDistribution:
    """Diagonal Gaussian over an ``(H, d_a)`` action sequence."""

    mean: np.ndarray
    var: np.ndarray
    var_floor: float = DEFAULT_VAR_FLOOR

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.ndim != 2 or mean.shape != var.shape:
            raise ValueError(f"mean/var shapes must match (H, d_a): {mean.shape} vs {var.shape}")
        if self.var_floor <= 0:
            raise ValueError("var_floor must be positive")
        var = np.maximum(var, self.var_floor)
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @classmethod
    def standard(cls, horizon: int, action_dim: int, var_floor: float = DEFAULT_VAR_FLOOR) -> "GaussianActionDistribution":
        """N(0, I) initial distribution."""
        return cls(np.zeros((horizon, action_dim)), np.ones((horizon, action_dim)), var_floor)

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @property
    def action_dim(self) -> int:
        return self.mean.shape[1]

    def step_marginal(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of step ``t``; steps past the horizon reuse the last one."""
        t = min(max(t, 0), self.horizon - 1)
        return self.mean[t], self.var[t]

    def shifted(self) -> "GaussianActionDistribution":
        """Warm start for the next control step: drop step 0, repeat the last step."""
        mean = np.concatenate([self.mean[1:], self.mean[-1:]], axis=0)
        var = np.concatenate([self.var[1:], self.var[-1:]], axis=0)
        return GaussianActionDistribution(mean, var, self.var_floor)


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 12
    n_candidates: int = 500
    k_elite: int = 50
    cem_iters: int = 5
    lam: float = 0.1
    gamma: float = 1.0
    n_sim: int = 50
    n_children: int = 8
    c_ucb: float = 1.0
    rollout_horizon: int = 10
    max_depth: int = 5
    knn_k: int = 3
    ensemble_m: int = 5
    ev_samples: int = 20
    var_floor: float = DEFAULT_VAR_FLOOR
    reward_mode: str = "oracle"
    propagation: str = "mean"
    clamp_ev: bool = False
    warm_start: bool = False
    intrinsic_rollout: bool = False

    def __post_init__(self):
        positive = ("horizon", "n_candidates", "k_elite", "cem_iters", "n_sim", "n_children",
                    "rollout_horizon", "max_depth", "knn_k", "ensemble_m", "ev_samples")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.k_elite > self.n_candidates:
            raise ValueError("k_elite must not exceed n_candidates")
        if self.knn_k >= self.ev_samples * self.ensemble_m:
            raise ValueError("knn_k must be smaller than ev_samples * ensemble_m")
        if self.rollout_horizon > self.horizon:
            raise ValueError("rollout_horizon must not exceed horizon")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.c_ucb < 0:
            raise ValueError("c_ucb must be nonnegative")
        if self.var_floor <= 0:
            raise ValueError("var_floor must be positive")
        if self.reward_mode not in ("oracle", "learned"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")
        if self.propagation not in ("mean", "sample"):
            raise ValueError(f"unknown propagation {self.propagation!r}")

    def replace(self, **changes) -> "PlannerConfig":
        return dataclasses.replace(self, **changes)


def rng_stream(base_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one ``(trial, episode, step, worker)``-style key.

    Streams for distinct keys are independent, so the order in which workers
    draw cannot change any result.
    """
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def clip_action(action: np.ndarray, bounds: Bounds) -> np.ndarray:
    return np.clip(np.asarray(action, dtype=float), bounds.low, bounds.high)


def sample_sequence(dist: GaussianActionDistribution, rng: np.random.Generator, bounds: Bounds) -> np.ndarray:
    """Draw one ``(H, d_a)`` sequence, sampled per dimension then clipped."""
    return sample_sequences(dist, rng, bounds, 1)[0]


def sample_sequences(dist: GaussianActionDistribution, rng: np.random.Generator, bounds: Bounds, n: int) -> np.ndarray:
    noise = rng.standard_normal((n,) + dist.mean.shape)
    return clip_action(dist.mean + np.sqrt(dist.var) * noise, bounds)


def refit(candidates: np.ndarray, elite_idx: Iterable[int], var_floor: float = DEFAULT_VAR_FLOOR) -> GaussianActionDistribution:
    """Mean and biased (1/k) diagonal variance of the elite candidates."""
    idx = np.asarray(list(elite_idx), dtype=int)
    if idx.size == 0:
        raise ValueError("elite set must not be empty")
    elites = np.asarray(candidates, dtype=float)[idx]
    if elites.ndim == 1:
        elites = elites[:, None, None]
    elif elites.ndim == 2:
        elites = elites[:, :, None]
    mean = elites.mean(axis=0)
    var = np.mean((elites - mean) ** 2, axis=0)
    return GaussianActionDistribution(mean, np.maximum(var, var_floor), var_floor)


def uniform_actions(rng: np.random.Generator, bounds: Bounds, n: int | None = None) -> np.ndarray:
    shape = (bounds.dim,) if n is None else (n, bounds.dim)
    return rng.uniform(bounds.low, bounds.high, size=shape)


def as_state(values: Sequence[float] | np.ndarray, dim: int | None = None) -> np.ndarray:
    s = np.asarray(values, dtype=float).reshape(-1)
    if dim is not None and s.shape[0] != dim:
        raise ValueError(f"state dimension {s.shape[0]} != {dim}")
    if not np.all(np.isfinite(s)):
        raise ValueError("state contains non-finite entries")
    return s


__all__ = [
    "Bounds", "Transition", "GaussianActionDistribution", "PlannerConfig",
    "rng_stream", "clip_action", "sample_sequence", "sample_sequences", "refit",
    "uniform_actions", "as_state", "DEFAULT_VAR_FLOOR",
    "STREAM_PLAN", "STREAM_RESET", "STREAM_TRAIN", "STREAM_WARMUP", "STREAM_INIT",
]
