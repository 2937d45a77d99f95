"""Expected-free-energy terms: Gaussian and k-NN entropies, ensemble
epistemic value and the per-candidate score.

All entropies are in nats.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import digamma, gammaln

from .model import aggregate_samples

logger = logging.getLogger(__name__)

DISTANCE_FLOOR = 1e-12
LOG_2PIE = math.log(2 * math.pi * math.e)


@dataclass(frozen=True)
class KnnEntropyParams:
    k: int = 3
    d: int = 1

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise ValueError("k and d must be positive")


@dataclass(frozen=True)
class CandidateEvaluation:
    reward_sum: float
    ev_sum: float
    score: float


def gaussian_entropy(var) -> float | np.ndarray:
    """Entropy of a diagonal Gaussian; ``var`` holds the variances on its last axis."""
    var = np.asarray(var, dtype=float)
    if np.any(~(var > 0)):
        raise ValueError("variances must be strictly positive")
    d = var.shape[-1] if var.ndim else 1
    h = 0.5 * (d * LOG_2PIE + np.sum(np.log(var), axis=-1))
    return float(h) if np.ndim(h) == 0 else h


def log_unit_diameter_ball(d: int) -> float:
    """log volume of the d-ball of diameter 1, pi^(d/2) / Gamma(d/2 + 1) / 2^d."""
    return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0) - d * math.log(2.0)


def _kth_neighbour_distances(x: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Euclidean distance from each point to its k-th nearest other point.

    ``x`` is ``(B, N, d)``; brute-force pairwise distances, chunked over rows.
    """
    b, n, _ = x.shape
    sq = np.sum(x * x, axis=-1)
    out = np.empty((b, n))
    xt = x.transpose(0, 2, 1)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        rows = x[:, start:stop]
        d2 = sq[:, start:stop, None] + sq[:, None, :] - 2.0 * np.matmul(rows, xt)
        idx = np.arange(start, stop)
        d2[:, idx - start, idx] = np.inf
        out[:, start:stop] = np.partition(d2, k - 1, axis=-1)[..., k - 1]
    return np.sqrt(np.maximum(out, 0.0))


def knn_entropy_batch(samples: np.ndarray, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Kozachenko-Leonenko entropy for each sample set in a ``(B, N, d)`` stack.

    Returns the estimates and, per set, how many distances hit the floor.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2:
        x = x[None]
    b, n, d = x.shape
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    if k < 1:
        raise ValueError("k must be positive")
    # Centre each set; translation invariance makes this free and it keeps
    # the expanded squared-distance formula well conditioned.
    x = x - x.mean(axis=1, keepdims=True)
    eps = 2.0 * _kth_neighbour_distances(x, k)
    floored = np.sum(eps < 2.0 * DISTANCE_FLOOR, axis=1)
    eps = np.maximum(eps, 2.0 * DISTANCE_FLOOR)
    h = digamma(n) - digamma(k) + log_unit_diameter_ball(d) + d * np.mean(np.log(eps), axis=1)
    if np.any(floored):
        logger.debug("knn entropy: %d coincident sample distances floored", int(floored.sum()))
    return h, floored


def knn_entropy(samples: np.ndarray, k: int = 3) -> float:
    """k-NN (Kozachenko-Leonenko) differential entropy of one ``(N, d)`` sample set.

    ``eps_i`` is twice the distance to the k-th neighbour, so the volume
    constant is that of the unit-diameter ball.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return float(knn_entropy_batch(x[None], k)[0][0])


def epistemic_value_from_gaussians(means: np.ndarray, variances: np.ndarray, noise: np.ndarray,
                                   k: int = 3, scale: np.ndarray | None = None) -> np.ndarray:
    """Mixture entropy minus mean member entropy for a batch of ensembles.

    ``means``/``variances`` are ``(M, B, d)``. ``noise`` is standard normal,
    ``(M, n, d)`` shared across the batch or ``(M, B, n, d)``. ``scale``
    whitens each dimension before estimation; the difference of entropies
    is invariant to it, the estimator's finite-sample bias is not.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
        means = means / scale
        variances = variances / scale ** 2
    mixture = aggregate_samples(means, variances, noise)
    h_mix, _ = knn_entropy_batch(mixture, k)
    h_members = gaussian_entropy(variances).mean(axis=0)
    return h_mix - h_members


def epistemic_value(state: np.ndarray, action: np.ndarray, model, params: KnnEntropyParams | None = None,
                    n_samples: int = 20, rng: np.random.Generator | None = None, clamp: bool = False) -> float:
    """Information gain about the dynamics from taking ``action`` in ``state``."""
    k = params.k if params is not None else 3
    rng = rng if rng is not None else np.random.default_rng(0)
    means, variances = model.member_gaussians(state, action)
    noise = rng.standard_normal((means.shape[0], n_samples, means.shape[2]))
    ev = float(epistemic_value_from_gaussians(means, variances, noise, k, getattr(model, "output_scale", None))[0])
    return max(ev, 0.0) if clamp else ev


def score_candidate(rewards: Sequence[float], evs: Sequence[float], lam: float) -> CandidateEvaluation:
    """Free-energy score of one candidate; lower is better.

    The epistemic term enters as a bonus, so ``score = sum(-r_t - lam * ev_t)``.
    """
    r = np.asarray(rewards, dtype=float)
    e = np.asarray(evs, dtype=float)
    if r.shape != e.shape:
        raise ValueError(f"rewards and evs differ in length: {r.shape} vs {e.shape}")
    reward_sum = float(r.sum())
    ev_sum = float(e.sum())
    return CandidateEvaluation(reward_sum, ev_sum, free_energy(reward_sum, ev_sum, lam))


def free_energy(reward_sum, ev_sum, lam: float):
    return -reward_sum - lam * ev_sum


def rank_candidates(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by ascending score, ties broken by index."""
    return np.argsort(np.asarray(scores, dtype=float), kind="stable")
