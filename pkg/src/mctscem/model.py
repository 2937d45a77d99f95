"""Bootstrapped ensemble of probabilistic MLP dynamics models.

Each member maps a normalised ``(state, action)`` pair to a diagonal
Gaussian over the normalised next-state delta (plus an optional reward
channel). Members share nothing but the data buffer; all of them are stored
in stacked ``(M, ...)`` arrays so forward and backward passes are vectorised
over the ensemble axis.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DEFAULT_VAR_FLOOR, Transition

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "mctscem-ensemble/1"
LOGVAR_MIN = -6.0
LOGVAR_MAX = 2.0
NORM_EPS = 1e-6

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class UninitializedModelError(RuntimeError):
    pass


class ReplayBuffer:
    """Append-only transition store; the oldest entries are evicted at capacity."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._items: deque[Transition] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._items)

    def append(self, transition: Transition) -> None:
        self._items.append(transition)

    def add(self, state, action, next_state, reward, done=False) -> None:
        self.append(Transition(np.asarray(state, float), np.asarray(action, float),
                               np.asarray(next_state, float), float(reward), bool(done)))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if not self._items:
            raise ValueError("replay buffer is empty")
        s = np.stack([t.state for t in self._items])
        a = np.stack([t.action for t in self._items])
        s2 = np.stack([t.next_state for t in self._items])
        r = np.array([t.reward for t in self._items])
        return s, a, s2, r


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "NormalizationStats":
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), NORM_EPS))

    @classmethod
    def identity(cls, dim: int) -> "NormalizationStats":
        return cls(np.zeros(dim), np.ones(dim))

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean


def _softplus(x):
    return np.logaddexp(0.0, x)


_HINGE_SCALE = (LOGVAR_MAX - LOGVAR_MIN) / float(np.logaddexp(0.0, LOGVAR_MAX - LOGVAR_MIN))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def soft_clamp_logvar(raw):
    """Smoothly squash raw log-variances into [LOGVAR_MIN, LOGVAR_MAX].

    Two softplus hinges; the lower one is rescaled so the upper limit is
    never exceeded.
    """
    upper = LOGVAR_MAX - _softplus(LOGVAR_MAX - raw)
    return LOGVAR_MIN + _HINGE_SCALE * _softplus(upper - LOGVAR_MIN)


def _soft_clamp_grad(raw):
    upper = LOGVAR_MAX - _softplus(LOGVAR_MAX - raw)
    return _HINGE_SCALE * _sigmoid(LOGVAR_MAX - raw) * _sigmoid(upper - LOGVAR_MIN)


def init_params(n_members: int, in_dim: int, out_dim: int, hidden: int,
                rng: np.random.Generator, identical: bool = False) -> dict[str, np.ndarray]:
    m = 1 if identical else n_members

    def glorot(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(m, fan_in, fan_out))

    params = {
        "W1": glorot(in_dim, hidden), "b1": np.zeros((m, hidden)),
        "W2": glorot(hidden, hidden), "b2": np.zeros((m, hidden)),
        "W3": glorot(hidden, 2 * out_dim), "b3": np.zeros((m, 2 * out_dim)),
    }
    if identical:
        params = {k: np.repeat(v, n_members, axis=0) for k, v in params.items()}
    return params


def forward(params: dict[str, np.ndarray], x: np.ndarray, cache: bool = False):
    """Mean and clamped log-variance for ``x`` of shape ``(M, B, in)``."""
    z1 = np.matmul(x, params["W1"]) + params["b1"][:, None, :]
    h1 = np.tanh(z1)
    z2 = np.matmul(h1, params["W2"]) + params["b2"][:, None, :]
    h2 = np.tanh(z2)
    out = np.matmul(h2, params["W3"]) + params["b3"][:, None, :]
    d = out.shape[-1] // 2
    mu, raw = out[..., :d], out[..., d:]
    logvar = soft_clamp_logvar(raw)
    if cache:
        return mu, logvar, (x, h1, h2, raw)
    return mu, logvar


def nll_and_grad(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray):
    """Per-member Gaussian negative log-likelihood and its exact gradient.

    The loss of member ``m`` is ``mean_{b,j} 0.5 * ((y - mu)^2 exp(-lv) + lv)``;
    gradients are returned per member, stacked like ``params``.
    """
    mu, logvar, (x, h1, h2, raw) = forward(params, x, cache=True)
    inv_var = np.exp(-logvar)
    err = mu - y
    n = y.shape[1] * y.shape[2]
    loss = 0.5 * np.sum(err ** 2 * inv_var + logvar, axis=(1, 2)) / n

    d_mu = err * inv_var / n
    d_lv = 0.5 * (1.0 - err ** 2 * inv_var) / n
    d_out = np.concatenate([d_mu, d_lv * _soft_clamp_grad(raw)], axis=-1)

    grads = {}
    grads["W3"] = np.matmul(h2.transpose(0, 2, 1), d_out)
    grads["b3"] = d_out.sum(axis=1)
    d_z2 = np.matmul(d_out, params["W3"].transpose(0, 2, 1)) * (1.0 - h2 ** 2)
    grads["W2"] = np.matmul(h1.transpose(0, 2, 1), d_z2)
    grads["b2"] = d_z2.sum(axis=1)
    d_z1 = np.matmul(d_z2, params["W2"].transpose(0, 2, 1)) * (1.0 - h1 ** 2)
    grads["W1"] = np.matmul(x.transpose(0, 2, 1), d_z1)
    grads["b1"] = d_z1.sum(axis=1)
    return loss, grads


class _Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class EnsembleModel:
    """Ensemble of ``n_members`` Gaussian MLPs predicting next-state deltas.

    Args:
        state_dim: dimension of the state vector.
        action_dim: dimension of the action vector.
        n_members: ensemble size ``M``.
        hidden: width of both hidden layers.
        learn_reward: add a reward output channel (for ``reward_mode="learned"``).
        var_floor: lower bound applied to every predicted variance.
        seed: weight-initialisation seed.
        identical_init: start every member from the same weights.
    """

    def __init__(self, state_dim: int, action_dim: int, n_members: int = 5, hidden: int = 64,
                 learn_reward: bool = False, var_floor: float = DEFAULT_VAR_FLOOR, seed: int = 0,
                 identical_init: bool = False, lr: float = 1e-3, batch_size: int = 64):
        if n_members < 1:
            raise ValueError("n_members must be positive")
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.n_members = int(n_members)
        self.hidden = int(hidden)
        self.learn_reward = bool(learn_reward)
        self.var_floor = float(var_floor)
        self.lr = float(lr)
        self.batch_size = int(batch_size)
        self.out_dim = self.state_dim + (1 if self.learn_reward else 0)
        rng = np.random.default_rng(seed)
        self.params = init_params(self.n_members, self.in_dim, self.out_dim, self.hidden, rng, identical_init)
        self.input_stats = NormalizationStats.identity(self.in_dim)
        self.target_stats = NormalizationStats.identity(self.out_dim)
        self.trained = False

    @property
    def in_dim(self) -> int:
        return self.state_dim + self.action_dim

    # -- training ---------------------------------------------------------

    def _dataset(self, buffer: ReplayBuffer):
        s, a, s2, r = buffer.arrays()
        x = np.concatenate([s, a], axis=1)
        y = s2 - s
        if self.learn_reward:
            y = np.concatenate([y, r[:, None]], axis=1)
        return x, y

    def train(self, buffer: ReplayBuffer, epochs: int, rng: np.random.Generator,
              bootstrap: bool = True) -> np.ndarray:
        """Fit every member on its own bootstrap resample of ``buffer``.

        Returns the mean minibatch loss per epoch and member, shape ``(epochs, M)``.
        """
        if len(buffer) == 0:
            raise ValueError("cannot train on an empty buffer")
        if epochs <= 0:
            return np.zeros((0, self.n_members))
        x, y = self._dataset(buffer)
        self.input_stats = NormalizationStats.fit(x)
        self.target_stats = NormalizationStats.fit(y)
        xn = self.input_stats.normalize(x)
        yn = self.target_stats.normalize(y)
        n = xn.shape[0]
        member_rngs = [np.random.default_rng(s) for s in rng.integers(0, 2 ** 63 - 1, size=self.n_members)]
        if bootstrap:
            boot = np.stack([g.integers(0, n, size=n) for g in member_rngs])
        else:
            boot = np.tile(np.arange(n), (self.n_members, 1))
        bs = min(self.batch_size, n)
        n_batches = int(np.ceil(n / bs))
        opt = _Adam(self.params, lr=self.lr)
        trace = np.zeros((epochs, self.n_members))
        for epoch in range(epochs):
            if bootstrap:
                order = np.stack([boot[m, g.permutation(n)] for m, g in enumerate(member_rngs)])
            else:
                order = np.tile(member_rngs[0].permutation(n), (self.n_members, 1))
            total = np.zeros(self.n_members)
            for b in range(n_batches):
                idx = order[:, b * bs:(b + 1) * bs]
                loss, grads = nll_and_grad(self.params, xn[idx], yn[idx])
                opt.step(self.params, grads)
                total += loss * idx.shape[1]
            trace[epoch] = total / n
        self.trained = True
        logger.debug("trained ensemble on %d transitions, final loss %s", n, trace[-1])
        return trace

    # -- prediction -------------------------------------------------------

    def _check_trained(self):
        if not self.trained:
            raise UninitializedModelError("model has not been trained")

    def _raw_predict(self, states: np.ndarray, actions: np.ndarray):
        """Denormalised per-member output means and variances, shape (M, B, out)."""
        self._check_trained()
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        xn = self.input_stats.normalize(x)
        mu, logvar = forward(self.params, np.broadcast_to(xn, (self.n_members,) + xn.shape))
        mean = self.target_stats.denormalize(mu)
        var = np.exp(logvar) * self.target_stats.std ** 2
        return mean, var

    def member_gaussians(self, states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Next-state means and variances for every member, each ``(M, B, d_s)``."""
        states = np.atleast_2d(states)
        mean, var = self._raw_predict(states, actions)
        ds = self.state_dim
        return states[None] + mean[..., :ds], np.maximum(var[..., :ds], self.var_floor)

    def predict_member(self, member: int, state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        means, variances = self.member_gaussians(state, action)
        return means[member, 0], variances[member, 0]

    def predict_mean(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        means, _ = self.member_gaussians(states, actions)
        return means.mean(axis=0)

    def predict_aggregate_samples(self, state: np.ndarray, action: np.ndarray, n: int,
                                  rng: np.random.Generator) -> np.ndarray:
        """``n`` draws from each member's Gaussian, concatenated to ``(M * n, d_s)``."""
        means, variances = self.member_gaussians(state, action)
        return aggregate_samples(means, variances, rng.standard_normal((self.n_members, n, self.state_dim)))[0]

    def sample_next(self, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Trajectory-sampling propagation: random member, then a draw from it."""
        means, variances = self.member_gaussians(states, actions)
        b = means.shape[1]
        member = rng.integers(0, self.n_members, size=b)
        cols = np.arange(b)
        return means[member, cols] + np.sqrt(variances[member, cols]) * rng.standard_normal(means.shape[1:])

    def predict_reward(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        if not self.learn_reward:
            raise UninitializedModelError("model was built without a reward channel")
        mean, _ = self._raw_predict(states, actions)
        return mean[..., -1].mean(axis=0)

    @property
    def output_scale(self) -> np.ndarray:
        """Per-dimension scale of next-state deltas (used to whiten samples)."""
        return self.target_stats.std[: self.state_dim]

    # -- checkpoints ------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION, "state_dim": self.state_dim, "action_dim": self.action_dim,
            "n_members": self.n_members, "hidden": self.hidden, "learn_reward": self.learn_reward,
            "var_floor": self.var_floor, "lr": self.lr, "batch_size": self.batch_size, "trained": self.trained,
        }
        arrays = {f"param_{k}": v for k, v in self.params.items()}
        arrays.update(in_mean=self.input_stats.mean, in_std=self.input_stats.std,
                      out_mean=self.target_stats.mean, out_std=self.target_stats.std)
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path) -> "EnsembleModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
            model = cls(meta["state_dim"], meta["action_dim"], meta["n_members"], meta["hidden"],
                        meta["learn_reward"], meta["var_floor"], lr=meta["lr"], batch_size=meta["batch_size"])
            model.params = {k: data[f"param_{k}"].copy() for k in PARAM_NAMES}
            model.input_stats = NormalizationStats(data["in_mean"].copy(), data["in_std"].copy())
            model.target_stats = NormalizationStats(data["out_mean"].copy(), data["out_std"].copy())
            model.trained = bool(meta["trained"])
        return model


def aggregate_samples(means: np.ndarray, variances: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Pool per-member Gaussian draws.

    ``means``/``variances`` are ``(M, B, d)``; ``noise`` is standard normal of
    shape ``(M, n, d)`` (shared across the batch) or ``(M, B, n, d)``.
    Returns ``(B, M * n, d)``.
    """
    m, b, d = means.shape
    if noise.ndim == 3:
        noise = noise[:, None]
    draws = means[:, :, None, :] + np.sqrt(variances)[:, :, None, :] * noise
    n = draws.shape[2]
    return draws.transpose(1, 0, 2, 3).reshape(b, m * n, d)


RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def make_reward_fn(mode: str, env_reward: RewardFn, model: EnsembleModel | None = None) -> RewardFn:
    """Oracle mode delegates to the environment; learned mode uses the model."""
    if mode == "oracle":
        return env_reward
    if mode == "learned":
        if model is None or not model.learn_reward:
            raise UninitializedModelError("learned reward mode needs a model with a reward channel")
        return model.predict_reward
    raise ValueError(f"unknown reward_mode {mode!r}")
