"""Independent reference computations shared by the unit and acceptance tests."""
import math

import numpy as np
from scipy import integrate, stats

from mctscem.model import ReplayBuffer, init_params, nll_and_grad


def mixture_entropy_1d(means, var=1.0):
    """Entropy of an equal-weight 1-D Gaussian mixture by adaptive quadrature."""
    means = np.asarray(means, dtype=float)
    sd = math.sqrt(var)

    def integrand(x):
        p = np.mean(stats.norm.pdf(x, means, sd))
        return -p * math.log(p) if p > 0 else 0.0

    lo, hi = means.min() - 12 * sd, means.max() + 12 * sd
    breaks = list(np.unique(means))
    val, _ = integrate.quad(integrand, lo, hi, points=breaks, limit=400, epsabs=1e-10)
    return val


def two_member_ev_oracle(separation, var=1.0):
    """H(mixture) - mean H(member) for two equal-variance 1-D Gaussians."""
    member = 0.5 * math.log(2 * math.pi * math.e * var)
    return mixture_entropy_1d([0.0, separation], var) - member


class FixedEnsemble:
    """Stand-in model whose member Gaussians are given directly."""

    def __init__(self, means, variances):
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)

    def member_gaussians(self, states, actions):
        b = np.atleast_2d(states).shape[0]
        m = self.means[:, None, :]
        v = self.variances[:, None, :]
        return np.repeat(m, b, axis=1), np.repeat(v, b, axis=1)


def flat(params):
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflat(vec, like):
    out, i = {}, 0
    for k in sorted(like):
        n = like[k].size
        out[k] = vec[i:i + n].reshape(like[k].shape)
        i += n
    return out


def gradient_relative_error(seed, in_dim=3, out_dim=2, hidden=6, batch=7, h=1e-6):
    """Relative error between analytic and central-difference gradients at one random point."""
    rng = np.random.default_rng(seed)
    params = init_params(1, in_dim, out_dim, hidden, rng)
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
    x = rng.standard_normal((1, batch, in_dim))
    y = rng.standard_normal((1, batch, out_dim))
    _, grads = nll_and_grad(params, x, y)
    g = flat(grads)
    theta = flat(params)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        lp = nll_and_grad(unflat(tp, params), x, y)[0][0]
        lm = nll_and_grad(unflat(tm, params), x, y)[0][0]
        fd[i] = (lp - lm) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


def linear_buffer(n, rng, d=2):
    """Transitions of s' = s + 0.1 a with states and actions uniform on [-1, 1]."""
    buf = ReplayBuffer(n)
    s = rng.uniform(-1, 1, (n, d))
    a = rng.uniform(-1, 1, (n, d))
    for i in range(n):
        buf.add(s[i], a[i], s[i] + 0.1 * a[i], 0.0)
    return buf


class DealtRootPolicy:
    """Deals ``actions`` in a seeded random order at depth 0; uniform on [-1, 1] below."""

    def __init__(self, actions, rng):
        self.actions = list(rng.permutation(np.asarray(actions, dtype=float)))

    def sample(self, t, rng):
        if t == 0:
            return np.array([self.actions.pop(0)])
        return rng.uniform(-1, 1, 1)


def bandit_transition(rewarding):
    """State ``[depth, flag]``; ``flag`` records whether the root action was ``rewarding``."""

    def step(s, a, rng):
        flag = s[1] if s[0] > 0 else float(abs(a[0] - rewarding) < 1e-12)
        return np.array([s[0] + 1.0, flag])

    return step


def bandit_reward(states, actions):
    return np.atleast_2d(states)[:, 1]


def bandit_choice(seed, n_sim=200, k=5):
    """Run the injected bandit once; True if the rewarding root action is returned."""
    from mctscem.core import PlannerConfig
    from mctscem.mcts import best_root_action, run_search

    rng = np.random.default_rng(seed)
    actions = np.linspace(-1, 1, k)
    rewarding = float(actions[rng.integers(k)])
    cfg = PlannerConfig(horizon=3, rollout_horizon=1, n_sim=n_sim, n_children=k, max_depth=3, c_ucb=1.0, lam=0.0)
    root = run_search(np.zeros(2), DealtRootPolicy(actions, rng), bandit_transition(rewarding), bandit_reward,
                      cfg, rng)
    visits = sorted((c.visit_count for c in root.children), reverse=True)
    chosen = best_root_action(root)[0]
    return chosen == rewarding and visits[0] > visits[1]
