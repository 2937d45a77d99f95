"""Monte Carlo Tree Search over model-predicted states.

MCTS-CEM fits one Gaussian over action sequences at the root (via CEM) and
samples every expansion and rollout action from it; MCTS-Random uses
uniform actions instead and skips the fit. Both pick the most-visited root
child.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Protocol

import numpy as np

from .cem import fit_root_distribution
from .core import Bounds, GaussianActionDistribution, PlannerConfig, clip_action
from .freenergy import epistemic_value_from_gaussians


class ActionPolicy(Protocol):
    def sample(self, t: int, rng: np.random.Generator) -> np.ndarray: ...


class RootDistributionPolicy:
    """Samples step ``t`` of the fitted sequence distribution, clipped to bounds."""

    def __init__(self, dist: GaussianActionDistribution, bounds: Bounds):
        self.dist = dist
        self.bounds = bounds
        self._std = np.sqrt(dist.var)

    def sample(self, t, rng):
        t = min(max(t, 0), self.dist.horizon - 1)
        a = self.dist.mean[t] + self._std[t] * rng.standard_normal(self.dist.action_dim)
        return clip_action(a, self.bounds)


class UniformPolicy:
    def __init__(self, bounds: Bounds):
        self.bounds = bounds

    def sample(self, t, rng):
        return rng.uniform(self.bounds.low, self.bounds.high)


Transition = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


def model_transition(model, propagation: str = "mean") -> Transition:
    """Single-state step through the ensemble: mean of member means, or a sample."""
    if propagation == "mean":
        return lambda s, a, rng: model.predict_mean(s[None], a[None])[0]
    if propagation == "sample":
        return lambda s, a, rng: model.sample_next(s[None], a[None], rng)[0]
    raise ValueError(f"unknown propagation {propagation!r}")


@dataclass(eq=False)
class TreeNode:
    state: np.ndarray
    action: Optional[np.ndarray] = None
    parent: Optional["TreeNode"] = field(default=None, repr=False)
    depth: int = 0
    visit_count: int = 0
    value_sum: float = 0.0
    rollouts: int = 0
    children: list["TreeNode"] = field(default_factory=list, repr=False)

    @property
    def q(self) -> float:
        return self.value_sum / self.visit_count if self.visit_count else math.nan

    def walk(self) -> Iterator["TreeNode"]:
        """Breadth-first traversal, children in insertion order."""
        queue = [self]
        while queue:
            node = queue.pop(0)
            yield node
            queue.extend(node.children)


def ucb_select(parent: TreeNode, c_ucb: float) -> int:
    """Index of the child maximising ``Q_i + c * sqrt(ln N / N_i)``.

    Unvisited children score +inf; ties go to the lowest index.
    """
    if not parent.children:
        raise ValueError("cannot select among zero children")
    log_n = math.log(max(parent.visit_count, 1))
    best, best_val = 0, -math.inf
    for i, child in enumerate(parent.children):
        if child.visit_count == 0:
            return i
        val = child.value_sum / child.visit_count + c_ucb * math.sqrt(log_n / child.visit_count)
        if val > best_val:
            best, best_val = i, val
    return best


def is_expandable(node: TreeNode, n_children: int, max_depth: int) -> bool:
    return len(node.children) < n_children and node.depth < max_depth


def expand(node: TreeNode, policy: ActionPolicy, transition: Transition, n_children: int, max_depth: int,
           rng: np.random.Generator) -> TreeNode:
    """Add one child reached by an action drawn from ``policy``."""
    if not is_expandable(node, n_children, max_depth):
        raise RuntimeError("node is fully expanded or at maximum depth")
    action = policy.sample(node.depth, rng)
    child = TreeNode(transition(node.state, action, rng), action, node, node.depth + 1)
    node.children.append(child)
    return child


def simulate_rollout(state: np.ndarray, policy: ActionPolicy, transition: Transition, reward_fn,
                     rollout_horizon: int, gamma: float, rng: np.random.Generator, start_t: int = 0,
                     ev_bonus: Callable[[np.ndarray, np.ndarray], float] | None = None) -> float:
    """Discounted return of a fixed-policy model rollout.

    ``start_t`` offsets the step index handed to the policy, so a rollout
    from depth ``d`` continues the root sequence at step ``d``. If
    ``ev_bonus`` is given its value is added to each step's reward.
    """
    g, discount = 0.0, 1.0
    s = np.asarray(state, dtype=float)
    for t in range(rollout_horizon):
        a = policy.sample(start_t + t, rng)
        r = float(reward_fn(s[None], a[None])[0])
        if ev_bonus is not None:
            r += ev_bonus(s, a)
        g += discount * r
        discount *= gamma
        s = transition(s, a, rng)
    return g


def backpropagate(leaf: TreeNode, g: float) -> None:
    leaf.rollouts += 1
    node = leaf
    while node is not None:
        node.visit_count += 1
        node.value_sum += g
        node = node.parent


def best_root_action(root: TreeNode) -> np.ndarray:
    """Action of the most-visited root child (first one on ties)."""
    if not root.children:
        raise ValueError("root has no children")
    counts = [c.visit_count for c in root.children]
    return root.children[int(np.argmax(counts))].action


def run_search(s0: np.ndarray, policy: ActionPolicy, transition: Transition, reward_fn, cfg: PlannerConfig,
               rng: np.random.Generator, ev_bonus=None) -> TreeNode:
    """``cfg.n_sim`` rounds of select, expand, roll out and back up."""
    root = TreeNode(np.asarray(s0, dtype=float))
    for _ in range(cfg.n_sim):
        node = root
        while not is_expandable(node, cfg.n_children, cfg.max_depth) and node.depth < cfg.max_depth:
            node = node.children[ucb_select(node, cfg.c_ucb)]
        if is_expandable(node, cfg.n_children, cfg.max_depth):
            node = expand(node, policy, transition, cfg.n_children, cfg.max_depth, rng)
        g = simulate_rollout(node.state, policy, transition, reward_fn, cfg.rollout_horizon, cfg.gamma, rng,
                             start_t=node.depth, ev_bonus=ev_bonus)
        backpropagate(node, g)
    return root


def _ev_bonus(model, cfg: PlannerConfig, rng: np.random.Generator):
    scale = getattr(model, "output_scale", None)
    # separate stream for the bonus's sampling noise
    ev_rng = np.random.default_rng(rng.integers(0, 2 ** 63 - 1))

    def bonus(s, a):
        means, variances = model.member_gaussians(s[None], a[None])
        noise = ev_rng.standard_normal((means.shape[0], cfg.ev_samples, means.shape[2]))
        ev = float(epistemic_value_from_gaussians(means, variances, noise, cfg.knn_k, scale)[0])
        return cfg.lam * (max(ev, 0.0) if cfg.clamp_ev else ev)

    return bonus


def mcts_plan(s0: np.ndarray, model, reward_fn, cfg: PlannerConfig, bounds: Bounds, rng: np.random.Generator,
              mode: str = "cem", root_dist: GaussianActionDistribution | None = None,
              transition: Transition | None = None) -> tuple[np.ndarray, TreeNode]:
    """Plan one action from ``s0``; returns the action and the search tree.

    ``mode="cem"`` fits (or reuses ``root_dist``) the root distribution first;
    ``mode="random"`` expands and rolls out with uniform actions.
    """
    if transition is None:
        transition = model_transition(model, cfg.propagation)
    if mode == "cem":
        if root_dist is None:
            root_dist = fit_root_distribution(s0, model, reward_fn, cfg, bounds, rng)
        policy: ActionPolicy = RootDistributionPolicy(root_dist, bounds)
    elif mode == "random":
        policy = UniformPolicy(bounds)
    else:
        raise ValueError(f"unknown mcts mode {mode!r}")
    bonus = _ev_bonus(model, cfg, rng) if (cfg.intrinsic_rollout and cfg.lam > 0) else None
    root = run_search(s0, policy, transition, reward_fn, cfg, rng, bonus)
    return best_root_action(root), root


class MCTSPlanner:
    def __init__(self, model, reward_fn, cfg: PlannerConfig, bounds: Bounds, mode: str = "cem"):
        if mode not in ("cem", "random"):
            raise ValueError(f"unknown mcts mode {mode!r}")
        self.model = model
        self.reward_fn = reward_fn
        self.cfg = cfg
        self.bounds = bounds
        self.mode = mode
        self.name = f"mcts-{mode}"
        self.last_tree: TreeNode | None = None
        self.last_dist: GaussianActionDistribution | None = None

    def reset(self) -> None:
        self.last_tree = None
        self.last_dist = None

    def plan(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        root_dist = None
        if self.mode == "cem":
            init = self.last_dist.shifted() if (self.cfg.warm_start and self.last_dist is not None) else None
            root_dist = fit_root_distribution(state, self.model, self.reward_fn, self.cfg, self.bounds, rng, init=init)
            self.last_dist = root_dist
        action, self.last_tree = mcts_plan(state, self.model, self.reward_fn, self.cfg, self.bounds, rng,
                                           self.mode, root_dist)
        return action


# -- debug dump -------------------------------------------------------------

DUMP_HEADER = "# node_id\tparent_id\tdepth\tvisits\tq\taction"


def dump_tree(root: TreeNode) -> str:
    """Tab-separated dump: one node per line, breadth-first ids."""
    ids = {}
    lines = [DUMP_HEADER]
    for i, node in enumerate(root.walk()):
        ids[id(node)] = i
        parent = ids[id(node.parent)] if node.parent is not None else -1
        action = "-" if node.action is None else ",".join(repr(float(x)) for x in node.action)
        q = "nan" if node.visit_count == 0 else repr(node.q)
        lines.append(f"{i}\t{parent}\t{node.depth}\t{node.visit_count}\t{q}\t{action}")
    return "\n".join(lines) + "\n"


@dataclass
class DumpedNode:
    node_id: int
    parent_id: int
    depth: int
    visits: int
    q: float
    action: Optional[tuple[float, ...]]


def parse_tree_dump(text: str) -> list[DumpedNode]:
    nodes = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split("\t")
        if len(f) != 6:
            raise ValueError(f"malformed tree dump line: {line!r}")
        action = None if f[5] == "-" else tuple(float(x) for x in f[5].split(","))
        nodes.append(DumpedNode(int(f[0]), int(f[1]), int(f[2]), int(f[3]), float(f[4]), action))
    return nodes


def summarize_dump(nodes: list[DumpedNode]) -> str:
    """Human-readable summary of a parsed dump: size, depth and root children."""
    if not nodes:
        return "empty tree"
    root = nodes[0]
    kids = [n for n in nodes if n.parent_id == root.node_id]
    out = [f"nodes={len(nodes)} max_depth={max(n.depth for n in nodes)} root_visits={root.visits}"]
    best = max(kids, key=lambda n: n.visits).node_id if kids else None
    for k in kids:
        mark = " *" if k.node_id == best else ""
        out.append(f"  child {k.node_id}: action={k.action} visits={k.visits} q={k.q:.4f}{mark}")
    return "\n".join(out)
