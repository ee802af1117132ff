"""RRT* with pluggable steering.

``plan(env, None, cfg)`` is plain RRT*.  Passing a steering model turns the
steer step into a scored draw among candidates in the steering ball, and the
tree caches one sequence-model state per node.  Rewiring recomputes the
rewired node's state and marks its subtree stale; stale states are rebuilt
lazily from the nearest clean ancestor.
"""
import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import env as envmod
from .numerics.rng import derive_seed, rng_stream
from .steering import make_steering


@dataclass(frozen=True)
class PlannerConfig:
    step_radius: float = 5.0
    gamma: float = None  # near-radius constant; None derives it from free volume
    candidates: int = 10
    iterations: int = 1000
    goal_bias: float = 0.05
    seed: int = 0
    rewire: bool = True
    max_sample_tries: int = 100000
    time_budget: float = None  # seconds; stops early when exceeded
    checkpoints: tuple = ()  # iteration counts at which curve points are recorded

    def __post_init__(self):
        if self.step_radius <= 0 or self.candidates < 1 or self.iterations < 1:
            raise ValueError("need step_radius > 0, candidates >= 1, iterations >= 1")
        if not 0.0 <= self.goal_bias < 1.0 + 1e-12:
            raise ValueError("goal bias must lie in [0, 1]")


class PlanTree:
    """Array-backed search tree with per-node cost and cached model state."""

    def __init__(self, root, capacity=1024):
        root = np.asarray(root, float)
        self.dim = root.shape[0]
        self.configs = np.zeros((capacity, self.dim))
        self.costs = np.zeros(capacity)
        self.parents = np.full(capacity, -1, dtype=np.int64)
        self.mus = np.zeros((capacity, self.dim))
        self.stale = np.zeros(capacity, dtype=bool)
        self.children = [[]]
        self.states = [None]
        self.configs[0] = root
        self.mus[0] = root
        self.count = 1

    def __len__(self):
        return self.count

    def _grow(self):
        cap = 2 * len(self.costs)
        for name in ("configs", "costs", "parents", "mus", "stale"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            if name == "parents":
                new[:] = -1
            new[: len(old)] = old
            setattr(self, name, new)

    def add(self, config, parent, cost, mu, state=None) -> int:
        if self.count == len(self.costs):
            self._grow()
        i = self.count
        self.configs[i] = config
        self.costs[i] = cost
        self.parents[i] = parent
        self.mus[i] = mu
        self.children.append([])
        self.children[parent].append(i)
        self.states.append(state)
        self.count += 1
        return i

    def nearest(self, x) -> int:
        """Index of the Euclidean-nearest node (lowest index on ties)."""
        if self.count == 0:
            raise ValueError("empty tree")
        d2 = np.sum((self.configs[: self.count] - x) ** 2, axis=1)
        return int(np.argmin(d2))

    def near(self, x, radius):
        d2 = np.sum((self.configs[: self.count] - x) ** 2, axis=1)
        idx = np.flatnonzero(d2 <= radius * radius)
        return idx, np.sqrt(d2[idx])

    def path_ids(self, i):
        out = []
        while i >= 0:
            out.append(i)
            i = int(self.parents[i])
        return out[::-1]

    def path(self, i):
        return self.configs[self.path_ids(i)].copy()

    def descendants(self, i):
        out, stack = [], list(self.children[i])
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(self.children[j])
        return out

    def reparent(self, i, new_parent, new_cost):
        old = int(self.parents[i])
        self.children[old].remove(i)
        self.children[new_parent].append(i)
        self.parents[i] = new_parent
        delta = new_cost - self.costs[i]
        self.costs[i] = new_cost
        for j in self.descendants(i):
            p = self.parents[j]
            self.costs[j] = self.costs[p] + math.dist(self.configs[j], self.configs[p])
        return delta

    def check(self, tol=1e-9):
        """Raise ``AssertionError`` on any structural inconsistency."""
        n = self.count
        roots = np.flatnonzero(self.parents[:n] < 0)
        assert list(roots) == [0], "tree must have exactly one root at index 0"
        assert self.costs[0] == 0.0
        assert sum(len(c) for c in self.children[:n]) == n - 1, "edge count must be |V| - 1"
        for i in range(1, n):
            p = self.parents[i]
            assert 0 <= p < n and i in self.children[p]
            expect = self.costs[p] + np.linalg.norm(self.configs[i] - self.configs[p])
            assert abs(self.costs[i] - expect) <= tol * max(1.0, expect), f"cost mismatch at node {i}"
        seen = np.zeros(n, bool)
        stack = [0]
        while stack:
            j = stack.pop()
            assert not seen[j], "cycle in parent links"
            seen[j] = True
            stack.extend(self.children[j])
        assert seen.all(), "unreachable nodes"

    def to_records(self):
        return [
            {"id": i, "parent": int(self.parents[i]), "config": [float(v) for v in self.configs[i]], "cost": float(self.costs[i])}
            for i in range(self.count)
        ]


@dataclass
class PlanResult:
    success: bool
    path: np.ndarray
    length: float
    iterations: int
    proposed: int
    valid: int
    seed: int = 0
    goal_node: int = -1
    tree: PlanTree = field(default=None, repr=False)
    curve: list = field(default_factory=list)  # (iteration, best length or None, valid proportion)

    @property
    def valid_proportion(self) -> float:
        return self.valid / self.proposed if self.proposed else float("nan")

    def to_dict(self) -> dict:
        return {
            "success": bool(self.success),
            "path": [[float(v) for v in p] for p in self.path],
            "length": float(self.length) if self.success else None,
            "iterations": int(self.iterations),
            "proposed": int(self.proposed),
            "valid": int(self.valid),
            "seed": int(self.seed),
        }


# ----------------------------------------------------------------------------
# primitives


def rrt_star_gamma(free_volume: float, d: int) -> float:
    """Smallest asymptotically-optimal shrinking-ball constant for dimension ``d``."""
    unit_ball = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
    return 2.0 * (1.0 + 1.0 / d) ** (1.0 / d) * (free_volume / unit_ball) ** (1.0 / d) * 1.0001


def near_radius(cfg: PlannerConfig, gamma: float, n_nodes: int, d: int) -> float:
    n = max(n_nodes, 2)
    return min(cfg.step_radius, gamma * (math.log(n) / n) ** (1.0 / d))


def sample_free(env, rng, cfg: PlannerConfig, t=0):
    """Uniform free configuration by rejection; the goal centre with probability ``goal_bias``."""
    if cfg.goal_bias > 0.0 and rng.random() < cfg.goal_bias:
        return np.array(env.goal_center, float)
    w, h = env.map.extent
    for _ in range(cfg.max_sample_tries):
        x = np.array([rng.uniform(0.0, w), rng.uniform(0.0, h)])
        if envmod.point_free(env, x, t):
            return x
    raise RuntimeError("no free configuration found; free space may be empty")


def nearest(tree: PlanTree, x) -> int:
    return tree.nearest(np.asarray(x, float))


def steer_baseline(x_nearest, x_rand, r):
    """Point of the ball B(x_nearest, r) closest to ``x_rand``."""
    x_nearest = np.asarray(x_nearest, float)
    x_rand = np.asarray(x_rand, float)
    d = x_rand - x_nearest
    n = float(np.linalg.norm(d))
    if n <= r:
        return x_rand.copy()
    return x_nearest + d * (r / n)


def sample_ball(rng, center, r, n):
    """``n`` points uniform in the 2-D disc of radius ``r`` around ``center``."""
    rad = r * np.sqrt(rng.random(n))
    ang = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.asarray(center, float)[None, :2] + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


class SteerResult(NamedTuple):
    x_new: np.ndarray
    state: object
    candidates: np.ndarray
    scores: np.ndarray
    index: int


def steer_with_model(session, state, x_nearest, mu, rng, cfg: PlannerConfig) -> SteerResult:
    """Score ``{mu}`` plus ``k - 1`` uniform ball points and draw one in proportion to exp(score)."""
    k = cfg.candidates
    cands = np.asarray(mu, float)[None, :]
    if k > 1:
        cands = np.vstack([cands, sample_ball(rng, x_nearest, cfg.step_radius, k - 1)])
    scores, ctx = session.score(state, x_nearest, mu, cands)
    scores = np.asarray(scores, float)
    finite = np.isfinite(scores)
    if k == 1 or not finite.any():
        idx = 0
    else:
        s = np.where(finite, scores, -np.inf)
        p = np.exp(s - s.max())
        p /= p.sum()
        idx = int(rng.choice(k, p=p))
    x_new = cands[idx]
    new_state = session.commit(state, ctx, x_nearest, x_new, mu)
    return SteerResult(x_new, new_state, cands, scores, idx)


def cached_state(tree: PlanTree, session, i):
    """State of node ``i``, rebuilding stale ancestors on the way."""
    if not tree.stale[i]:
        return tree.states[i]
    chain = []
    j = i
    while tree.stale[j]:
        chain.append(j)
        j = int(tree.parents[j])
    for j in reversed(chain):
        p = int(tree.parents[j])
        tree.states[j] = session.advance(tree.states[p], tree.configs[p], tree.configs[j], tree.mus[j])
        tree.stale[j] = False
    return tree.states[i]


def recompute_state(tree: PlanTree, session, i):
    """Model state of node ``i`` rebuilt from scratch along its root path (ignores caches)."""
    ids = tree.path_ids(i)
    s = session.root_state(tree.configs[0])
    for p, j in zip(ids[:-1], ids[1:]):
        s = session.advance(s, tree.configs[p], tree.configs[j], tree.mus[j])
    return s


def extend(tree, session, env, x_new, i_nearest, mu, steer_state, gamma, cfg, t=0):
    """Insert ``x_new`` under the cheapest collision-free neighbour.  Returns (node id, near ids, near dists)."""
    d = tree.dim
    radius = near_radius(cfg, gamma, tree.count + 1, d)
    near_ids, near_d = tree.near(x_new, radius)
    x_nearest = tree.configs[i_nearest]
    best = i_nearest
    best_cost = tree.costs[i_nearest] + math.dist(x_new, x_nearest)
    if len(near_ids):
        totals = tree.costs[near_ids] + near_d
        for j in np.argsort(totals, kind="stable"):
            cand = int(near_ids[j])
            if totals[j] >= best_cost:
                break
            if cand != i_nearest and _edge_free(env, tree.configs[cand], x_new, t):
                best, best_cost = cand, float(totals[j])
                break
    state = None
    if session is not None:
        if best == i_nearest:
            state = steer_state
        else:
            state = session.advance(cached_state(tree, session, best), tree.configs[best], x_new, mu)
    new_id = tree.add(x_new, best, best_cost, mu, state)
    return new_id, near_ids, near_d


def rewire(tree, session, env, new_id, near_ids, near_d, t=0):
    """Route neighbours through ``new_id`` when that is cheaper.  Returns the rewired ids."""
    x_new = tree.configs[new_id]
    c_new = tree.costs[new_id]
    changed = []
    for j, dj in zip(near_ids, near_d):
        j = int(j)
        if j == new_id or j == tree.parents[new_id]:
            continue
        c = c_new + float(dj)
        if c < tree.costs[j] - 1e-12 and _edge_free(env, x_new, tree.configs[j], t):
            tree.reparent(j, new_id, c)
            if session is not None:
                tree.states[j] = session.advance(tree.states[new_id], x_new, tree.configs[j], tree.mus[j])
                tree.stale[j] = False
                for k in tree.descendants(j):
                    tree.stale[k] = True
            changed.append(j)
    return changed


def _edge_free(env, a, b, t):
    return envmod.segment_free(env, a, b, t)


# ----------------------------------------------------------------------------
# planners


def _best_goal(tree, env, goal_ids):
    if not goal_ids:
        return -1
    ids = np.array(goal_ids)
    return int(ids[np.argmin(tree.costs[ids])])


def plan(env, model=None, cfg: PlannerConfig = PlannerConfig(), t=0, rng=None) -> PlanResult:
    """Run ``cfg.iterations`` RRT* iterations from ``env.start``.

    ``model`` is ``None`` (plain RRT*), an ``HmmModel``, a
    ``RecurrentSteeringModel`` or an already-wrapped steering adapter.
    """
    steering = make_steering(model, env.kind)
    rng = rng_stream(cfg.seed, 0) if rng is None else rng
    start = np.asarray(env.start, float)
    tree = PlanTree(start, capacity=cfg.iterations + 2)
    session = steering.bind(env, t) if steering is not None else None
    if session is not None:
        tree.states[0] = session.root_state(start)
    if env.in_goal(start):
        return PlanResult(True, start[None].copy(), 0.0, 0, 0, 0, cfg.seed, 0, tree)
    gamma = cfg.gamma if cfg.gamma is not None else rrt_star_gamma(env.map.free_volume(), 2)
    goal_ids = []
    proposed = valid = 0
    curve = []
    checkpoints = set(cfg.checkpoints)
    t0 = time.perf_counter()
    it = 0
    for it in range(1, cfg.iterations + 1):
        x_rand = sample_free(env, rng, cfg, t)
        i_near = tree.nearest(x_rand)
        x_nearest = tree.configs[i_near]
        mu = steer_baseline(x_nearest, x_rand, cfg.step_radius)
        steer_state = None
        if session is not None:
            sr = steer_with_model(session, cached_state(tree, session, i_near), x_nearest, mu, rng, cfg)
            x_new, steer_state = sr.x_new, sr.state
        else:
            x_new = mu
        proposed += 1
        if envmod.segment_free(env, x_nearest, x_new, t):
            valid += 1
            if math.dist(x_new, x_nearest) > 1e-12:
                new_id, near_ids, near_d = extend(tree, session, env, x_new, i_near, mu, steer_state, gamma, cfg, t)
                if cfg.rewire:
                    rewire(tree, session, env, new_id, near_ids, near_d, t)
                if env.in_goal(x_new):
                    goal_ids.append(new_id)
        if it in checkpoints:
            g = _best_goal(tree, env, goal_ids)
            curve.append((it, float(tree.costs[g]) if g >= 0 else None, valid / proposed))
        if cfg.time_budget is not None and time.perf_counter() - t0 > cfg.time_budget:
            break
    g = _best_goal(tree, env, goal_ids)
    if g >= 0:
        return PlanResult(True, tree.path(g), float(tree.costs[g]), it, proposed, valid, cfg.seed, g, tree, curve)
    return PlanResult(False, start[None].copy(), float("inf"), it, proposed, valid, cfg.seed, -1, tree, curve)


# ----------------------------------------------------------------------------
# joint configuration-space planner


def _agent_center(env):
    return envmod._roundabout_center(env)


class _JointSpace:
    """Robot plus every agent as one 2(1 + A)-dimensional configuration."""

    def __init__(self, env, t):
        self.env = env
        self.n = 1 + len(env.agents)
        self.center = _agent_center(env)
        self.t = t

    def sample(self, rng, cfg):
        if cfg.goal_bias > 0.0 and rng.random() < cfg.goal_bias:
            x = self._sample_uniform(rng, cfg)
            x[:2] = self.env.goal_center
            return x
        return self._sample_uniform(rng, cfg)

    def _sample_uniform(self, rng, cfg):
        w, h = self.env.map.extent
        out = np.empty(2 * self.n)
        for k in range(self.n):
            for _ in range(cfg.max_sample_tries):
                p = np.array([rng.uniform(0.0, w), rng.uniform(0.0, h)])
                if not self.env.map.occupied(p[None])[0]:
                    break
            out[2 * k : 2 * k + 2] = p
        return out

    def edge_free(self, a, b):
        a = np.asarray(a, float).reshape(self.n, 2)
        b = np.asarray(b, float).reshape(self.n, 2)
        if self.n > 1:
            ta = np.arctan2(a[1:, 1] - self.center[1], a[1:, 0] - self.center[0])
            tb = np.arctan2(b[1:, 1] - self.center[1], b[1:, 0] - self.center[0])
            dtheta = envmod._wrap(tb - ta)
            if np.any(dtheta < 0.0):
                return False
        span = float(np.max(np.linalg.norm(b - a, axis=1)))
        m = max(2, int(math.ceil(span / envmod.SEGMENT_SPACING)) + 1)
        s = np.linspace(0.0, 1.0, m)[:, None, None]
        pts = a[None] + s * (b - a)[None]  # m, n, 2
        if np.any(self.env.map.occupied(pts.reshape(-1, 2))):
            return False
        if self.n > 1:
            d = np.linalg.norm(pts[:, 1:, :] - pts[:, :1, :], axis=-1)
            if np.any(d < self.env.robot_radius):
                return False
        return True


def plan_joint(env, cfg: PlannerConfig = PlannerConfig(), t=0, rng=None) -> PlanResult:
    """RRT* over the joint space of robot and agents; agents may only move counter-clockwise.

    The returned path holds the robot's coordinates only.
    """
    if not env.agents:
        return plan(env, None, cfg, t, rng)
    rng = rng_stream(cfg.seed, 0) if rng is None else rng
    space = _JointSpace(env, t)
    d = 2 * space.n
    start = np.concatenate([env.start] + [a.position(t) for a in env.agents])
    tree = PlanTree(start, capacity=cfg.iterations + 2)
    if env.in_goal(start):
        return PlanResult(True, start[None, :2].copy(), 0.0, 0, 0, 0, cfg.seed, 0, tree)
    gamma = cfg.gamma if cfg.gamma is not None else rrt_star_gamma(env.map.free_volume() ** space.n, d)
    goal_ids = []
    proposed = valid = 0
    t0 = time.perf_counter()
    it = 0
    for it in range(1, cfg.iterations + 1):
        x_rand = space.sample(rng, cfg)
        i_near = tree.nearest(x_rand)
        x_nearest = tree.configs[i_near]
        x_new = steer_baseline(x_nearest, x_rand, cfg.step_radius)
        proposed += 1
        if space.edge_free(x_nearest, x_new):
            valid += 1
            radius = near_radius(cfg, gamma, tree.count + 1, d)
            near_ids, near_d = tree.near(x_new, radius)
            best = i_near
            best_cost = tree.costs[i_near] + float(np.linalg.norm(x_new - x_nearest))
            totals = tree.costs[near_ids] + near_d
            for j in np.argsort(totals, kind="stable"):
                if totals[j] >= best_cost:
                    break
                if int(near_ids[j]) != i_near and space.edge_free(tree.configs[near_ids[j]], x_new):
                    best, best_cost = int(near_ids[j]), float(totals[j])
                    break
            new_id = tree.add(x_new, best, best_cost, x_new)
            if cfg.rewire:
                for j, dj in zip(near_ids, near_d):
                    j = int(j)
                    if j == best:
                        continue
                    c = best_cost + float(dj)
                    if c < tree.costs[j] - 1e-12 and space.edge_free(x_new, tree.configs[j]):
                        tree.reparent(j, new_id, c)
            if env.in_goal(x_new[:2]):
                goal_ids.append(new_id)
        if cfg.time_budget is not None and time.perf_counter() - t0 > cfg.time_budget:
            break
    g = _best_goal(tree, env, goal_ids)
    if g >= 0:
        path = tree.path(g)
        return PlanResult(True, path[:, :2].copy(), _polyline_length(path[:, :2]), it, proposed, valid, cfg.seed, g, tree)
    return PlanResult(False, start[None, :2].copy(), float("inf"), it, proposed, valid, cfg.seed, -1, tree)


def _polyline_length(path):
    path = np.asarray(path, float)
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))) if len(path) > 1 else 0.0


# ----------------------------------------------------------------------------
# dynamic re-planning


def cost_to_go(env) -> np.ndarray:
    """Geodesic distance (8-connected grid) from every free cell to the goal cell."""
    h, w = env.map.height, env.map.width
    free = env.map.cells == 0
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = idx[r0:r1, c0:c1]
        b = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        ok = free[r0:r1, c0:c1] & free[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if dr and dc:
            ok &= free[r0 + dr : r1 + dr, c0:c1] & free[r0:r1, c0 + dc : c1 + dc]
        rows.append(a[ok])
        cols.append(b[ok])
        vals.append(np.full(int(ok.sum()), math.hypot(dr, dc)))
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    graph = coo_matrix((vals, (rows, cols)), shape=(h * w, h * w)).tocsr()
    res = env.map.resolution
    g = env.goal_center
    goal_idx = int(min(max(int(g[1] // res), 0), h - 1) * w + min(max(int(g[0] // res), 0), w - 1))
    dist = dijkstra(graph, directed=False, indices=goal_idx)
    return dist.reshape(h, w) * res


def _lookup(ctg, env, pts):
    res = env.map.resolution
    pts = np.atleast_2d(pts)
    c = np.clip((pts[:, 0] // res).astype(int), 0, env.map.width - 1)
    r = np.clip((pts[:, 1] // res).astype(int), 0, env.map.height - 1)
    return ctg[r, c]


@dataclass
class ReplanOutcome:
    success: bool
    collision: bool
    timeout: bool
    trajectory: np.ndarray
    length: float
    steps: int
    proposed: int
    valid: int

    def to_dict(self):
        return {
            "success": self.success,
            "collision": self.collision,
            "timeout": self.timeout,
            "length": self.length if self.success else None,
            "steps": self.steps,
            "proposed": self.proposed,
            "valid": self.valid,
            "trajectory": [[float(v) for v in p] for p in self.trajectory],
        }


def _execution_collides(env, a, b, t, substeps=20):
    s = np.linspace(0.0, 1.0, substeps + 1)
    pts = a[None] + s[:, None] * (b - a)[None]
    if np.any(env.map.occupied(pts)):
        return True
    for agent in env.agents:
        ap = np.array([agent.position(t + si) for si in s])
        if np.any(np.linalg.norm(pts - ap, axis=1) < env.robot_radius):
            return True
    return False


def replan_loop(env, model=None, cfg: PlannerConfig = PlannerConfig(), samples_per_step=100, joint=False,
                max_steps=100, safety_margin=None) -> ReplanOutcome:
    """Alternate planning from the current position and executing the first edge.

    Each re-plan treats the agents as static discs at the current time,
    inflated by ``safety_margin`` (default: the largest per-step agent
    displacement).  When no node reaches the goal the planner heads for the
    node minimising cost-so-far plus geodesic cost-to-go.  The episode ends
    at the goal, on a collision during execution, or after ``max_steps``.
    """
    if safety_margin is None:
        safety_margin = float(env.metadata.get("agent_max_step", 0.0))
    plan_env = envmod.Environment(env.map, env.start, env.goal_center, env.goal_radius, env.agents,
                                  env.metadata, env.robot_radius + safety_margin)
    ctg = cost_to_go(env)
    steering = make_steering(model, env.kind)
    pos = np.array(env.start, float)
    traj = [pos.copy()]
    proposed = valid = 0
    for step_i in range(max_steps):
        if env.in_goal(pos):
            return ReplanOutcome(True, False, False, np.array(traj), _polyline_length(traj), step_i, proposed, valid)
        snap = envmod.with_start(plan_env, pos)
        step_cfg = replace(cfg, iterations=samples_per_step, seed=derive_seed(cfg.seed, step_i))
        if joint:
            res = plan_joint(snap, step_cfg, t=step_i)
        else:
            res = plan(snap, steering, step_cfg, t=step_i)
        proposed += res.proposed
        valid += res.valid
        tree = res.tree
        if res.success:
            ids = tree.path_ids(res.goal_node)
        else:
            n = tree.count
            score = tree.costs[:n] + _lookup(ctg, env, tree.configs[:n, :2])
            ids = tree.path_ids(int(np.argmin(score)))
        nxt = tree.configs[ids[1], :2].copy() if len(ids) > 1 else pos.copy()
        if _execution_collides(env, pos, nxt, step_i, substeps=20):
            traj.append(nxt)
            return ReplanOutcome(False, True, False, np.array(traj), _polyline_length(traj), step_i + 1, proposed, valid)
        pos = nxt
        traj.append(pos.copy())
    success = env.in_goal(pos)
    return ReplanOutcome(success, False, not success, np.array(traj), _polyline_length(traj), max_steps, proposed, valid)
