import math

import numpy as np
import pytest
from scipy.stats import chisquare

from derrt import env as E
from derrt import hmm
from derrt import planner as P
from derrt.neural import ArchConfig, RecurrentSteeringModel
from derrt.numerics.rng import rng_stream
from derrt.steering import make_steering


class FixedScores:
    """Steering session stub with constant candidate scores."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, float)

    def score(self, state, x_nearest, mu, cands):
        return self.scores[: len(cands)], None

    def commit(self, state, ctx, x_nearest, x_new, mu):
        return state


def test_steer_baseline_examples():
    np.testing.assert_allclose(P.steer_baseline([0, 0], [10, 0], 5), [5, 0])
    np.testing.assert_allclose(P.steer_baseline([1, 1], [4, 5], 5), [4, 5])
    np.testing.assert_allclose(P.steer_baseline([0, 0], [3, 4], 2.5), [1.5, 2.0])


def test_single_candidate_returns_mu():
    rng = np.random.default_rng(0)
    cfg = P.PlannerConfig(candidates=1)
    for _ in range(20):
        mu = rng.uniform(0, 10, 2)
        sr = P.steer_with_model(FixedScores([-5.0]), None, [0.0, 0.0], mu, rng, cfg)
        np.testing.assert_array_equal(sr.x_new, mu)


def test_ball_samples_are_uniform():
    rng = np.random.default_rng(3)
    pts = P.sample_ball(rng, [2.0, -1.0], 4.0, 20000) - [2.0, -1.0]
    r2 = np.sum(pts ** 2, axis=1) / 16.0
    assert r2.max() <= 1.0
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    assert chisquare(np.histogram(r2, bins=10, range=(0, 1))[0]).pvalue > 1e-3
    assert chisquare(np.histogram(ang, bins=12, range=(-math.pi, math.pi))[0]).pvalue > 1e-3


def test_selection_is_proportional_to_exp_score():
    rng = np.random.default_rng(11)
    cfg = P.PlannerConfig(candidates=3)
    session = FixedScores(np.log([0.7, 0.2, 0.1]))
    counts = np.zeros(3)
    for _ in range(10000):
        counts[P.steer_with_model(session, None, [0.0, 0.0], [1.0, 0.0], rng, cfg).index] += 1
    np.testing.assert_allclose(counts / counts.sum(), [0.7, 0.2, 0.1], atol=0.02)


def test_non_finite_scores_fall_back_to_mu():
    rng = np.random.default_rng(0)
    sr = P.steer_with_model(FixedScores([-np.inf] * 4), None, [0, 0], [1, 1], rng, P.PlannerConfig(candidates=4))
    assert sr.index == 0


# -- tree invariants ------------------------------------------------------------


def reference_rrt_star(env, cfg):
    """Textbook RRT* with plain Python lists, drawing randomness in the same order."""
    rng = rng_stream(cfg.seed, 0)
    nodes, parent, cost = [np.asarray(env.start, float)], [-1], [0.0]

    def draw():
        if cfg.goal_bias > 0 and rng.random() < cfg.goal_bias:
            return np.asarray(env.goal_center, float)
        while True:
            x = np.array([rng.uniform(0, env.map.width), rng.uniform(0, env.map.height)])
            if E.point_free(env, x):
                return x

    for _ in range(cfg.iterations):
        x_rand = draw()
        d = [math.dist(n, x_rand) for n in nodes]
        i_near = int(np.argmin(d))
        x_new = P.steer_baseline(nodes[i_near], x_rand, cfg.step_radius)
        if not E.segment_free(env, nodes[i_near], x_new) or math.dist(nodes[i_near], x_new) <= 1e-12:
            continue
        n = len(nodes) + 1
        radius = min(cfg.step_radius, cfg.gamma * math.sqrt(math.log(n) / n))
        near = [j for j in range(len(nodes)) if math.dist(nodes[j], x_new) <= radius]
        best, best_cost = i_near, cost[i_near] + math.dist(nodes[i_near], x_new)
        options = sorted((cost[j] + math.dist(nodes[j], x_new), j) for j in near if j != i_near)
        for c, j in options:
            if c < best_cost and E.segment_free(env, nodes[j], x_new):
                best, best_cost = j, c
                break
        nodes.append(x_new)
        parent.append(best)
        cost.append(best_cost)
        k = len(nodes) - 1
        for j in near:
            c = best_cost + math.dist(nodes[j], x_new)
            if j != best and c < cost[j] - 1e-12 and E.segment_free(env, x_new, nodes[j]):
                parent[j] = k
                stack = [j]
                cost[j] = c
                while stack:
                    q = stack.pop()
                    for ch in range(len(nodes)):
                        if parent[ch] == q:
                            cost[ch] = cost[q] + math.dist(nodes[q], nodes[ch])
                            stack.append(ch)
    return np.array(nodes), np.array(parent), np.array(cost)


def test_matches_reference_rrt_star():
    env = E.gen_narrow_passage(4)
    cfg = P.PlannerConfig(step_radius=10.0, iterations=400, gamma=60.0, seed=2)
    res = P.plan(env, None, cfg)
    nodes, parent, cost = reference_rrt_star(env, cfg)
    tree = res.tree
    assert tree.count == len(nodes)
    np.testing.assert_array_equal(tree.configs[: tree.count], nodes)
    np.testing.assert_array_equal(tree.parents[: tree.count], parent)
    np.testing.assert_allclose(tree.costs[: tree.count], cost, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_tree_invariants_and_path_cost(seed):
    env = E.gen_bugtrap(seed)
    res = P.plan(env, None, P.PlannerConfig(iterations=1500, seed=seed, goal_bias=0.1))
    res.tree.check()
    assert res.valid <= res.proposed == res.iterations == 1500
    if res.success:
        path = res.path
        assert env.in_goal(path[-1])
        assert all(E.segment_free(env, a, b) for a, b in zip(path[:-1], path[1:]))
        assert res.length == pytest.approx(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


def test_choose_parent_matches_brute_force(monkeypatch):
    env = E.gen_narrow_passage(7)
    real_extend = P.extend
    checked = []

    def spy(tree, session, env_, x_new, i_nearest, mu, steer_state, gamma, cfg, t=0):
        radius = P.near_radius(cfg, gamma, tree.count + 1, 2)
        n = tree.count
        options = [tree.costs[i_nearest] + math.dist(tree.configs[i_nearest], x_new)]
        for j in range(n):
            d = math.dist(tree.configs[j], x_new)
            if d <= radius and E.segment_free(env_, tree.configs[j], x_new):
                options.append(tree.costs[j] + d)
        out = real_extend(tree, session, env_, x_new, i_nearest, mu, steer_state, gamma, cfg, t)
        checked.append((tree.costs[out[0]], min(options)))
        return out

    monkeypatch.setattr(P, "extend", spy)
    P.plan(env, None, P.PlannerConfig(step_radius=10.0, iterations=500, seed=1))
    got, want = np.array(checked).T
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-9)


def test_rewire_never_increases_costs(monkeypatch):
    env = E.gen_narrow_passage(8)
    real_rewire = P.rewire
    changed = []

    def spy(tree, session, env_, new_id, near_ids, near_d, t=0):
        before = tree.costs[: tree.count].copy()
        out = real_rewire(tree, session, env_, new_id, near_ids, near_d, t)
        assert np.all(tree.costs[: tree.count] <= before + 1e-9)
        changed.extend(out)
        return out

    monkeypatch.setattr(P, "rewire", spy)
    res = P.plan(env, None, P.PlannerConfig(step_radius=10.0, iterations=1000, seed=3))
    assert changed, "expected at least one rewire"
    res.tree.check()


def test_planning_is_deterministic():
    env = E.gen_bugtrap(1)
    cfg = P.PlannerConfig(iterations=300, seed=5)
    a, b = P.plan(env, None, cfg), P.plan(env, None, cfg)
    np.testing.assert_array_equal(a.tree.configs, b.tree.configs)


# -- model states ------------------------------------------------------------


@pytest.mark.parametrize("which", ["hmm", "gru"])
def test_cached_states_match_recomputation(which):
    env = E.gen_narrow_passage(5)
    if which == "hmm":
        model = hmm.random_model(np.random.default_rng(0), 3, 2 + E.PASSAGE_FEATURE_DIM)
    else:
        model = RecurrentSteeringModel(ArchConfig.for_env("passage", 10.0), seed=2)
    res = P.plan(env, model, P.PlannerConfig(step_radius=10.0, iterations=600, seed=4))
    tree = res.tree
    session = make_steering(model, "passage").bind(env)
    assert tree.stale[: tree.count].any() or which == "gru"
    for i in np.random.default_rng(1).choice(tree.count, 40, replace=False):
        got = P.cached_state(tree, session, int(i))
        assert session.same_state(got, P.recompute_state(tree, session, int(i)))


# -- joint and re-planning ---------------------------------------------------------


def test_joint_without_agents_is_plain_rrt_star():
    env = E.Environment(E.OccupancyMap.empty(60, 60), [5, 5], [50, 50], 3.0)
    cfg = P.PlannerConfig(iterations=300, seed=2)
    a, b = P.plan_joint(env, cfg), P.plan(env, None, cfg)
    np.testing.assert_array_equal(a.path, b.path)


def test_joint_agents_never_move_clockwise():
    env = E.gen_roundabout(3, 2)
    res = P.plan_joint(env, P.PlannerConfig(iterations=300, seed=1))
    tree = res.tree
    c = np.array(env.metadata["roundabout"]["center"])
    for i in range(1, tree.count):
        a, b = tree.configs[tree.parents[i]], tree.configs[i]
        for k in (1, 2):
            ta = math.atan2(a[2 * k + 1] - c[1], a[2 * k] - c[0])
            tb = math.atan2(b[2 * k + 1] - c[1], b[2 * k] - c[0])
            assert math.remainder(tb - ta, 2 * math.pi) >= 0


def test_replan_reports_collision():
    start = np.array([10.0, 10.0])
    agent = E.AgentTrack([[19.0, 19.0], start, start])
    env = E.Environment(E.OccupancyMap.empty(20, 20), start, [18.0, 2.0], 1.0, (agent,))
    out = P.replan_loop(env, None, P.PlannerConfig(step_radius=0.5), samples_per_step=20, safety_margin=0.0)
    assert out.collision and not out.success and out.steps == 1


def test_replan_timeout_and_success():
    env = E.Environment(E.OccupancyMap.empty(40, 40), [2, 2], [37, 37], 2.0)
    out = P.replan_loop(env, None, P.PlannerConfig(step_radius=5.0), samples_per_step=50, max_steps=2)
    assert out.timeout and not out.collision
    out = P.replan_loop(env, None, P.PlannerConfig(step_radius=5.0, goal_bias=0.2), samples_per_step=200, max_steps=40)
    assert out.success and env.in_goal(out.trajectory[-1])
    assert out.length >= math.dist(env.start, env.goal_center) - env.goal_radius
