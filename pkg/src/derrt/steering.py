"""Adapters that let the planner drive either sequence model.

A steering model is bound to one environment snapshot, giving a session the
planner calls with opaque per-node states.  ``commit`` and ``advance`` go
through the same arithmetic, so a node's cached state always matches a
recomputation along its root path.
"""
import numpy as np

from . import env as envmod
from . import hmm
from .neural import RecurrentSteeringModel, clip_mean, mixture_score


def hmm_observations(kind, env, pts, t):
    """Environment features the HMM sees at each candidate point."""
    if kind == "passage":
        return envmod.passage_features_batch(env, pts)
    if kind == "roundabout":
        return envmod.nearest_agent_features_batch(env, pts, t)
    raise ValueError(f"no HMM feature set for environment kind {kind!r}")


class HmmSteering:
    def __init__(self, model: hmm.HmmModel, obs_kind: str = "passage"):
        self.model = model
        self.obs_kind = obs_kind

    def bind(self, env, t=0):
        return _HmmSession(self, env, t)


class _HmmSession:
    def __init__(self, owner, env, t):
        self.model = owner.model
        self.kind = owner.obs_kind
        self.env = env
        self.t = t

    def features(self, x_nearest, cands, mu):
        cands = np.atleast_2d(cands)
        obs = hmm_observations(self.kind, self.env, cands[:, :2], self.t)
        return np.column_stack([cands[:, :2] - np.asarray(mu)[:2], obs])

    def root_state(self, x):
        return hmm.forward_init(self.model)

    def score(self, state, x_nearest, mu, cands):
        return hmm.score_features(self.model, state, self.features(x_nearest, cands, mu)), None

    def commit(self, state, ctx, x_nearest, x_new, mu):
        return self.advance(state, x_nearest, x_new, mu)

    def advance(self, state, x_parent, x_child, mu):
        feat = self.features(x_parent, np.asarray(x_child)[None], mu)[0]
        return hmm.forward_step(self.model, state, feat)[0]

    @staticmethod
    def same_state(a, b, tol=1e-9):
        return a.steps == b.steps and np.allclose(a.log_alpha, b.log_alpha, atol=tol, rtol=0) and abs(a.loglik - b.loglik) <= tol


class RecurrentSteering:
    def __init__(self, model: RecurrentSteeringModel, w_rrt=None):
        self.model = model
        self.w_rrt = w_rrt

    def bind(self, env, t=0):
        return _RecurrentSession(self, env, t)


class _RecurrentSession:
    def __init__(self, owner, env, t):
        self.model = owner.model
        self.w_rrt = owner.w_rrt
        self.env = env
        self.t = t
        self.extent = env.map.extent
        self.r = self.model.cfg.step_radius
        self._emb = {}

    def embedding(self, x):
        key = np.asarray(x, float)[:2].tobytes()
        e = self._emb.get(key)
        if e is None:
            obs = self.model.observe(self.env, x, self.t)
            e = self.model.encode(np.asarray(obs)[None]).data[0]
            self._emb[key] = e
        return e

    def root_state(self, x):
        return self.model.zero_state()

    def _step(self, state, x_prev, mu):
        return self.model.step(state, x_prev, mu, self.embedding(x_prev), self.extent)

    def proposals(self, state, x_nearest, mu):
        new_state, local = self._step(state, x_nearest, mu)
        props = [local] + self.model.agent_proposals(new_state, self.env, x_nearest, self.t)
        return new_state, [clip_mean(p, self.r) for p in props]

    def weights(self, n_props):
        if self.w_rrt is None:
            return self.model.mixture_weights(n_props)
        w = np.full(n_props + 1, (1.0 - self.w_rrt) / n_props)
        w[-1] = self.w_rrt
        return w

    def score(self, state, x_nearest, mu, cands):
        new_state, props = self.proposals(state, x_nearest, mu)
        scores = mixture_score(props, self.weights(len(props)), mu, self.model.cfg.sigma_rrt, cands, x_nearest)
        return np.atleast_1d(scores), new_state

    def commit(self, state, ctx, x_nearest, x_new, mu):
        return ctx

    def advance(self, state, x_parent, x_child, mu):
        return self._step(state, x_parent, mu)[0]

    @staticmethod
    def same_state(a, b, tol=0.0):
        return np.array_equal(a, b)


def make_steering(model, env_kind: str, w_rrt=None):
    if model is None:
        return None
    if isinstance(model, hmm.HmmModel):
        return HmmSteering(model, env_kind)
    if isinstance(model, RecurrentSteeringModel):
        return RecurrentSteering(model, w_rrt)
    if hasattr(model, "bind"):
        return model
    raise TypeError(f"unsupported steering model {type(model).__name__}")
