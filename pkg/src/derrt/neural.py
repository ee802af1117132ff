"""Recurrent steering model: observation encoder, stacked GRU, Gaussian
proposal heads and the mixture with the RRT* target.

One recurrent step consumes the position of the node being expanded, the
RRT* target direction and an embedding of the local observation, and emits
a proposal over the displacement to the next node.  With agents present,
a weight-shared head adds one proposal per agent.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import env as envmod
from .numerics import autograd as ag
from .numerics.autograd import Tensor
from .numerics.gaussian import LOG_2PI, STD_FLOOR, DiagonalGaussian, logsumexp
from .numerics.params import dumps_params, loads_params
from .numerics.rng import rng_stream

OBS_KINDS = ("passage", "patch", "roundabout")
CONV_CODE_DIM = 576  # 64 channels x 3 x 3 after 21 -> 19 -> 9 -> 7 -> 3
# Binary patches have many all-free windows; a zero bias would park their
# ReLU pre-activations exactly on the kink.
CONV_BIAS = 0.01


@dataclass(frozen=True)
class ArchConfig:
    obs_kind: str = "passage"
    feature_dim: int = envmod.PASSAGE_FEATURE_DIM
    embed_dim: int = 32
    hidden: int = 32
    layers: int = 2
    agent_feature_dim: int = 0
    agent_embed_dim: int = 16
    step_radius: float = 10.0
    sigma_rrt: float = None  # defaults to step_radius / 2
    w_rrt: float = None  # None: uniform over all mixture components

    def __post_init__(self):
        if self.obs_kind not in OBS_KINDS:
            raise ValueError(f"unknown observation kind {self.obs_kind!r}")
        if self.sigma_rrt is None:
            object.__setattr__(self, "sigma_rrt", self.step_radius / 2.0)

    @property
    def encoder(self) -> str:
        return "conv" if self.obs_kind == "patch" else "features"

    @classmethod
    def for_env(cls, kind: str, step_radius: float, **kw) -> "ArchConfig":
        if kind == "passage":
            return cls("passage", envmod.PASSAGE_FEATURE_DIM, step_radius=step_radius, **kw)
        if kind == "bugtrap":
            return cls("patch", 0, step_radius=step_radius, **kw)
        if kind == "roundabout":
            return cls(
                "roundabout",
                envmod.ROUNDABOUT_LOCAL_DIM,
                agent_feature_dim=envmod.AGENT_FEATURE_DIM,
                step_radius=step_radius,
                **kw,
            )
        raise ValueError(f"no recurrent architecture for environment kind {kind!r}")


def _glorot(rng, fan_out, fan_in):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


def init_params(cfg: ArchConfig, seed: int = 0) -> dict:
    """Fresh parameter arrays for ``cfg`` (deterministic in ``seed``)."""
    rng = rng_stream(seed, 0x6A0)
    p = {}
    if cfg.encoder == "conv":
        p["conv1_w"] = rng.normal(0.0, math.sqrt(2.0 / 9), size=(32, 1, 3, 3))
        p["conv1_b"] = np.full(32, CONV_BIAS)
        p["conv2_w"] = rng.normal(0.0, math.sqrt(2.0 / (9 * 32)), size=(64, 32, 3, 3))
        p["conv2_b"] = np.full(64, CONV_BIAS)
        p["embed_w"] = _glorot(rng, cfg.embed_dim, CONV_CODE_DIM)
    else:
        p["embed_w"] = _glorot(rng, cfg.embed_dim, cfg.feature_dim)
    p["embed_b"] = np.zeros(cfg.embed_dim)
    in_dim = cfg.embed_dim + 4
    for layer in range(cfg.layers):
        H = cfg.hidden
        p[f"gru{layer}_wi"] = _glorot(rng, 3 * H, in_dim)
        p[f"gru{layer}_wh"] = _glorot(rng, 3 * H, H)
        p[f"gru{layer}_bi"] = np.zeros(3 * H)
        p[f"gru{layer}_bh"] = np.zeros(3 * H)
        in_dim = H
    std_bias = math.log(math.expm1(max(cfg.step_radius / 2.0 - STD_FLOOR, 1e-6)))
    p["head_w"] = 0.1 * _glorot(rng, 4, cfg.hidden)
    p["head_b"] = np.array([0.0, 0.0, std_bias, std_bias])
    if cfg.agent_feature_dim:
        p["agent_embed_w"] = _glorot(rng, cfg.agent_embed_dim, cfg.agent_feature_dim)
        p["agent_embed_b"] = np.zeros(cfg.agent_embed_dim)
        p["agent_head_w"] = 0.1 * _glorot(rng, 4, cfg.hidden + cfg.agent_embed_dim)
        p["agent_head_b"] = np.array([0.0, 0.0, std_bias, std_bias])
    return p


def init_buffers(cfg: ArchConfig) -> dict:
    """Non-trained input standardisation constants."""
    b = {}
    if cfg.encoder == "features":
        b["feat_mean"] = np.zeros(cfg.feature_dim)
        b["feat_scale"] = np.ones(cfg.feature_dim)
    if cfg.agent_feature_dim:
        b["agent_mean"] = np.zeros(cfg.agent_feature_dim)
        b["agent_scale"] = np.ones(cfg.agent_feature_dim)
    return b


def _std(raw):
    return ag.softplus(raw) + STD_FLOOR


class RecurrentSteeringModel:
    """GRU steering model.  Parameters live in ``self.params`` as autograd leaves."""

    def __init__(self, cfg: ArchConfig, params: dict = None, buffers: dict = None, seed: int = 0):
        self.cfg = cfg
        raw = init_params(cfg, seed) if params is None else params
        self.params = {k: Tensor(np.array(v, float), requires_grad=True, name=k) for k, v in raw.items()}
        self.buffers = init_buffers(cfg)
        if buffers:
            self.buffers.update({k: np.array(v, float) for k, v in buffers.items()})
        expected = set(init_params(cfg, 0))
        if set(self.params) != expected:
            raise ValueError(f"parameter names {sorted(self.params)} do not match architecture {sorted(expected)}")

    # -- bookkeeping ---------------------------------------------------------
    def state_dim(self) -> int:
        return self.cfg.layers * self.cfg.hidden

    def zero_state(self) -> np.ndarray:
        s = np.zeros((self.cfg.layers, self.cfg.hidden))
        s.setflags(write=False)
        return s

    def parameter_arrays(self) -> dict:
        return {k: t.data for k, t in self.params.items()}

    def to_bytes(self) -> bytes:
        table = dict(self.parameter_arrays())
        table.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return dumps_params(table)

    def manifest(self) -> dict:
        return {"version": 1, "kind": "recurrent", "arch": asdict(self.cfg)}

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        with open(manifest_path(path), "w") as fh:
            json.dump(self.manifest(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_bytes(cls, cfg: ArchConfig, blob: bytes) -> "RecurrentSteeringModel":
        table = loads_params(blob)
        params = {k: v for k, v in table.items() if not k.startswith("buffer:")}
        buffers = {k[len("buffer:"):]: v for k, v in table.items() if k.startswith("buffer:")}
        return cls(cfg, params, buffers)

    @classmethod
    def load(cls, path) -> "RecurrentSteeringModel":
        with open(manifest_path(path)) as fh:
            man = json.load(fh)
        if man.get("kind") != "recurrent":
            raise ValueError("manifest does not describe a recurrent model")
        with open(path, "rb") as fh:
            return cls.from_bytes(ArchConfig(**man["arch"]), fh.read())

    # -- differentiable pieces ----------------------------------------------
    def encode(self, obs) -> Tensor:
        """Embed a batch of observations: (N, F) features or (N, 21, 21) patches -> (N, E)."""
        P = self.params
        if self.cfg.encoder == "conv":
            x = np.asarray(obs, float).reshape(-1, 1, envmod.PATCH_SIZE, envmod.PATCH_SIZE)
            h = ag.maxpool2x2(ag.relu(ag.conv2d(x, P["conv1_w"], P["conv1_b"])))
            h = ag.maxpool2x2(ag.relu(ag.conv2d(h, P["conv2_w"], P["conv2_b"])))
            code = h.reshape(h.shape[0], CONV_CODE_DIM)
        else:
            feats = np.atleast_2d(np.asarray(obs, float))
            code = Tensor((feats - self.buffers["feat_mean"]) / self.buffers["feat_scale"])
        return ag.tanh(ag.matmul(code, _T(P["embed_w"])) + P["embed_b"])

    def _inputs(self, x_prev, mu, extent):
        x_prev = np.atleast_2d(np.asarray(x_prev, float))[:, :2]
        mu = np.atleast_2d(np.asarray(mu, float))[:, :2]
        return np.concatenate([x_prev / np.asarray(extent, float), (mu - x_prev) / self.cfg.step_radius], axis=1)

    def _gru(self, layer, u, h):
        P = self.params
        H = self.cfg.hidden
        gi = ag.matmul(u, _T(P[f"gru{layer}_wi"])) + P[f"gru{layer}_bi"]
        gh = ag.matmul(h, _T(P[f"gru{layer}_wh"])) + P[f"gru{layer}_bh"]
        r = ag.sigmoid(gi[..., :H] + gh[..., :H])
        z = ag.sigmoid(gi[..., H : 2 * H] + gh[..., H : 2 * H])
        n = ag.tanh(gi[..., 2 * H :] + r * gh[..., 2 * H :])
        return (1.0 - z) * n + z * h

    def recurrent_step(self, hs, u):
        """One step of the stacked GRU; ``hs`` is a list of per-layer (N, H) tensors."""
        out = []
        x = u
        for layer, h in enumerate(hs):
            x = self._gru(layer, x, h)
            out.append(x)
        return out

    def local_head(self, h_top):
        out = ag.matmul(h_top, _T(self.params["head_w"])) + self.params["head_b"]
        return out[..., :2], _std(out[..., 2:])

    def agent_head(self, h_top, agent_feats):
        """``h_top``: (N, H); ``agent_feats``: (N, F_a) -> means, stds of shape (N, 2)."""
        P = self.params
        z = (np.asarray(agent_feats, float) - self.buffers["agent_mean"]) / self.buffers["agent_scale"]
        e = ag.tanh(ag.matmul(Tensor(z), _T(P["agent_embed_w"])) + P["agent_embed_b"])
        out = ag.matmul(ag.concat([h_top, e], axis=1), _T(P["agent_head_w"])) + P["agent_head_b"]
        return out[..., :2], _std(out[..., 2:])

    # -- inference ------------------------------------------------------------
    def observe(self, env, x, t=0):
        x = np.asarray(x, float)[:2]
        kind = self.cfg.obs_kind
        if kind == "patch":
            return envmod.extract_patch(env, x, envmod.PATCH_SIZE)
        if kind == "passage":
            return envmod.passage_features(env, x)
        return envmod.roundabout_local_features_batch(env, x[None])[0]

    def step(self, state, x_prev, mu, obs_embedding, extent):
        """Advance the recurrent state by one tree edge.

        Returns ``(new_state, proposal)`` with ``proposal`` a
        :class:`DiagonalGaussian` over the displacement from ``x_prev``.
        """
        inputs = np.concatenate([np.asarray(obs_embedding, float).ravel(), self._inputs(x_prev, mu, extent)[0]])
        if not np.all(np.isfinite(inputs)) or not np.all(np.isfinite(state)):
            raise ValueError("non-finite recurrent inputs")
        hs = [Tensor(state[i][None]) for i in range(self.cfg.layers)]
        hs = self.recurrent_step(hs, Tensor(inputs[None]))
        new = np.stack([h.data[0] for h in hs])
        new.setflags(write=False)
        mean, std = self.local_head(hs[-1])
        return new, DiagonalGaussian(mean.data[0], np.log(std.data[0]))

    def agent_proposals(self, state, env, x_prev, t) -> list:
        """Per-agent proposals read from ``state``, the state *after* the step at ``x_prev``."""
        if not self.cfg.agent_feature_dim or not env.agents:
            return []
        feats = np.stack([envmod.agent_features(env, x_prev, t, i) for i in range(len(env.agents))])
        h = Tensor(np.repeat(state[-1][None], len(feats), axis=0))
        mean, std = self.agent_head(h, feats)
        return [DiagonalGaussian(mean.data[i], np.log(std.data[i])) for i in range(len(feats))]

    def mixture_weights(self, n_proposals: int) -> np.ndarray:
        n = n_proposals + 1
        if self.cfg.w_rrt is None:
            return np.full(n, 1.0 / n)
        w = np.full(n, (1.0 - self.cfg.w_rrt) / max(n_proposals, 1))
        w[-1] = self.cfg.w_rrt
        return w


def _T(w):
    return ag.transpose(w)


def manifest_path(path) -> str:
    return str(path) + ".json"


# ----------------------------------------------------------------------------
# public operations


def encode_observation(model: RecurrentSteeringModel, env, x, t=0) -> np.ndarray:
    return model.encode(model.observe(env, x, t)[None]).data[0]


def step(model: RecurrentSteeringModel, state, x_prev, mu, obs_embedding, extent):
    return model.step(state, x_prev, mu, obs_embedding, extent)


def per_agent_proposals(model: RecurrentSteeringModel, state, x_prev, mu, env, t=0) -> list:
    """Local proposal first, then one proposal per agent (shared weights)."""
    emb = encode_observation(model, env, x_prev, t)
    new_state, local = model.step(state, x_prev, mu, emb, env.map.extent)
    return [local] + model.agent_proposals(new_state, env, x_prev, t)


def clip_mean(g: DiagonalGaussian, r: float) -> DiagonalGaussian:
    n = float(np.linalg.norm(g.mean))
    if n <= r:
        return g
    return DiagonalGaussian(g.mean * (r / n), g.log_std)


def mixture_score(proposals, weights, mu, sigma_rrt, x_next, x_nearest) -> np.ndarray:
    """log of ``sum_i w_i N(x_next - x_nearest; proposal_i) + w_rrt N(x_next; mu, sigma_rrt)``.

    ``weights`` has one entry per proposal followed by the RRT* weight.
    ``x_next`` may be a single point or an (N, 2) stack.
    """
    if not proposals:
        raise ValueError("mixture needs at least one proposal")
    weights = np.asarray(weights, float)
    if weights.shape != (len(proposals) + 1,):
        raise ValueError("need one weight per proposal plus one for the RRT* component")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("mixture weights must sum to 1")
    x_next = np.asarray(x_next, float)
    single = x_next.ndim == 1
    x_next = np.atleast_2d(x_next)[:, :2]
    delta = x_next - np.asarray(x_nearest, float)[:2]
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    comps = [logw[i] + p.logpdf(delta) for i, p in enumerate(proposals)]
    rrt = DiagonalGaussian.from_std(np.asarray(mu, float)[:2], np.full(2, sigma_rrt))
    comps.append(logw[-1] + rrt.logpdf(x_next))
    out = logsumexp(np.stack(comps, axis=1), axis=1)
    return float(out[0]) if single else out


def _tensor_logpdf(x, mean, std):
    z = (Tensor(x) - mean) * ag.reciprocal(std)
    return -0.5 * ag.tsum(ag.square(z), axis=-1) - ag.tsum(ag.log(std), axis=-1) - LOG_2PI


def nll_loss(model: RecurrentSteeringModel, trace, extent) -> Tensor:
    """Negative log-likelihood of a trace under the mixture, as an autograd scalar.

    ``trace`` is a :class:`derrt.training.Trace`-like object with arrays
    ``x_prev``, ``x_next``, ``mu`` (T, 2), ``obs`` (T, ...) and optionally
    ``agent_obs`` (T, A, F_a).
    """
    T = len(trace.x_prev)
    if T == 0:
        raise ValueError("empty trace")
    cfg = model.cfg
    emb = model.encode(trace.obs)
    inputs = ag.concat([emb, Tensor(model._inputs(trace.x_prev, trace.mu, extent))], axis=1)
    hs = [Tensor(np.zeros((1, cfg.hidden))) for _ in range(cfg.layers)]
    tops = []
    for t in range(T):
        hs = model.recurrent_step(hs, inputs[t : t + 1])
        tops.append(hs[-1])
    top = ag.concat(tops, axis=0)  # T, H
    delta = np.asarray(trace.x_next, float)[:, :2] - np.asarray(trace.x_prev, float)[:, :2]
    mean, std = model.local_head(top)
    comps = [ag.reshape(_tensor_logpdf(delta, mean, std), (T, 1))]
    agent_obs = getattr(trace, "agent_obs", None)
    n_agents = 0
    if cfg.agent_feature_dim and agent_obs is not None and np.size(agent_obs):
        agent_obs = np.asarray(agent_obs, float)
        n_agents = agent_obs.shape[1]
        rows = np.repeat(np.arange(T), n_agents)
        am, asd = model.agent_head(top[rows], agent_obs.reshape(T * n_agents, -1))
        comps.append(ag.reshape(_tensor_logpdf(np.repeat(delta, n_agents, axis=0), am, asd), (T, n_agents)))
    weights = model.mixture_weights(1 + n_agents)
    rrt = DiagonalGaussian.from_std(np.zeros(2), np.full(2, cfg.sigma_rrt))
    rrt_lp = rrt.logpdf(np.asarray(trace.x_next, float)[:, :2] - np.asarray(trace.mu, float)[:, :2])
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    comps.append(Tensor(rrt_lp[:, None]))
    stacked = ag.concat(comps, axis=1) + np.maximum(logw, -1e30)
    return -ag.tsum(ag.logsumexp(stacked, axis=1))
