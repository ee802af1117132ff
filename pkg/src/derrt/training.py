"""Trace harvesting from baseline RRT* runs and the two training pipelines."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import env as envmod
from . import hmm
from .neural import ArchConfig, RecurrentSteeringModel, manifest_path, nll_loss
from .numerics.autograd import backward
from .numerics.optim import SGD
from .numerics.params import load_params, save_params
from .numerics.rng import derive_seed, rng_stream
from .planner import PlannerConfig, plan, sample_free, steer_baseline
from .steering import hmm_observations

log = logging.getLogger(__name__)

TRACE_FORMAT = "derrt-traces"
TRACE_VERSION = 1


class EmptyDatasetError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class TraceStep(NamedTuple):
    x_prev: np.ndarray
    x_next: np.ndarray
    mu: np.ndarray
    obs: np.ndarray
    t: int


@dataclass
class Trace:
    """One successful plan as parallel per-step arrays.

    ``obs`` is the observation at ``x_prev`` (what the recurrent model reads),
    ``next_obs`` the HMM environment features at ``x_next`` (empty for patch
    observations) and ``agent_obs`` the per-agent features at ``x_prev``.
    """

    x_prev: np.ndarray
    x_next: np.ndarray
    mu: np.ndarray
    obs: np.ndarray
    next_obs: np.ndarray
    t: np.ndarray
    agent_obs: np.ndarray = None
    env_seed: int = 0
    extent: tuple = (1.0, 1.0)

    def __len__(self):
        return len(self.x_prev)

    def steps(self):
        for i in range(len(self)):
            yield TraceStep(self.x_prev[i], self.x_next[i], self.mu[i], self.obs[i], int(self.t[i]))

    def hmm_features(self) -> np.ndarray:
        return np.column_stack([self.x_next - self.mu, self.next_obs])


@dataclass
class TraceDataset:
    kind: str
    traces: list
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.traces)

    @property
    def obs_kind(self) -> str:
        return {"bugtrap": "patch"}.get(self.kind, self.kind)


# ----------------------------------------------------------------------------
# harvesting


def trace_from_path(env, path, rng, r, t=0) -> Trace:
    """Turn a solution path into a trace.

    The RRT* target for each step is recomputed from a fresh uniform free
    sample, i.e. what the baseline steer would have proposed at that node.
    """
    path = np.asarray(path, float)[:, :2]
    x_prev, x_next = path[:-1], path[1:]
    cfg = PlannerConfig(step_radius=r, goal_bias=0.0)
    mu = np.array([steer_baseline(p, sample_free(env, rng, cfg, t), r) for p in x_prev]).reshape(-1, 2)
    kind = env.kind
    if kind == "bugtrap":
        obs = np.stack([envmod.extract_patch(env, p) for p in x_prev]) if len(x_prev) else np.zeros((0, 21, 21), np.uint8)
        next_obs = np.zeros((len(x_prev), 0))
    elif kind == "passage":
        obs = envmod.passage_features_batch(env, x_prev) if len(x_prev) else np.zeros((0, 4))
        next_obs = hmm_observations(kind, env, x_next, t) if len(x_prev) else np.zeros((0, 4))
    elif kind == "roundabout":
        obs = envmod.roundabout_local_features_batch(env, x_prev)
        next_obs = hmm_observations(kind, env, x_next, t)
    else:
        raise ValueError(f"cannot harvest traces from environment kind {kind!r}")
    agent_obs = None
    if env.agents:
        agent_obs = np.stack([envmod.agent_features_batch(env, x_prev, t, i) for i in range(len(env.agents))], axis=1)
    return Trace(
        x_prev.copy(), x_next.copy(), mu, obs, next_obs, np.full(len(x_prev), t, dtype=int),
        agent_obs, int(env.metadata.get("seed", 0)), tuple(float(v) for v in env.map.extent),
    )


@dataclass(frozen=True)
class CollectConfig:
    kind: str = "passage"
    n_envs: int = 50
    budget: int = 3000
    seed: int = 0
    step_radius: float = 10.0
    goal_bias: float = 0.05
    runs_per_env: int = 1
    max_agents: int = 4
    width: int = 300
    height: int = 300
    narrowing: float = 1.0


def make_env(kind, env_seed, cc: CollectConfig, n_agents=None):
    if kind == "passage":
        return envmod.gen_narrow_passage(env_seed, cc.width, cc.height, envmod.PassageParams(narrowing=cc.narrowing))
    if kind == "bugtrap":
        return envmod.gen_bugtrap(env_seed)
    if kind == "roundabout":
        if n_agents is None:
            n_agents = 1 + int(rng_stream(env_seed, 7).integers(cc.max_agents))
        return envmod.gen_roundabout(env_seed, n_agents)
    raise ValueError(f"unknown environment kind {kind!r}")


def planning_view(env):
    """Environment as the planner sees it: agents inflated by their per-step motion."""
    margin = float(env.metadata.get("agent_max_step", 0.0))
    if not env.agents or margin == 0.0:
        return env
    return envmod.Environment(env.map, env.start, env.goal_center, env.goal_radius, env.agents, env.metadata,
                              env.robot_radius + margin)


def collect_traces(cc: CollectConfig, target=None) -> TraceDataset:
    """Run baseline RRT* on ``cc.n_envs`` generated maps and keep successful paths.

    With ``target`` set, maps keep being generated until that many traces
    exist (bounded by ``10 * target`` maps).
    """
    traces = []
    seeds = []
    max_envs = cc.n_envs if target is None else max(cc.n_envs, 10 * target)
    i = 0
    while i < max_envs and (target is None and i < cc.n_envs or target is not None and len(traces) < target):
        env_seed = derive_seed(cc.seed, 0x7ACE, i)
        env = make_env(cc.kind, env_seed, cc)
        view = planning_view(env)
        for run in range(cc.runs_per_env):
            pcfg = PlannerConfig(step_radius=cc.step_radius, iterations=cc.budget, goal_bias=cc.goal_bias,
                                 seed=derive_seed(env_seed, run))
            res = plan(view, None, pcfg)
            if res.success and len(res.path) >= 2:
                rng = rng_stream(derive_seed(env_seed, run), 0x3E)
                traces.append(trace_from_path(view, res.path, rng, cc.step_radius))
                seeds.append(env_seed)
                if target is not None and len(traces) >= target:
                    break
        i += 1
    if not traces:
        raise EmptyDatasetError(f"no successful plans in {i} {cc.kind} environments")
    manifest = {"generator": cc.kind, "env_seeds": seeds, "collect": asdict(cc)}
    return TraceDataset(cc.kind, traces, manifest)


# ----------------------------------------------------------------------------
# serialisation


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def dataset_to_lines(ds: TraceDataset):
    header = {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "kind": ds.kind,
        "obs_kind": ds.obs_kind,
        "manifest": ds.manifest,
    }
    yield json.dumps(header, sort_keys=True)
    for tr in ds.traces:
        rec = {
            "env_seed": tr.env_seed,
            "extent": list(tr.extent),
            "x_prev": _arr(tr.x_prev),
            "x_next": _arr(tr.x_next),
            "mu": _arr(tr.mu),
            "t": _arr(tr.t),
            "next_obs": _arr(tr.next_obs),
            "agent_obs": _arr(tr.agent_obs),
        }
        if ds.obs_kind == "patch":
            rec["obs"] = [envmod.rle_encode(p) for p in tr.obs]
        else:
            rec["obs"] = _arr(tr.obs)
        yield json.dumps(rec, sort_keys=True)


def dataset_from_lines(lines) -> TraceDataset:
    it = iter(lines)
    header = json.loads(next(it))
    if header.get("format") != TRACE_FORMAT or header.get("version") != TRACE_VERSION:
        raise ValueError("not a trace dataset (bad header)")
    kind = header["kind"]
    traces = []
    for line in it:
        if not line.strip():
            continue
        rec = json.loads(line)
        T = len(rec["x_prev"])
        if header["obs_kind"] == "patch":
            size = envmod.PATCH_SIZE
            obs = np.array([envmod.rle_decode(p, size * size).reshape(size, size) for p in rec["obs"]], np.uint8)
            obs = obs.reshape(T, size, size)
        else:
            obs = np.array(rec["obs"], float).reshape(T, -1)
        traces.append(Trace(
            np.array(rec["x_prev"], float).reshape(T, 2),
            np.array(rec["x_next"], float).reshape(T, 2),
            np.array(rec["mu"], float).reshape(T, 2),
            obs,
            np.array(rec["next_obs"], float).reshape(T, -1),
            np.array(rec["t"], int),
            None if rec.get("agent_obs") is None else np.array(rec["agent_obs"], float),
            rec["env_seed"],
            tuple(rec["extent"]),
        ))
    return TraceDataset(kind, traces, header.get("manifest", {}))


def save_dataset(ds: TraceDataset, path) -> None:
    with open(path, "w") as fh:
        for line in dataset_to_lines(ds):
            fh.write(line + "\n")


def load_dataset(path) -> TraceDataset:
    with open(path) as fh:
        return dataset_from_lines(fh)


# ----------------------------------------------------------------------------
# training


def _check_schema(ds: TraceDataset):
    if not ds.traces:
        raise EmptyDatasetError("dataset has no traces")
    shapes = {tr.obs.shape[1:] for tr in ds.traces}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent observation shapes {shapes}")


def train_hmm(ds: TraceDataset, n_states=3, seed=0, max_iters=100, tol=1e-6) -> hmm.HmmModel:
    """EM-fit an HMM to the dataset's ``[x_next - mu, env features]`` sequences."""
    _check_schema(ds)
    seqs = [tr.hmm_features() for tr in ds.traces if len(tr) >= 2]
    if not seqs:
        raise EmptyDatasetError("every trace is shorter than two steps")
    return hmm.em_fit(seqs, n_states, seed, max_iters, tol)


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 20
    clip_norm: float = 10.0
    gradient_check: bool = True


def fit_standardisation(model: RecurrentSteeringModel, ds: TraceDataset):
    cfg = model.cfg
    if cfg.encoder == "features":
        X = np.concatenate([tr.obs for tr in ds.traces])
        scale = X.std(axis=0)
        model.buffers["feat_mean"] = X.mean(axis=0)
        model.buffers["feat_scale"] = np.where(scale > 1e-6, scale, 1.0)
    if cfg.agent_feature_dim:
        A = [tr.agent_obs.reshape(-1, cfg.agent_feature_dim) for tr in ds.traces if tr.agent_obs is not None]
        if A:
            A = np.concatenate(A)
            scale = A.std(axis=0)
            model.buffers["agent_mean"] = A.mean(axis=0)
            model.buffers["agent_scale"] = np.where(scale > 1e-6, scale, 1.0)


def gradient_check(model: RecurrentSteeringModel, trace: Trace, h=1e-5, per_tensor=3, seed=0, floor=1e-4):
    """Largest relative error between autograd and central differences over sampled coordinates.

    The error is ``|fd - g| / max(|fd|, |g|, floor)``: below ``floor`` the
    finite difference is dominated by roundoff (about ``eps * |loss| / h``),
    so tiny gradients are compared on an absolute scale instead.
    ``per_tensor=None`` checks every coordinate.  Returns ``(max_rel_err, n_checked)``.
    """
    rng = rng_stream(seed, 0x6C)
    for p in model.params.values():
        p.grad = None
    loss = nll_loss(model, trace, trace.extent)
    backward(loss)
    worst, n = 0.0, 0
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        if per_tensor is None:
            picks = range(flat.size)
        else:
            picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for j in picks:
            orig = flat[j]
            flat[j] = orig + h
            up = nll_loss(model, trace, trace.extent).item()
            flat[j] = orig - h
            down = nll_loss(model, trace, trace.extent).item()
            flat[j] = orig
            fd = (up - down) / (2 * h)
            err = abs(fd - grad[j]) / max(abs(fd), abs(grad[j]), floor)
            worst = max(worst, err)
            n += 1
    for p in model.params.values():
        p.grad = None
    return worst, n


@dataclass
class TrainingLog:
    epoch_loss: list = field(default_factory=list)
    initial_loss: float = float("nan")
    gradient_check_error: float = float("nan")


def dataset_loss(model, ds) -> float:
    return float(sum(nll_loss(model, tr, tr.extent).item() for tr in ds.traces))


def train_recurrent(ds: TraceDataset, arch: ArchConfig, opt: OptimConfig = OptimConfig(), seed=0):
    """SGD on the mixture negative log-likelihood, one trace per update.

    Returns ``(model, log)``.  Raises :class:`TrainingError` if the gradient
    check gate fails or the loss becomes non-finite.
    """
    _check_schema(ds)
    model = RecurrentSteeringModel(arch, seed=seed)
    fit_standardisation(model, ds)
    tlog = TrainingLog()
    if opt.gradient_check:
        probe = min(ds.traces, key=len)
        short = Trace(*(getattr(probe, f)[:3] if getattr(probe, f) is not None and f not in ("env_seed", "extent") else getattr(probe, f)
                        for f in ("x_prev", "x_next", "mu", "obs", "next_obs", "t", "agent_obs", "env_seed", "extent")))
        err, _ = gradient_check(model, short, seed=seed)
        tlog.gradient_check_error = err
        if err > 1e-4:
            raise TrainingError(f"gradient check failed: relative error {err:.3g}")
    tlog.initial_loss = dataset_loss(model, ds)
    sgd = SGD(list(model.params.values()), lr=opt.lr, momentum=opt.momentum, clip_norm=opt.clip_norm)
    rng = rng_stream(seed, 0x5D)
    for epoch in range(opt.epochs):
        total = 0.0
        for idx in rng.permutation(len(ds.traces)):
            tr = ds.traces[idx]
            sgd.zero_grad()
            loss = nll_loss(model, tr, tr.extent)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, trace {idx}")
            backward(loss)
            sgd.step()
            total += loss.item()
        tlog.epoch_loss.append(total)
        log.info("epoch %d loss %.4f", epoch, total)
    sgd.zero_grad()
    return model, tlog


# ----------------------------------------------------------------------------
# model files


def save_model(model, path) -> None:
    """Write a trained model as a parameter file plus a ``<path>.json`` manifest."""
    if isinstance(model, hmm.HmmModel):
        save_params(path, model.to_params())
        with open(manifest_path(path), "w") as fh:
            json.dump({"version": 1, "kind": "hmm", "n_states": model.n_states, "n_features": model.n_features},
                      fh, sort_keys=True, indent=1)
            fh.write("\n")
    elif isinstance(model, RecurrentSteeringModel):
        model.save(path)
    else:
        raise TypeError(f"cannot save {type(model).__name__}")


def load_model(path):
    """Load either model kind, dispatching on the manifest next to ``path``."""
    try:
        with open(manifest_path(path)) as fh:
            kind = json.load(fh).get("kind")
    except FileNotFoundError:
        raise FileNotFoundError(f"model manifest {path}.json not found") from None
    if kind == "hmm":
        return hmm.HmmModel.from_params(load_params(path))
    if kind == "recurrent":
        return RecurrentSteeringModel.load(path)
    raise ValueError(f"unknown model kind {kind!r} in {path}.json")
