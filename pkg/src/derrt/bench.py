"""Benchmark harness for the narrow-passage, bug-trap and roundabout experiments.

Every trial draws its randomness from ``rng_stream(seed, trial_id)`` and
records are sorted by trial id before aggregation, so reports do not depend
on how trials were scheduled.  Wall-clock times are measured but only
written to JSON when asked for, which keeps reports byte-identical across
runs.
"""
import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import env as envmod
from .hmm import HmmModel
from .neural import ArchConfig, RecurrentSteeringModel
from .numerics.rng import derive_seed, rng_stream
from .planner import PlannerConfig, plan, replan_loop
from .training import CollectConfig, OptimConfig, collect_traces, train_hmm, train_recurrent

REPORT_VERSION = 1
BOOTSTRAP_RESAMPLES = 1000

RRT = "rrt*"
HMM = "derrt*/hmm"
GRU = "derrt*/gru"
JOINT = "rrt*-joint"
PLANNERS = (RRT, HMM, GRU, JOINT)

# stream keys keep training maps, test maps and bootstrap draws disjoint
_TRAIN, _TEST, _BOOT = 0x7A, 0x7E, 0xB0


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    planner: str
    success: bool
    path_length: float = None
    proposed: int = 0
    valid: int = 0
    wall_time: float = 0.0
    group: dict = field(default_factory=dict)

    def to_dict(self, wall_time=False) -> dict:
        d = {
            "trial_id": self.trial_id,
            "seed": self.seed,
            "planner": self.planner,
            "success": bool(self.success),
            "path_length": _num(self.path_length) if self.success else None,
            "proposed": int(self.proposed),
            "valid": int(self.valid),
        }
        d.update(self.group)
        if wall_time:
            d["wall_time"] = self.wall_time
        return d


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def bootstrap_std(successes, seed, resamples=BOOTSTRAP_RESAMPLES) -> float:
    """Standard deviation of the success rate over seeded bootstrap resamples of the trials."""
    s = np.asarray(successes, float)
    if s.size == 0:
        return float("nan")
    rng = rng_stream(seed, _BOOT)
    idx = rng.integers(0, s.size, size=(resamples, s.size))
    return float(s[idx].mean(axis=1).std())


def aggregate(records, seed) -> dict:
    """Summary statistics for one planner/group; path statistics use successful trials only."""
    succ = [r.success for r in records]
    lengths = np.array([r.path_length for r in records if r.success], float)
    proposed = sum(r.proposed for r in records)
    valid = sum(r.valid for r in records)
    per_trial_valid = [r.valid / r.proposed for r in records if r.proposed]
    out = {
        "trials": len(records),
        "successes": int(sum(succ)),
        "success_rate": float(np.mean(succ)) if records else None,
        "success_std": bootstrap_std(succ, seed),
        "path_mean": float(lengths.mean()) if lengths.size else None,
        "path_stderr": float(lengths.std(ddof=1) / math.sqrt(lengths.size)) if lengths.size > 1 else None,
        "path_median": float(np.median(lengths)) if lengths.size else None,
        "valid_proportion": valid / proposed if proposed else None,
        "valid_proportion_median": float(np.median(per_trial_valid)) if per_trial_valid else None,
    }
    return out


@dataclass
class BenchmarkReport:
    experiment: str
    records: list
    config: dict
    seed: int
    metadata: dict = field(default_factory=dict)
    group_keys: tuple = ()

    def __post_init__(self):
        if not self.records:
            raise ValueError("a benchmark report needs at least one trial")
        self.records = sorted(self.records, key=lambda r: (r.trial_id, r.planner, tuple(sorted(r.group.items()))))

    def groups(self):
        """Records keyed by (planner, group values), in first-seen order."""
        out = {}
        for r in self.records:
            key = (r.planner,) + tuple(r.group.get(k) for k in self.group_keys)
            out.setdefault(key, []).append(r)
        return out

    def aggregates(self) -> list:
        rows = []
        for n, (key, recs) in enumerate(self.groups().items()):
            row = {"planner": key[0]}
            row.update(zip(self.group_keys, key[1:]))
            row.update(aggregate(recs, derive_seed(self.seed, n)))
            rows.append(row)
        return rows

    def row(self, planner, **group) -> dict:
        for r in self.aggregates():
            if r["planner"] == planner and all(r.get(k) == v for k, v in group.items()):
                return r
        raise KeyError((planner, group))

    def to_dict(self, wall_time=False) -> dict:
        return {
            "schema": "derrt-benchmark",
            "version": REPORT_VERSION,
            "experiment": self.experiment,
            "seed": self.seed,
            "config": self.config,
            "metadata": self.metadata,
            "aggregates": self.aggregates(),
            "records": [r.to_dict(wall_time) for r in self.records],
        }

    def to_json(self, wall_time=False) -> str:
        return json.dumps(_jsonable(self.to_dict(wall_time)), indent=2, sort_keys=True, allow_nan=False)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


PATH_NOTE = "path statistics average successful trials only; success_std is a seeded bootstrap over trials"


def worker_count() -> int:
    cap = os.environ.get("DERRT_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"DERRT_THREADS must be an integer, got {cap!r}") from None
    return n


def run_trials(fn, jobs):
    """Apply ``fn`` to every job, in a process pool when more than one worker is allowed."""
    jobs = list(jobs)
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _timed_plan(env, model, pcfg, rng):
    t0 = time.perf_counter()
    res = plan(env, model, pcfg, rng=rng)
    return res, time.perf_counter() - t0


# ----------------------------------------------------------------------------
# narrow passage


@dataclass(frozen=True)
class PassageBenchConfig:
    rounds: int = 50
    samples: int = 600
    seed: int = 1
    step_radius: float = 20.0
    goal_radius: float = 15.0
    narrowing: float = 0.4
    width: int = 600
    height: int = 300
    goal_bias: float = 0.0
    planners: tuple = (RRT, HMM, GRU)
    train_traces: int = 50
    train_budget: int = 3000
    hmm_states: int = 3
    gru_epochs: int = 5


def passage_test_env(cfg: PassageBenchConfig, round_id: int):
    params = envmod.PassageParams(narrowing=cfg.narrowing, goal_radius=cfg.goal_radius)
    return envmod.gen_narrow_passage(derive_seed(cfg.seed, _TEST, round_id), cfg.width, cfg.height, params)


def passage_training_set(cfg: PassageBenchConfig, seed=None):
    """Baseline traces on 300 x 300 training maps with the unnarrowed passage."""
    cc = CollectConfig(
        kind="passage",
        n_envs=cfg.train_traces,
        budget=cfg.train_budget,
        seed=derive_seed(cfg.seed if seed is None else seed, _TRAIN),
        step_radius=cfg.step_radius,
    )
    return collect_traces(cc, target=cfg.train_traces)


def _passage_trial(job):
    cfg, models, planner, round_id = job
    env = passage_test_env(cfg, round_id)
    pcfg = PlannerConfig(step_radius=cfg.step_radius, iterations=cfg.samples, goal_bias=cfg.goal_bias,
                         seed=derive_seed(cfg.seed, round_id))
    res, dt = _timed_plan(env, models.get(planner), pcfg, rng_stream(cfg.seed, round_id))
    return TrialRecord(round_id, pcfg.seed, planner, res.success, res.length, res.proposed, res.valid, dt)


def train_passage_models(cfg: PassageBenchConfig, planners=None):
    planners = cfg.planners if planners is None else planners
    models = {}
    if HMM in planners or GRU in planners:
        ds = passage_training_set(cfg)
        if HMM in planners:
            models[HMM] = train_hmm(ds, cfg.hmm_states, seed=cfg.seed)
        if GRU in planners:
            arch = ArchConfig.for_env("passage", cfg.step_radius)
            models[GRU], _ = train_recurrent(ds, arch, OptimConfig(epochs=cfg.gru_epochs), seed=cfg.seed)
    return models


def _check_models(planners, models, allowed):
    for p in planners:
        if p not in allowed:
            raise ValueError(f"planner {p!r} is not available in this experiment")
        if p in (HMM, GRU) and models.get(p) is None:
            raise ValueError(f"no trained model supplied for planner {p!r}")


def run_passage(cfg: PassageBenchConfig = PassageBenchConfig(), models=None) -> BenchmarkReport:
    """Success rate of each planner on ``cfg.rounds`` narrowed 600 x 300 test maps.

    ``models`` maps planner names to trained models; missing ones are
    trained in-run from harvested traces unless ``models`` is given
    explicitly, in which case a missing model is an error.
    """
    if models is None:
        models = train_passage_models(cfg)
    _check_models(cfg.planners, models, (RRT, HMM, GRU))
    jobs = [(cfg, models, p, i) for i in range(cfg.rounds) for p in cfg.planners]
    records = run_trials(_passage_trial, jobs)
    meta = {"narrowing": cfg.narrowing, "note": PATH_NOTE, "training_map": [300, 300],
            "test_map": [cfg.width, cfg.height]}
    return BenchmarkReport("passage", records, _jsonable(asdict(cfg)), cfg.seed, meta)


# ----------------------------------------------------------------------------
# bug trap


@dataclass(frozen=True)
class BugtrapBenchConfig:
    seeds: int = 10
    steps: int = 2000
    seed: int = 1
    step_radius: float = 5.0
    goal_bias: float = 0.0
    checkpoint_every: int = 100
    planners: tuple = (RRT, GRU)
    train_traces: int = 200
    train_budget: int = 4000
    harvest_runs: int = 2
    gru_epochs: int = 3
    keep_trees: bool = False


def bugtrap_test_env(cfg: BugtrapBenchConfig, trial_id: int):
    return envmod.gen_bugtrap(derive_seed(cfg.seed, _TEST, trial_id))


def bugtrap_training_set(cfg: BugtrapBenchConfig):
    cc = CollectConfig(
        kind="bugtrap",
        n_envs=cfg.train_traces,
        budget=cfg.train_budget,
        seed=derive_seed(cfg.seed, _TRAIN),
        step_radius=cfg.step_radius,
        runs_per_env=cfg.harvest_runs,
    )
    return collect_traces(cc, target=cfg.train_traces)


def train_bugtrap_model(cfg: BugtrapBenchConfig, ds=None):
    ds = bugtrap_training_set(cfg) if ds is None else ds
    arch = ArchConfig.for_env("bugtrap", cfg.step_radius)
    model, _ = train_recurrent(ds, arch, OptimConfig(epochs=cfg.gru_epochs), seed=cfg.seed)
    return model


@dataclass
class Curves:
    """Best solution length and valid-move proportion at each checkpoint."""

    rows: list = field(default_factory=list)  # (planner, trial_id, samples, best_length, valid_proportion)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["planner", "trial", "samples", "best_length", "valid_proportion"])
            for p, t, n, length, vp in self.rows:
                w.writerow([p, t, n, "" if length is None else repr(float(length)), repr(float(vp))])

    def median(self, planner, samples, column="valid_proportion"):
        col = 4 if column == "valid_proportion" else 3
        vals = [r[col] for r in self.rows if r[0] == planner and r[2] == samples and r[col] is not None]
        return float(np.median(vals)) if vals else None


def _bugtrap_trial(job):
    cfg, models, planner, trial_id = job
    env = bugtrap_test_env(cfg, trial_id)
    marks = tuple(range(cfg.checkpoint_every, cfg.steps + 1, cfg.checkpoint_every)) if cfg.checkpoint_every else ()
    pcfg = PlannerConfig(step_radius=cfg.step_radius, iterations=cfg.steps, goal_bias=cfg.goal_bias,
                         seed=derive_seed(cfg.seed, trial_id), checkpoints=marks)
    res, dt = _timed_plan(env, models.get(planner), pcfg, rng_stream(cfg.seed, trial_id))
    rec = TrialRecord(trial_id, pcfg.seed, planner, res.success, res.length, res.proposed, res.valid, dt)
    nodes = res.tree.configs[: len(res.tree), :2].copy() if cfg.keep_trees else None
    return rec, [(planner, trial_id, n, length, vp) for n, length, vp in res.curve], nodes


def run_bugtrap(cfg: BugtrapBenchConfig = BugtrapBenchConfig(), models=None):
    """Returns ``(report, curves, trees)``; ``trees`` holds node arrays when ``keep_trees`` is set."""
    if models is None:
        models = {GRU: train_bugtrap_model(cfg)} if GRU in cfg.planners else {}
    _check_models(cfg.planners, models, (RRT, GRU))
    jobs = [(cfg, models, p, i) for i in range(cfg.seeds) for p in cfg.planners]
    out = run_trials(_bugtrap_trial, jobs)
    curves = Curves(sorted((row for _, rows, _ in out for row in rows), key=lambda r: (r[0], r[1], r[2])))
    trees = {}
    for rec, _, nodes in out:
        if nodes is not None:
            trees.setdefault(rec.planner, []).append(nodes)
    meta = {"note": PATH_NOTE, "runs_per_point": cfg.seeds}
    report = BenchmarkReport("bugtrap", [r for r, _, _ in out], _jsonable(asdict(cfg)), cfg.seed, meta)
    return report, curves, trees


# ----------------------------------------------------------------------------
# roundabout


@dataclass(frozen=True)
class RoundaboutBenchConfig:
    trials: int = 20
    agent_counts: tuple = (2, 4, 6, 8)
    planners: tuple = PLANNERS
    samples_per_step: int = 100
    max_steps: int = 60
    step_radius: float = 5.0
    seed: int = 1
    goal_bias: float = 0.0
    joint_max_agents: int = 6  # beyond this the joint planner is not run (reported as null)
    joint_wall_time: bool = False  # match DeRRT*/GRU wall time per re-plan instead of sample count
    train_envs: int = 200
    train_traces: int = 600
    train_budget: int = 1500
    hmm_states: int = 3
    gru_epochs: int = 10


def roundabout_test_env(cfg, trial_id, n_agents):
    return envmod.gen_roundabout(derive_seed(cfg.seed, _TEST, n_agents, trial_id), n_agents)


def roundabout_training_set(cfg: RoundaboutBenchConfig):
    runs = max(1, math.ceil(cfg.train_traces / max(1, cfg.train_envs)))
    cc = CollectConfig(kind="roundabout", n_envs=cfg.train_envs, budget=cfg.train_budget,
                       seed=derive_seed(cfg.seed, _TRAIN), step_radius=cfg.step_radius, runs_per_env=runs)
    return collect_traces(cc, target=cfg.train_traces)


def train_roundabout_models(cfg: RoundaboutBenchConfig, planners=None):
    planners = cfg.planners if planners is None else planners
    models = {}
    if HMM in planners or GRU in planners:
        ds = roundabout_training_set(cfg)
        if HMM in planners:
            models[HMM] = train_hmm(ds, cfg.hmm_states, seed=cfg.seed)
        if GRU in planners:
            arch = ArchConfig.for_env("roundabout", cfg.step_radius)
            models[GRU], _ = train_recurrent(ds, arch, OptimConfig(epochs=cfg.gru_epochs), seed=cfg.seed)
    return models


def _roundabout_trial(job):
    cfg, models, planner, trial_id, n_agents, wall_budget = job
    env = roundabout_test_env(cfg, trial_id, n_agents)
    pcfg = PlannerConfig(step_radius=cfg.step_radius, goal_bias=cfg.goal_bias,
                         seed=derive_seed(cfg.seed, n_agents, trial_id))
    samples = cfg.samples_per_step
    if planner == JOINT and wall_budget is not None:
        pcfg = replace(pcfg, time_budget=wall_budget)
        samples = 100 * cfg.samples_per_step
    t0 = time.perf_counter()
    out = replan_loop(env, models.get(planner), pcfg, samples, joint=planner == JOINT, max_steps=cfg.max_steps)
    dt = time.perf_counter() - t0
    return TrialRecord(trial_id, pcfg.seed, planner, out.success, out.length, out.proposed, out.valid, dt,
                       {"agents": n_agents}), out.steps


def run_roundabout(cfg: RoundaboutBenchConfig = RoundaboutBenchConfig(), models=None) -> BenchmarkReport:
    """Re-planning success and path length for every (agent count, planner) pair.

    With ``joint_wall_time`` the joint planner gets, per re-plan, the mean
    per-re-plan wall time DeRRT*/GRU used on the same map; that mode is not
    bit-reproducible.  The joint planner is skipped above
    ``joint_max_agents`` and its row reports null statistics.
    """
    if models is None:
        models = train_roundabout_models(cfg)
    _check_models(cfg.planners, models, PLANNERS)
    records = []
    skipped = []
    for n_agents in cfg.agent_counts:
        step_time = {}
        for planner in [p for p in cfg.planners if p != JOINT]:
            jobs = [(cfg, models, planner, i, n_agents, None) for i in range(cfg.trials)]
            for rec, steps in run_trials(_roundabout_trial, jobs):
                records.append(rec)
                if planner == GRU:
                    step_time[rec.trial_id] = rec.wall_time / max(1, steps)
        if JOINT in cfg.planners:
            if n_agents > cfg.joint_max_agents:
                skipped.append(n_agents)
                continue
            if cfg.joint_wall_time and not step_time:
                raise ValueError("joint_wall_time needs the DeRRT*/GRU planner in the same run")
            jobs = [(cfg, models, JOINT, i, n_agents, step_time.get(i) if cfg.joint_wall_time else None)
                    for i in range(cfg.trials)]
            records.extend(rec for rec, _ in run_trials(_roundabout_trial, jobs))
    meta = {"note": PATH_NOTE, "joint_skipped_agents": skipped,
            "joint_budget": "wall_time" if cfg.joint_wall_time else "samples"}
    report = BenchmarkReport("roundabout", records, _jsonable(asdict(cfg)), cfg.seed, meta, ("agents",))
    return report


def roundabout_table(report: BenchmarkReport, cfg: RoundaboutBenchConfig) -> list:
    """Aggregates for every requested cell, with null rows for skipped joint runs."""
    rows = report.aggregates()
    have = {(r["planner"], r["agents"]) for r in rows}
    for n in cfg.agent_counts:
        for p in cfg.planners:
            if (p, n) not in have:
                rows.append({"planner": p, "agents": n, "trials": 0, "successes": None, "success_rate": None,
                             "success_std": None, "path_mean": None, "path_stderr": None, "path_median": None,
                             "valid_proportion": None, "valid_proportion_median": None})
    return rows


# ----------------------------------------------------------------------------
# heat maps


@dataclass(frozen=True)
class HeatmapSpec:
    width: int
    height: int
    anchor: float = 0.01  # fraction of all samples that renders pure black
    resolution: float = 1.0

    @classmethod
    def for_kind(cls, kind, width, height):
        return cls(width, height, {"passage": 0.01, "bugtrap": 0.002}.get(kind, 0.01))


def heatmap_counts(dumps, spec: HeatmapSpec) -> np.ndarray:
    counts = np.zeros((spec.height, spec.width), np.int64)
    for nodes in dumps:
        pts = np.asarray(nodes, float).reshape(-1, 2)
        c = np.clip((pts[:, 0] // spec.resolution).astype(int), 0, spec.width - 1)
        r = np.clip((pts[:, 1] // spec.resolution).astype(int), 0, spec.height - 1)
        np.add.at(counts, (r, c), 1)
    return counts


def heatmap_pixels(counts, anchor) -> np.ndarray:
    """Grey levels: intensity = clamp(count / total / anchor, 0, 1), 1 -> black, 0 -> white."""
    total = counts.sum()
    intensity = np.clip(counts / total / anchor, 0.0, 1.0)
    return np.round(255.0 * (1.0 - intensity)).astype(np.uint8)


def pgm_bytes(pixels) -> bytes:
    """Binary PGM with the map's top row (largest y) first."""
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels[::-1]).tobytes()


def emit_heatmap(dumps, spec: HeatmapSpec, path=None) -> bytes:
    dumps = list(dumps)
    if not dumps or sum(len(d) for d in dumps) == 0:
        raise ValueError("heat map needs at least one non-empty tree dump")
    data = pgm_bytes(heatmap_pixels(heatmap_counts(dumps, spec), spec.anchor))
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data


def read_pgm(data: bytes) -> np.ndarray:
    """Inverse of :func:`pgm_bytes` (rows back in map order)."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(h, w)[::-1]
