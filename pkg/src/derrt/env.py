"""Planar worlds: occupancy grids, dynamic agents, collision checks, observations
and the three procedural generators (narrow passage, bug trap, roundabout).

Coordinates are continuous world units with the origin at the lower-left corner
of cell (row 0, col 0); a point ``(x, y)`` lies in cell ``(row=floor(y / res),
col=floor(x / res))``.  Anything outside the map counts as occupied.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics.rng import rng_stream

ENV_FORMAT_VERSION = 1
SEGMENT_SPACING = 0.25
PATCH_SIZE = 21


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class OccupancyMap:
    width: int
    height: int
    cells: np.ndarray  # (height, width) uint8, 1 = obstacle
    resolution: float = 1.0

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.uint8).reshape(self.height, self.width)
        object.__setattr__(self, "cells", _frozen(cells, np.uint8))
        padded = np.ones((self.height + 2, self.width + 2), dtype=bool)
        padded[1:-1, 1:-1] = cells == 1
        object.__setattr__(self, "_padded", padded)
        object.__setattr__(self, "_hi", np.array([self.width, self.height]))

    @classmethod
    def empty(cls, width, height, resolution=1.0):
        return cls(width, height, np.zeros((height, width), np.uint8), resolution)

    @property
    def extent(self):
        return self.width * self.resolution, self.height * self.resolution

    def occupied(self, pts) -> np.ndarray:
        """Vectorised occupancy lookup for an (N, 2) array of points."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        idx = np.floor(pts / self.resolution)
        np.clip(idx, -1, self._hi, out=idx)
        idx = idx.astype(np.intp)
        return self._padded[idx[:, 1] + 1, idx[:, 0] + 1]

    def free_volume(self) -> float:
        return float(np.count_nonzero(self.cells == 0)) * self.resolution**2


@dataclass(frozen=True)
class AgentTrack:
    """Time-indexed waypoints of one moving agent.

    Positions between integer steps are linearly interpolated; times past the
    last waypoint hold the final position.
    """

    waypoints: np.ndarray
    direction: str = "ccw"

    def __post_init__(self):
        object.__setattr__(self, "waypoints", _frozen(np.asarray(self.waypoints, float).reshape(-1, 2)))

    def position(self, t) -> np.ndarray:
        wp = self.waypoints
        if t <= 0:
            return wp[0]
        if t >= len(wp) - 1:
            return wp[-1]
        i = int(math.floor(t))
        s = t - i
        if s == 0.0:
            return wp[i]
        return wp[i] + s * (wp[i + 1] - wp[i])


@dataclass(frozen=True)
class Environment:
    map: OccupancyMap
    start: np.ndarray
    goal_center: np.ndarray
    goal_radius: float
    agents: tuple = ()
    metadata: dict = field(default_factory=dict)
    robot_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "start", _frozen(self.start))
        object.__setattr__(self, "goal_center", _frozen(self.goal_center))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "_positions", {})

    @property
    def kind(self) -> str:
        return self.metadata.get("generator", "custom")

    def agent_positions(self, t) -> np.ndarray:
        if not self.agents:
            return np.zeros((0, 2))
        pos = self._positions.get(t)
        if pos is None:
            if len(self._positions) > 64:
                self._positions.clear()
            pos = np.array([a.position(t) for a in self.agents])
            pos.setflags(write=False)
            self._positions[t] = pos
        return pos

    def in_goal(self, x) -> bool:
        return math.hypot(x[0] - self.goal_center[0], x[1] - self.goal_center[1]) <= self.goal_radius


# ----------------------------------------------------------------------------
# collision checks


def points_free(env: Environment, pts, t=0) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ok = ~env.map.occupied(pts)
    if env.agents and ok.any():
        ap = env.agent_positions(t)
        diff = pts[:, None, :] - ap[None, :, :]
        d2 = np.einsum("nak,nak->na", diff, diff)
        ok &= (d2 >= env.robot_radius**2).all(axis=1)
    return ok


def point_free(env: Environment, x, t=0) -> bool:
    """True iff ``x`` is on a free cell and at least ``robot_radius`` from every agent at ``t``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        return False
    return bool(points_free(env, x[None, :2], t)[0])


def segment_points(a, b, spacing=SEGMENT_SPACING) -> np.ndarray:
    """Evenly spaced points on [a, b] (endpoints included), at most ``spacing`` apart.

    Endpoints are put in a canonical order first so the point set does not
    depend on direction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if tuple(b) < tuple(a):
        a, b = b, a
    d = b - a
    length = math.sqrt(float(d @ d))
    n = max(2, int(math.ceil(length / spacing)) + 1)
    s = np.arange(n, dtype=float) / (n - 1)
    return a + s[:, None] * d


def segment_free(env: Environment, a, b, t=0) -> bool:
    """True iff every point sampled along [a, b] at <= 0.25 cell spacing is free."""
    a = np.asarray(a, dtype=float)[:2]
    b = np.asarray(b, dtype=float)[:2]
    if not all(map(math.isfinite, (a[0], a[1], b[0], b[1]))):
        return False
    pts = segment_points(a, b, SEGMENT_SPACING * env.map.resolution)
    return bool(points_free(env, pts, t).all())


# ----------------------------------------------------------------------------
# observations


def extract_patch(env: Environment, center, size=PATCH_SIZE) -> np.ndarray:
    """``size`` x ``size`` occupancy window around the cell containing ``center``.

    ``patch[i, j]`` is ``cells[row - h + i, col - h + j]``; cells off the map read as 1.
    """
    if size % 2 != 1:
        raise ValueError("patch size must be odd")
    h = size // 2
    res = env.map.resolution
    col = int(math.floor(center[0] / res))
    row = int(math.floor(center[1] / res))
    patch = np.ones((size, size), dtype=np.uint8)
    r0, r1 = row - h, row + h + 1
    c0, c1 = col - h, col + h + 1
    rr0, rr1 = max(r0, 0), min(r1, env.map.height)
    cc0, cc1 = max(c0, 0), min(c1, env.map.width)
    if rr0 < rr1 and cc0 < cc1:
        patch[rr0 - r0 : rr1 - r0, cc0 - c0 : cc1 - c0] = env.map.cells[rr0:rr1, cc0:cc1]
    return patch


PASSAGE_FEATURE_DIM = 4
AGENT_FEATURE_DIM = 5
ROUNDABOUT_LOCAL_DIM = 2


def _passage_meta(env):
    meta = env.metadata.get("passage")
    if meta is None:
        raise ValueError("environment has no passage metadata (not from gen_narrow_passage)")
    return meta


def passage_features(env: Environment, x) -> np.ndarray:
    """[distance to entrance, in-passage 0/1, offset from the entrance / map size].

    The offset is taken in the entrance frame and divided by the map extent,
    so the coordinates mean the same thing on maps of different widths.
    """
    return passage_features_batch(env, np.asarray(x, float)[None, :2])[0]


def passage_features_batch(env: Environment, pts) -> np.ndarray:
    meta = _passage_meta(env)
    pts = np.atleast_2d(pts)
    ent = np.asarray(meta["entrance"], float)
    x0, y0, x1, y1 = meta["rect"]
    dist = np.linalg.norm(pts - ent, axis=1)
    inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
    rel = (pts - ent) / np.asarray(env.map.extent, float)
    return np.column_stack([dist, inside.astype(float), rel[:, 0], rel[:, 1]])


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _roundabout_center(env):
    meta = env.metadata.get("roundabout")
    if meta is not None:
        return np.asarray(meta["center"], float)
    w, h = env.map.extent
    return np.array([w / 2.0, h / 2.0])


def roundabout_local_features_batch(env: Environment, pts) -> np.ndarray:
    """[orientation around the obstacle relative to the goal, distance to goal]."""
    pts = np.atleast_2d(pts)
    c = _roundabout_center(env)
    g = env.goal_center
    theta_g = math.atan2(g[1] - c[1], g[0] - c[0])
    theta = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    return np.column_stack([_wrap(theta - theta_g), np.linalg.norm(pts - g, axis=1)])


def agent_features_batch(env: Environment, pts, t, agent_index) -> np.ndarray:
    if not 0 <= agent_index < len(env.agents):
        raise IndexError(f"agent index {agent_index} out of range for {len(env.agents)} agents")
    pts = np.atleast_2d(pts)
    local = roundabout_local_features_batch(env, pts)
    a = env.agents[agent_index].position(t)
    g = env.goal_center
    to_agent = a - pts
    to_goal = g - pts
    bearing = np.arctan2(to_agent[:, 1], to_agent[:, 0]) - np.arctan2(to_goal[:, 1], to_goal[:, 0])
    dist = np.linalg.norm(to_agent, axis=1)
    return np.column_stack([local, dist, np.cos(bearing), np.sin(bearing)])


def agent_features(env: Environment, x, t, agent_index) -> np.ndarray:
    """[orientation around obstacle rel. goal, goal distance, agent distance,
    cos and sin of agent bearing relative to the goal direction]."""
    return agent_features_batch(env, np.asarray(x, float)[None, :2], t, agent_index)[0]


def nearest_agent_features_batch(env: Environment, pts, t) -> np.ndarray:
    """Agent features for whichever agent is closest to each point."""
    pts = np.atleast_2d(pts)
    feats = np.stack([agent_features_batch(env, pts, t, i) for i in range(len(env.agents))])
    pick = np.argmin(feats[:, :, 2], axis=0)
    return feats[pick, np.arange(len(pts))]


# ----------------------------------------------------------------------------
# validation


def validate_environment(env: Environment) -> None:
    """Raise ``ValueError`` if ``env`` breaks a structural invariant."""
    m = env.map
    if m.width <= 0 or m.height <= 0:
        raise ValueError("map dimensions must be positive")
    if m.cells.shape != (m.height, m.width):
        raise ValueError("cell array does not match map dimensions")
    if not np.all((m.cells == 0) | (m.cells == 1)):
        raise ValueError("cells must be binary")
    if not (np.all(np.isfinite(env.start)) and np.all(np.isfinite(env.goal_center))):
        raise ValueError("start/goal must be finite")
    if env.goal_radius <= 0:
        raise ValueError("goal radius must be positive")
    if m.occupied(env.start[None, :])[0]:
        raise ValueError("start is in collision")
    if m.occupied(env.goal_center[None, :])[0]:
        raise ValueError("goal is in collision")
    max_step = env.metadata.get("agent_max_step")
    for i, a in enumerate(env.agents):
        if np.any(m.occupied(a.waypoints)):
            raise ValueError(f"agent {i} track collides with the static map")
        if max_step is not None:
            steps = np.linalg.norm(np.diff(a.waypoints, axis=0), axis=1)
            if np.any(steps > max_step + 1e-9):
                raise ValueError(f"agent {i} exceeds its per-step speed bound")


# ----------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class PassageParams:
    thickness_range: tuple = (6, 10)
    length_range: tuple = (60, 120)
    margin: int = 10
    goal_radius: float = 10.0
    narrowing: float = 1.0  # thickness range is multiplied by this (test maps use 0.5)
    centre_range: tuple = (0.3, 0.7)  # horizontal passage centre, as a fraction of the width


def gen_narrow_passage(seed, width=300, height=300, params: PassageParams = PassageParams()) -> Environment:
    """Two chambers split by a vertical wall pierced by one horizontal passage.

    Passage thickness, length, horizontal centre and opening height are drawn
    uniformly; the start lies in the left chamber and the goal in the right one.
    """
    if width < 50 or height < 50:
        raise ValueError("narrow-passage maps must be at least 50 x 50")
    rng = rng_stream(seed, 0x9A55)
    lo, hi = params.thickness_range
    lo = max(1, int(round(lo * params.narrowing)))
    hi = max(lo, int(round(hi * params.narrowing)))
    thickness = int(rng.integers(lo, hi + 1))
    length = int(rng.integers(params.length_range[0], min(params.length_range[1], width - 4 * params.margin) + 1))
    y0 = int(rng.integers(params.margin, height - params.margin - thickness + 1))
    centre = rng.uniform(params.centre_range[0] * width, params.centre_range[1] * width)
    x0 = int(round(centre - length / 2))
    x1 = x0 + length
    cells = np.zeros((height, width), np.uint8)
    cells[:, x0:x1] = 1
    cells[y0 : y0 + thickness, x0:x1] = 0
    grid = OccupancyMap(width, height, cells)
    m = params.margin

    def pick(xlo, xhi):
        while True:
            p = np.array([rng.uniform(xlo, xhi), rng.uniform(m, height - m)])
            if not grid.occupied(p[None])[0]:
                return p

    start = pick(m, x0 - m)
    goal = pick(x1 + m, width - m)
    meta = {
        "generator": "passage",
        "seed": int(seed),
        "passage": {
            "rect": [float(x0), float(y0), float(x1), float(y0 + thickness)],
            "entrance": [float(x0), y0 + thickness / 2.0],
            "thickness": thickness,
            "length": length,
        },
    }
    return Environment(grid, start, goal, params.goal_radius, (), meta)


# canonical bug trap, in trap-local coordinates centred on the chamber;
# rectangles are (u0, v0, u1, v1)
BUGTRAP_HALF = 20.0
BUGTRAP_WALL = 3.0
BUGTRAP_CHANNEL_HALF = 2.0
BUGTRAP_NECK_START = 4.0
BUGTRAP_RECTS = (
    (-20.0, -20.0, 20.0, -17.0),  # bottom wall
    (-20.0, 17.0, 20.0, 20.0),  # top wall
    (-20.0, -17.0, -17.0, 17.0),  # left wall
    (17.0, -17.0, 20.0, -2.0),  # right wall, below the exit
    (17.0, 2.0, 20.0, 17.0),  # right wall, above the exit
    (4.0, 2.0, 17.0, 5.0),  # upper neck wall (inward)
    (4.0, -5.0, 17.0, -2.0),  # lower neck wall (inward)
)


def bugtrap_local_occupied(u, v) -> np.ndarray:
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    occ = np.zeros(np.broadcast(u, v).shape, dtype=bool)
    for u0, v0, u1, v1 in BUGTRAP_RECTS:
        occ |= (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)
    return occ


@dataclass(frozen=True)
class BugtrapParams:
    size: int = 110
    goal_radius: float = 5.0
    goal_clearance: float = 32.0


def _to_local(pts, center, angle):
    c, s = math.cos(angle), math.sin(angle)
    d = np.atleast_2d(pts) - center
    return d[:, 0] * c + d[:, 1] * s, -d[:, 0] * s + d[:, 1] * c


def _to_world(u, v, center, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.column_stack([center[0] + u * c - v * s, center[1] + u * s + v * c])


def gen_bugtrap(seed, params: BugtrapParams = BugtrapParams()) -> Environment:
    """Bug trap rotated and translated at random inside a square map.

    The start is drawn inside the chamber behind the neck; the goal is drawn
    in open space outside the trap.
    """
    rng = rng_stream(seed, 0xB06)
    n = params.size
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    reach = BUGTRAP_HALF * math.sqrt(2.0) + 2.0
    center = rng.uniform(reach, n - reach, size=2)
    cols, rows = np.meshgrid(np.arange(n) + 0.5, np.arange(n) + 0.5)
    u, v = _to_local(np.column_stack([cols.ravel(), rows.ravel()]), center, angle)
    cells = bugtrap_local_occupied(u, v).reshape(n, n).astype(np.uint8)
    grid = OccupancyMap(n, n, cells)
    inner = BUGTRAP_HALF - BUGTRAP_WALL - 1.5
    while True:
        su = rng.uniform(-inner, BUGTRAP_NECK_START - 1.5)
        sv = rng.uniform(-inner, inner)
        start = _to_world(np.array([su]), np.array([sv]), center, angle)[0]
        if not grid.occupied(start[None])[0]:
            break
    while True:
        goal = rng.uniform(3.0, n - 3.0, size=2)
        if np.linalg.norm(goal - center) >= params.goal_clearance and not grid.occupied(goal[None])[0]:
            break
    meta = {
        "generator": "bugtrap",
        "seed": int(seed),
        "bugtrap": {"center": [float(center[0]), float(center[1])], "angle": angle},
    }
    return Environment(grid, start, goal, params.goal_radius, (), meta)


@dataclass(frozen=True)
class RoundaboutParams:
    size: int = 100
    half_extent_range: tuple = (8.0, 14.0)
    center_jitter: float = 4.0
    robot_orbit_margin: float = 8.0
    agent_speed_range: tuple = (1.0, 2.0)
    phase_jitter: float = 0.2
    horizon: int = 1000
    goal_radius: float = 5.0


def gen_roundabout(seed, n_agents=2, params: RoundaboutParams = RoundaboutParams()) -> Environment:
    """Central rectangular block with agents circling it counter-clockwise.

    The robot starts on one side of the block and must reach the diametrically
    opposite point.
    """
    if not 1 <= n_agents <= 8:
        raise ValueError("n_agents must be in 1..8")
    rng = rng_stream(seed, 0x20BD)
    n = params.size
    hx, hy = rng.uniform(*params.half_extent_range, size=2)
    center = n / 2.0 + rng.uniform(-params.center_jitter, params.center_jitter, size=2)
    cols, rows = np.meshgrid(np.arange(n) + 0.5, np.arange(n) + 0.5)
    cells = ((np.abs(cols - center[0]) <= hx) & (np.abs(rows - center[1]) <= hy)).astype(np.uint8)
    grid = OccupancyMap(n, n, cells)
    half_diag = math.hypot(hx, hy)
    r_max = min(center.min(), (n - center).min()) - 3.0
    r_robot = min(half_diag + params.robot_orbit_margin, r_max)
    phi = float(rng.uniform(0.0, 2.0 * math.pi))
    start = center + r_robot * np.array([math.cos(phi), math.sin(phi)])
    goal = center - r_robot * np.array([math.cos(phi), math.sin(phi)])
    agents = []
    max_step = 0.0
    for _ in range(n_agents):
        radius = float(rng.uniform(half_diag + 3.0, r_max))
        speed = float(rng.uniform(*params.agent_speed_range))
        omega = speed / radius
        while True:
            phase = float(rng.uniform(0.0, 2.0 * math.pi))
            p0 = center + radius * np.array([math.cos(phase), math.sin(phase)])
            if min(np.linalg.norm(p0 - start), np.linalg.norm(p0 - goal)) > 6.0:
                break
        incr = omega * (1.0 + rng.uniform(-params.phase_jitter, params.phase_jitter, size=params.horizon))
        angles = phase + np.concatenate([[0.0], np.cumsum(incr)])
        wp = center + radius * np.column_stack([np.cos(angles), np.sin(angles)])
        max_step = max(max_step, float(np.max(np.linalg.norm(np.diff(wp, axis=0), axis=1))))
        agents.append(AgentTrack(wp, "ccw"))
    meta = {
        "generator": "roundabout",
        "seed": int(seed),
        "roundabout": {"center": [float(center[0]), float(center[1])], "half_extent": [float(hx), float(hy)]},
        "agent_max_step": max_step,
    }
    return Environment(grid, start, goal, params.goal_radius, tuple(agents), meta)


def with_agents(env: Environment, agents) -> Environment:
    return Environment(env.map, env.start, env.goal_center, env.goal_radius, tuple(agents), env.metadata, env.robot_radius)


def with_start(env: Environment, start) -> Environment:
    return Environment(env.map, start, env.goal_center, env.goal_radius, env.agents, env.metadata, env.robot_radius)


# ----------------------------------------------------------------------------
# serialisation


def rle_encode(values) -> list:
    """Run-length encode a flat 0/1 sequence as ``[[value, count], ...]``."""
    flat = np.asarray(values, dtype=np.uint8).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [flat.size]])
    return [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs, size=None) -> np.ndarray:
    out = np.concatenate([np.full(c, v, np.uint8) for v, c in runs]) if runs else np.zeros(0, np.uint8)
    if size is not None and out.size != size:
        raise ValueError(f"run-length data decodes to {out.size} cells, expected {size}")
    return out


def env_to_dict(env: Environment) -> dict:
    return {
        "version": ENV_FORMAT_VERSION,
        "generator": env.kind,
        "seed": env.metadata.get("seed"),
        "width": env.map.width,
        "height": env.map.height,
        "resolution": env.map.resolution,
        "cells": rle_encode(env.map.cells),
        "start": [float(v) for v in env.start],
        "goal": {"center": [float(v) for v in env.goal_center], "radius": float(env.goal_radius)},
        "robot_radius": env.robot_radius,
        "agents": [
            {"direction": a.direction, "waypoints": [[float(p[0]), float(p[1])] for p in a.waypoints]}
            for a in env.agents
        ],
        "metadata": env.metadata,
    }


def env_from_dict(doc: dict) -> Environment:
    if doc.get("version") != ENV_FORMAT_VERSION:
        raise ValueError(f"unsupported environment format version {doc.get('version')!r}")
    w, h = int(doc["width"]), int(doc["height"])
    cells = rle_decode(doc["cells"], w * h).reshape(h, w)
    grid = OccupancyMap(w, h, cells, float(doc.get("resolution", 1.0)))
    agents = tuple(AgentTrack(np.array(a["waypoints"], float), a.get("direction", "ccw")) for a in doc["agents"])
    env = Environment(
        grid,
        np.array(doc["start"], float),
        np.array(doc["goal"]["center"], float),
        float(doc["goal"]["radius"]),
        agents,
        dict(doc.get("metadata") or {"generator": doc.get("generator"), "seed": doc.get("seed")}),
        float(doc.get("robot_radius", 1.0)),
    )
    validate_environment(env)
    return env


def save_env(env: Environment, path) -> None:
    with open(path, "w") as fh:
        json.dump(env_to_dict(env), fh, sort_keys=True)
        fh.write("\n")


def load_env(path) -> Environment:
    with open(path) as fh:
        return env_from_dict(json.load(fh))


def generate(kind: str, seed: int, n_agents: int = 2, width=None, height=None) -> Environment:
    if kind == "passage":
        return gen_narrow_passage(seed, width or 300, height or 300)
    if kind == "bugtrap":
        return gen_bugtrap(seed)
    if kind == "roundabout":
        return gen_roundabout(seed, n_agents)
    raise ValueError(f"unknown environment kind {kind!r}")
