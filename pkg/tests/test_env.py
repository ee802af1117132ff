import json
import math

import numpy as np
import pytest
import scipy.ndimage
import shapely.affinity
import shapely.geometry
import shapely.ops
from hypothesis import given, settings
from hypothesis import strategies as st

from derrt import env as E


def _walled(width=20, height=20, wall_col=10):
    cells = np.zeros((height, width), np.uint8)
    cells[:, wall_col] = 1
    return E.Environment(E.OccupancyMap(width, height, cells), [2.0, 2.0], [18.0, 18.0], 1.0)


# -- collision checks ----------------------------------------------------------


def test_empty_map_segments_are_free():
    env = E.Environment(E.OccupancyMap.empty(50, 50), [1, 1], [40, 40], 2.0)
    assert E.segment_free(env, [0.1, 0.1], [49.9, 49.9])
    assert E.segment_free(env, [25, 3], [25, 47])


def test_segment_crossing_one_cell_wall_is_blocked():
    env = _walled()
    assert not E.segment_free(env, [9.0, 5.0], [11.5, 5.0])
    assert E.segment_free(env, [2.0, 5.0], [9.9, 5.0])


def test_out_of_bounds_is_occupied():
    env = _walled()
    assert not E.point_free(env, [-0.1, 5.0])
    assert not E.point_free(env, [5.0, 20.0])
    assert not E.point_free(env, [np.nan, 5.0])
    assert E.point_free(env, [0.0, 0.0])


def test_segment_points_spacing_and_endpoints():
    pts = E.segment_points([0.0, 0.0], [3.0, 4.0])
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert gaps.max() <= E.SEGMENT_SPACING + 1e-12
    np.testing.assert_allclose(pts[0], [0, 0])
    np.testing.assert_allclose(pts[-1], [3, 4])


coords = st.floats(-2.0, 22.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(coords, coords, coords, coords)
def test_segment_free_is_symmetric(ax, ay, bx, by):
    env = _walled()
    assert E.segment_free(env, [ax, ay], [bx, by]) == E.segment_free(env, [bx, by], [ax, ay])


@settings(max_examples=200, deadline=None)
@given(coords, coords)
def test_degenerate_segment_equals_point_check(x, y):
    env = _walled()
    assert E.segment_free(env, [x, y], [x, y]) == E.point_free(env, [x, y])


def test_bugtrap_channel_segment_matches_dense_supersampling():
    env = E.gen_bugtrap(3)
    meta = env.metadata["bugtrap"]
    c, a = np.array(meta["center"]), meta["angle"]
    # straight down the middle of the exit channel, parallel to its walls
    p, q = E._to_world(np.array([5.0, 25.0]), np.array([0.0, 0.0]), c, a)
    dense = p + np.linspace(0.0, 1.0, int(np.linalg.norm(q - p) / 0.01) + 1)[:, None] * (q - p)
    oracle = not np.any(env.map.occupied(dense))
    assert oracle
    assert E.segment_free(env, p, q) == oracle


def test_agents_block_points():
    env = E.Environment(E.OccupancyMap.empty(20, 20), [1, 1], [15, 15], 1.0, (E.AgentTrack([[5, 5], [6, 5]]),))
    assert not E.point_free(env, [5.5, 5.0], t=0)
    assert E.point_free(env, [5.0, 6.0], t=0)  # exactly one radius away
    np.testing.assert_allclose(env.agents[0].position(0.5), [5.5, 5.0])
    np.testing.assert_allclose(env.agents[0].position(7), [6, 5])


# -- observations --------------------------------------------------------------


def test_patch_on_empty_interior_is_zero():
    env = E.Environment(E.OccupancyMap.empty(60, 60), [1, 1], [50, 50], 1.0)
    assert not E.extract_patch(env, [30.2, 30.7]).any()


def test_patch_at_corner_pads_three_quadrants():
    env = E.Environment(E.OccupancyMap.empty(60, 60), [1, 1], [50, 50], 1.0)
    p = E.extract_patch(env, [0.0, 0.0])
    assert p.shape == (21, 21)
    assert not p[10:, 10:].any()
    assert p[:10, :].all() and p[:, :10].all()


def test_patch_matches_direct_indexing_and_centre_cell():
    env = E.gen_bugtrap(5)
    rng = np.random.default_rng(0)
    for x in rng.uniform(12, 98, size=(20, 2)):
        patch = E.extract_patch(env, x)
        r, c = int(x[1]), int(x[0])
        np.testing.assert_array_equal(patch, env.map.cells[r - 10 : r + 11, c - 10 : c + 11])
        assert patch[10, 10] == env.map.occupied(x[None])[0]
    with pytest.raises(ValueError):
        E.extract_patch(env, [50, 50], size=20)


def test_passage_features():
    env = E.gen_narrow_passage(1)
    meta = env.metadata["passage"]
    ent = np.array(meta["entrance"])
    f = E.passage_features(env, ent)
    assert f[0] == 0.0
    assert f[1] == 1.0  # the entrance lies on the passage boundary, inside wins
    x0, y0, x1, y1 = meta["rect"]
    deep = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    assert E.passage_features(env, deep)[1] == 1.0
    pts = np.random.default_rng(1).uniform(0, 300, size=(50, 2))
    feats = E.passage_features_batch(env, pts)
    np.testing.assert_allclose(feats[:, 0], np.hypot(*(pts - ent).T))
    np.testing.assert_allclose(feats[:, 2:], (pts - ent) / [300.0, 300.0])
    with pytest.raises(ValueError):
        E.passage_features(E.gen_bugtrap(0), [1.0, 1.0])


def test_agent_features_match_trigonometry():
    env = E.gen_roundabout(4, 3)
    c = np.array(env.metadata["roundabout"]["center"])
    g = env.goal_center
    rng = np.random.default_rng(2)
    for x in rng.uniform(5, 95, size=(10, 2)):
        for i in range(3):
            a = env.agents[i].position(7)
            f = E.agent_features(env, x, 7, i)
            orient = math.atan2(x[1] - c[1], x[0] - c[0]) - math.atan2(g[1] - c[1], g[0] - c[0])
            orient = math.atan2(math.sin(orient), math.cos(orient))
            bearing = math.atan2(a[1] - x[1], a[0] - x[0]) - math.atan2(g[1] - x[1], g[0] - x[0])
            expect = [orient, math.dist(x, g), math.dist(x, a), math.cos(bearing), math.sin(bearing)]
            np.testing.assert_allclose(f, expect, atol=1e-9)


def test_agent_feature_edge_cases():
    env = E.gen_roundabout(4, 2)
    assert E.agent_features(env, env.goal_center, 0, 0)[1] == 0.0
    a = env.agents[1].position(3)
    assert E.agent_features(env, a, 3, 1)[2] == 0.0
    with pytest.raises(IndexError):
        E.agent_features(env, [1, 1], 0, 2)


# -- generators ---------------------------------------------------------------


@pytest.mark.parametrize("make", [
    lambda s: E.gen_narrow_passage(s, 300, 300),
    lambda s: E.gen_narrow_passage(s, 600, 300),
    lambda s: E.gen_bugtrap(s),
    lambda s: E.gen_roundabout(s, 4),
])
def test_generators_are_deterministic_and_valid(make):
    a, b = make(17), make(17)
    assert json.dumps(E.env_to_dict(a)) == json.dumps(E.env_to_dict(b))
    E.validate_environment(a)
    assert make(18).map.cells.tobytes() != a.map.cells.tobytes() or not np.array_equal(make(18).start, a.start)


def test_passage_layout():
    for seed in range(10):
        env = E.gen_narrow_passage(seed, 600, 300, E.PassageParams(narrowing=0.5))
        x0, y0, x1, y1 = env.metadata["passage"]["rect"]
        assert 3 <= y1 - y0 <= 5
        assert env.start[0] < x0 < x1 < env.goal_center[0]
        labels, _ = scipy.ndimage.label(env.map.cells == 0)
        s = labels[int(env.start[1]), int(env.start[0])]
        g = labels[int(env.goal_center[1]), int(env.goal_center[0])]
        assert s == g  # the passage connects both chambers
    with pytest.raises(ValueError):
        E.gen_narrow_passage(0, 40, 300)


def test_bugtrap_start_is_trapped():
    for seed in range(8):
        env = E.gen_bugtrap(seed)
        assert env.map.width == env.map.height == 110
        free = env.map.cells == 0
        sc = (int(env.start[1]), int(env.start[0]))
        gc = (int(env.goal_center[1]), int(env.goal_center[0]))
        labels, _ = scipy.ndimage.label(free)
        assert labels[sc] == labels[gc]  # reachable through the channel
        meta = env.metadata["bugtrap"]
        u, v = E._to_local(np.argwhere(free)[:, ::-1] + 0.5, np.array(meta["center"]), meta["angle"])
        # closing the exit channel (4 <= u <= 20, |v| <= 2) must disconnect start from goal
        blocked = free.copy()
        idx = np.argwhere(free)
        plug = (u >= 4.0) & (np.abs(v) <= 2.6)
        blocked[idx[plug, 0], idx[plug, 1]] = False
        labels, _ = scipy.ndimage.label(blocked)
        assert labels[sc] != labels[gc]


def test_bugtrap_matches_rotated_shapely_mask():
    env = E.gen_bugtrap(9)
    meta = env.metadata["bugtrap"]
    c, ang = meta["center"], meta["angle"]
    shape = shapely.ops.unary_union([shapely.geometry.box(*r) for r in E.BUGTRAP_RECTS])
    shape = shapely.affinity.rotate(shape, ang, origin=(0, 0), use_radians=True)
    shape = shapely.affinity.translate(shape, c[0], c[1])
    n = env.map.width
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    centres = shapely.points(xs.ravel(), ys.ravel())
    mask = shapely.covers(shape, centres).reshape(n, n)
    mismatch = mask != (env.map.cells == 1)
    # cell centres exactly on an edge may round either way
    assert mismatch.sum() <= 2


def test_roundabout_agents_move_counter_clockwise():
    env = E.gen_roundabout(6, 8)
    c = np.array(env.metadata["roundabout"]["center"])
    for a in env.agents:
        wp = a.waypoints
        ang = np.unwrap(np.arctan2(wp[:, 1] - c[1], wp[:, 0] - c[0]))
        assert np.all(np.diff(ang) > 0)
        assert not env.map.occupied(wp).any()
    assert np.allclose(env.start + env.goal_center, 2 * c)
    with pytest.raises(ValueError):
        E.gen_roundabout(0, 9)


# -- serialisation ------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=200))
def test_rle_roundtrip(values):
    np.testing.assert_array_equal(E.rle_decode(E.rle_encode(values)), np.array(values, np.uint8))


def test_env_roundtrip(tmp_path):
    env = E.gen_roundabout(2, 3)
    path = tmp_path / "e.json"
    E.save_env(env, path)
    back = E.load_env(path)
    np.testing.assert_array_equal(back.map.cells, env.map.cells)
    np.testing.assert_array_equal(back.agents[2].waypoints, env.agents[2].waypoints)
    assert back.kind == "roundabout" and back.goal_radius == env.goal_radius
    doc = E.env_to_dict(env)
    doc["version"] = 99
    with pytest.raises(ValueError):
        E.env_from_dict(doc)
