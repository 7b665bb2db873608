import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import make_spec, orbit
from scenefuse.dataset import KeyframeRecord, PanopticImage
from scenefuse.geometry import PointCloud, Pose, sensor_to_world
from scenefuse.simulator import render_keyframe, simulate
from scenefuse.voxel_map import SemanticCloud, SemanticVoxelMap, label_cloud, unique_rows

VS = 0.1


def cloud(points, classes, instances=None):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cls = np.asarray(classes, dtype=np.int64).reshape(-1)
    inst = np.zeros(len(pts), dtype=np.int64) if instances is None else np.asarray(instances)
    return SemanticCloud(pts, cls, inst)


def at(key, n=1):
    """``n`` points inside voxel ``key``."""
    return np.tile((np.asarray(key, dtype=float) + 0.5) * VS, (n, 1))


# ------------------------------------------------------------ label_cloud
def test_points_behind_camera_give_empty_cloud(camera):
    imap = np.ones((camera.height, camera.width), dtype=np.uint16)
    rec = KeyframeRecord(0, 0.0, Pose(), PointCloud(np.array([[0.0, 0.0, -1.0], [0.1, 0.1, -3.0]])),
                         PanopticImage(imap, {1: (0, 1.0)}))
    sc = label_cloud(rec, camera)
    assert len(sc) == 0 and sc.dropped == 2


def test_stored_pixel_index_carries_label(camera):
    imap = np.zeros((camera.height, camera.width), dtype=np.uint16)
    imap[5, 9] = 7
    rec = KeyframeRecord(0, 0.0, Pose(), PointCloud(np.array([[0.3, 0.2, 2.0]]), np.array([[5, 9]])),
                         PanopticImage(imap, {7: (3, 1.0)}))
    sc = label_cloud(rec, camera)
    assert len(sc) == 1
    assert sc.classes.tolist() == [3] and sc.instances.tolist() == [7]
    expect = sensor_to_world(Pose(), camera).apply([0.3, 0.2, 2.0])
    assert sc.points[0] == pytest.approx(expect)


def test_projection_path_matches_stored_pixels():
    spec = make_spec([(1, "table", (2.0, 0.0, 0.4), (0.8, 1.0, 0.8))], waypoints=[[0, 0, 0]])
    rec = render_keyframe(spec, 0)
    no_px = KeyframeRecord(rec.index, rec.timestamp, rec.pose, PointCloud(rec.cloud.points), rec.panoptic)
    a, b = label_cloud(rec, spec.camera), label_cloud(no_px, spec.camera)
    # pixel centers project back into their own pixel
    assert np.array_equal(a.instances, b.instances)
    assert np.allclose(a.points, b.points)


def test_labeled_points_equal_ray_cast_hits():
    boxes = [(1, "table", (2.5, 0.3, 0.4), (0.8, 1.0, 0.8)), (2, "chair", (1.8, -0.6, 0.3), (0.4, 0.4, 0.6))]
    spec = make_spec(boxes, waypoints=[[0, 0, 0]], structure=[((3.0, 0.0, -0.05), (8.0, 8.0, 0.1))])
    rec = render_keyframe(spec, 0)
    sc = label_cloud(rec, spec.camera)
    cam = spec.camera
    cw = sensor_to_world(spec.trajectory[0], cam)
    origin = np.asarray(cw.translation)
    boxes_lh = [(i, np.subtract(c, np.divide(s, 2)), np.add(c, np.divide(s, 2))) for i, _c, c, s in boxes]
    boxes_lh.append((0, np.array([-1.0, -4.0, -0.1]), np.array([7.0, 4.0, 0.0])))
    hits = {}
    for r in range(cam.height):
        for c in range(cam.width):
            d_cam = np.array([(c + 0.5 - cam.cx) / cam.fx, (r + 0.5 - cam.cy) / cam.fy, 1.0])
            d = cw.matrix @ d_cam
            best = min(((oracles.ray_box_distance(origin, d, lo, hi), i) for i, lo, hi in boxes_lh))
            if math.isfinite(best[0]) and best[0] <= spec.max_range and best[1] > 0:
                hits[best[1]] = hits.get(best[1], 0) + 1
    got = dict(zip(*np.unique(sc.instances, return_counts=True)))
    assert {int(k): int(v) for k, v in got.items()} == hits


# ----------------------------------------------------------- integrate
def test_unanimous_label():
    m = SemanticVoxelMap(10, VS)
    for kf in range(3):
        m.integrate(cloud(at((1, 2, 3)), [5]), kf)
    assert m.label((1, 2, 3)) == 5


def test_tie_goes_to_most_recent_keyframe():
    m = SemanticVoxelMap(10, VS)
    m.integrate(cloud(at((0, 0, 0)), [2]), 0)
    m.integrate(cloud(at((0, 0, 0)), [9]), 1)
    m.integrate(cloud(at((0, 0, 0)), [2]), 2)
    m.integrate(cloud(at((0, 0, 0)), [9]), 3)
    assert m.label((0, 0, 0)) == 9
    # same keyframe contributes both classes: lower class id wins
    m2 = SemanticVoxelMap(10, VS)
    m2.integrate(cloud(np.vstack([at((0, 0, 0)), at((0, 0, 0))]), [7, 4]), 0)
    assert m2.label((0, 0, 0)) == 4


def test_duplicate_keyframe_rejected():
    m = SemanticVoxelMap(4, VS)
    m.integrate(cloud(at((0, 0, 0)), [1]), 0)
    with pytest.raises(ValueError):
        m.integrate(cloud(at((0, 0, 0)), [1]), 0)
    with pytest.raises(KeyError):
        m.retract(5)


def test_twenty_noisy_observations_match_bayes():
    rng = np.random.default_rng(11)
    K, p = 8, 0.9
    obs = [int(c) for c in rng.choice(K, size=20, p=[0.6] + [0.4 / (K - 1)] * (K - 1))]
    m = SemanticVoxelMap(K, VS, p_hit=p)
    for kf, c in enumerate(obs):
        m.integrate(cloud(at((0, 0, 0)), [c]), kf)
    ref = oracles.categorical_posterior(obs, K, Fraction(9, 10))
    assert np.allclose(m.posterior((0, 0, 0)), [float(r) for r in ref], atol=1e-9, rtol=0)


def test_per_frame_saturation():
    m = SemanticVoxelMap(4, VS, c_max=5)
    m.integrate(cloud(at((0, 0, 0), 50), [1] * 50), 0)
    m.integrate(cloud(at((0, 0, 0), 6), [2] * 6), 1)
    assert m.cells[(0, 0, 0)].counts == {1: 5, 2: 5}
    assert m.label((0, 0, 0)) == 2


observations = st.lists(st.tuples(st.integers(0, 5), st.integers(0, 6)), min_size=1, max_size=40)


@given(observations, st.sampled_from([0.6, 0.75, 0.9, 0.99]))
def test_posterior_matches_oracle(obs, p_hit):
    K, c_max = 7, 3
    m = SemanticVoxelMap(K, VS, p_hit=p_hit, c_max=c_max)
    by_kf = {}
    for kf, c in obs:
        by_kf.setdefault(kf, []).append(c)
    for kf, cs in sorted(by_kf.items()):
        m.integrate(cloud(at((3, -1, 2), len(cs)), cs), kf)
    ref = oracles.categorical_posterior(oracles.saturated(obs, c_max), K, Fraction(p_hit))
    assert np.allclose(m.posterior((3, -1, 2)), [float(r) for r in ref], atol=1e-9, rtol=0)


# -------------------------------------------------------------- retract
def test_integrate_then_retract_restores_state():
    m = SemanticVoxelMap(6, VS)
    m.integrate(cloud(np.vstack([at((0, 0, 0), 3), at((1, 0, 0))]), [1, 1, 1, 2]), 0)
    before = m.state()
    explored = m.explored_cells()
    m.integrate(cloud(np.vstack([at((0, 0, 0), 2), at((5, 5, 5))]), [3, 3, 4]), 3)
    m.retract(3)
    assert m.state() == before
    assert m.explored_cells() == explored


def test_retract_only_contributor_removes_voxel():
    m = SemanticVoxelMap(6, VS)
    m.integrate(cloud(at((2, 2, 2)), [1]), 0)
    m.retract(0)
    assert (2, 2, 2) not in m.cells and len(m) == 0 and m.by_label == {}


def test_retract_one_of_two_conflicting_contributors():
    m = SemanticVoxelMap(6, VS)
    m.integrate(cloud(at((0, 0, 0), 2), [1, 1]), 0)
    m.integrate(cloud(at((0, 0, 0), 4), [4] * 4), 1)
    assert m.label((0, 0, 0)) == 4
    s = m.retract(1)
    assert m.label((0, 0, 0)) == 1
    assert s.relabeled == [((0, 0, 0), 4, 1)]


clouds = st.lists(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-1, 2),
                                     st.integers(0, 4)), min_size=0, max_size=25),
                  min_size=1, max_size=6)


def _sc(entries):
    if not entries:
        return cloud(np.zeros((0, 3)), [])
    keys = np.array([e[:3] for e in entries], dtype=float)
    return cloud((keys + 0.25) * VS, [e[3] for e in entries])


@given(clouds, st.randoms(use_true_random=False))
def test_integration_order_independent(frames, rnd):
    a = SemanticVoxelMap(5, VS)
    for kf, f in enumerate(frames):
        a.integrate(_sc(f), kf)
    order = list(range(len(frames)))
    rnd.shuffle(order)
    b = SemanticVoxelMap(5, VS)
    for kf in order:
        b.integrate(_sc(frames[kf]), kf)
    assert a.state() == b.state()
    assert a.explored_cells() == b.explored_cells()
    assert len(a) <= sum(len(f) for f in frames)


@given(clouds, st.data())
def test_retract_is_exact_inverse(frames, data):
    m = SemanticVoxelMap(5, VS)
    for kf, f in enumerate(frames[:-1]):
        m.integrate(_sc(f), kf)
    before = m.state()
    by_label = {k: set(v) for k, v in m.by_label.items()}
    last = len(frames) - 1
    m.integrate(_sc(frames[-1]), last)
    m.retract(last)
    assert m.state() == before
    assert {k: set(v) for k, v in m.by_label.items()} == by_label


# ---------------------------------------------------------------- query
def test_query_examples():
    m = SemanticVoxelMap(5, VS)
    assert m.query_voxels() == []
    m.integrate(cloud(np.vstack([at((0, 0, 0)), at((3, 3, 3)), at((1, 0, 0))]), [1, 2, 1]), 0)
    assert m.query_voxels(aabb=((0.25, 0.25, 0.25), (0.4, 0.4, 0.4))) == [((3, 3, 3), 2)]
    assert m.query_voxels(classes=[1]) == [((0, 0, 0), 1), ((1, 0, 0), 1)]
    assert m.query_voxels() == sorted(m.query_voxels())


def test_table_voxels_track_surface_area():
    # faces sit mid-voxel so each face is one voxel thick
    size, center = (0.8, 1.2, 0.5), (0.05, 0.05, 0.3)
    spec = make_spec([(1, "table", center, size)], waypoints=orbit(center, 2.5, 8), step_deg=45.0)
    m = SemanticVoxelMap(spec.vocab.num_classes, VS)
    for rec in simulate(spec).items:
        m.integrate(label_cloud(rec, spec.camera), rec.index)
    sx, sy, sz = size
    visible_area = sx * sy + 2 * (sx + sy) * sz      # top and four sides; the bottom is never seen
    expect = visible_area / VS ** 2
    got = len(m.query_voxels(classes=[spec.vocab.class_id("table")]))
    assert abs(got - expect) <= 0.2 * expect


# -------------------------------------------------------------- helpers
@given(st.lists(st.tuples(st.integers(-1000, 1000), st.integers(-5, 5), st.integers(0, 3)), min_size=1))
def test_unique_rows_matches_numpy(rows):
    arr = np.array(rows, dtype=np.int64)
    u, n = unique_rows(arr)
    ru, rn = np.unique(arr, axis=0, return_counts=True)
    assert np.array_equal(u, ru) and np.array_equal(n, rn)


def test_ground_cells_need_two_hits():
    m = SemanticVoxelMap(3, VS, ground_max_z=0.1, ground_min_hits=2)
    m.integrate(cloud(np.array([[0.05, 0.05, 0.0]]), [0]), 0)
    assert m.explored_cells() == set()
    m.integrate(cloud(np.array([[0.06, 0.02, 0.05], [0.05, 0.05, 1.0]]), [0, 0]), 1)
    assert m.explored_cells() == {(0, 0)}
    m.retract(0)
    assert m.explored_cells() == set()


def test_dump_is_json(tmp_path):
    import json
    m = SemanticVoxelMap(3, VS)
    m.integrate(cloud(at((1, 1, 1)), [2]), 0)
    m.dump(str(tmp_path / "map.json"))
    doc = json.loads((tmp_path / "map.json").read_text())
    assert doc["voxels"][0]["key"] == [1, 1, 1] and doc["voxels"][0]["label"] == 2
