import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import fuse, make_spec, orbit
from scenefuse.dataset import PoseCorrectionEvent, Vocabulary
from scenefuse.geometry import Pose
from scenefuse.objects import ObjectSet, apply_correction, centroid_single_frame, voxel_components
from scenefuse.simulator import render_keyframe, simulate
from scenefuse.voxel_map import SemanticCloud, SemanticVoxelMap, label_cloud

VS = 0.1
VOCAB = Vocabulary(tuple(f"c{i}" for i in range(6)), ("on",), large_classes={"c0", "c1", "c2"})


def map_from_keys(keys_by_class, kf=0, vmap=None):
    vmap = vmap or SemanticVoxelMap(VOCAB.num_classes, VS)
    pts, cls = [], []
    for c, keys in keys_by_class.items():
        for k in keys:
            pts.append((np.asarray(k, dtype=float) + 0.5) * VS)
            cls.append(c)
    sc = SemanticCloud(np.array(pts).reshape(-1, 3), np.array(cls, dtype=np.int64), np.zeros(len(cls), np.int64))
    vmap.integrate(sc, kf)
    return vmap


def block(x0, x1, y0=0, y1=2, z0=0, z1=2):
    return [(x, y, z) for x in range(x0, x1) for y in range(y0, y1) for z in range(z0, z1)]


def test_separated_blobs_become_two_nodes():
    m = map_from_keys({0: block(0, 3) + block(4, 7)})
    objs = ObjectSet(VOCAB, VS, radius=1, min_cluster_size=5)
    ch = objs.recluster(m)
    assert sorted(ch.created) == [1, 2] and len(objs) == 2
    # a radius that bridges the 1-voxel gap joins them
    wide = ObjectSet(VOCAB, VS, radius=2, min_cluster_size=5)
    wide.recluster(m)
    assert len(wide) == 1


def test_small_components_are_dropped():
    m = map_from_keys({1: block(0, 1, 0, 2, 0, 2) + block(10, 13)})
    objs = ObjectSet(VOCAB, VS, min_cluster_size=5)
    objs.recluster(m)
    assert [n.size for n in objs] == [12]


def test_split_keeps_id_on_larger_half():
    big, bridge, small = block(0, 6), block(6, 7), block(7, 10)
    m = map_from_keys({0: big + small}, kf=0)
    map_from_keys({0: bridge}, kf=1, vmap=m)
    objs = ObjectSet(VOCAB, VS)
    objs.recluster(m)
    (oid,) = [n.id for n in objs]
    s = m.retract(1)
    ch = objs.recluster(m, s.dirty())
    assert ch.updated == [oid] and len(ch.created) == 1
    assert objs[oid].voxels == frozenset(big)
    assert objs[ch.created[0]].voxels == frozenset(small)


def test_growth_keeps_ids():
    m = map_from_keys({0: block(0, 3), 1: block(10, 13)}, kf=0)
    objs = ObjectSet(VOCAB, VS)
    objs.recluster(m)
    ids = {n.class_id: n.id for n in objs}
    map_from_keys({0: block(3, 5), 1: block(13, 14)}, kf=1, vmap=m)
    objs.recluster(m)
    assert {n.class_id: n.id for n in objs} == ids


def test_node_invariants():
    m = map_from_keys({0: block(0, 4), 2: block(6, 9, 0, 3)})
    objs = ObjectSet(VOCAB, VS)
    objs.recluster(m)
    for n in objs:
        assert all(m.label(k) == n.class_id for k in n.voxels)
        assert np.all(n.aabb_min <= n.centroid) and np.all(n.centroid <= n.aabb_max)
        assert n.size >= objs.min_cluster_size
        assert n.level == ("large" if n.class_id <= 2 else "small")


def _labels_to_map(labels):
    keys = {}
    for k in np.argwhere(labels >= 0):
        keys.setdefault(int(labels[tuple(k)]), []).append(tuple(int(v) for v in k))
    return map_from_keys(keys) if keys else SemanticVoxelMap(VOCAB.num_classes, VS)


def _signature(objs):
    return {(n.class_id, n.voxels) for n in objs}


def test_random_30_cube_matches_union_find():
    rng = np.random.default_rng(5)
    labels = np.where(rng.random((30, 30, 30)) < 0.25, rng.integers(0, 3, (30, 30, 30)), -1)
    objs = ObjectSet(VOCAB, VS, min_cluster_size=1)
    objs.recluster(_labels_to_map(labels))
    assert _signature(objs) == oracles.grid_components(labels)


grids = st.integers(1, 8).flatmap(lambda n: arrays(np.int64, (n, n, n), elements=st.integers(-3, 2)))


@given(grids, st.integers(1, 2), st.integers(1, 4))
def test_clustering_matches_union_find(labels, radius, min_size):
    objs = ObjectSet(VOCAB, VS, radius=radius, min_cluster_size=min_size)
    objs.recluster(_labels_to_map(labels))
    ref = {c for c in oracles.grid_components(labels, radius) if len(c[1]) >= min_size}
    assert _signature(objs) == ref


@given(st.integers(1, 40))
def test_components_of_a_line(n):
    keys = np.array([(2 * i, 0, 0) for i in range(n)])
    assert len(voxel_components(keys, 1)) == n
    assert len(voxel_components(keys, 2)) == 1


# ------------------------------------------------------------ corrections
def _scene():
    return make_spec([(1, "table", (2.5, 0.0, 0.4), (0.8, 1.2, 0.8)),
                      (2, "chair", (2.5, 1.1, 0.45), (0.5, 0.5, 0.9)),
                      (3, "sofa", (0.0, 2.6, 0.4), (1.6, 0.8, 0.8))],
                     waypoints=orbit((1.2, 1.0), 2.8, 8), step_deg=45.0)


def _integrated(spec, records):
    m = SemanticVoxelMap(spec.vocab.num_classes, VS)
    objs = ObjectSet(spec.vocab, VS)
    poses, recs = {}, {}
    for rec in records:
        m.integrate(label_cloud(rec, spec.camera), rec.index)
        poses[rec.index] = rec.pose
        recs[rec.index] = rec
    objs.recluster(m)
    return m, objs, poses, recs


def test_identity_correction_is_noop():
    spec = _scene()
    recs = [render_keyframe(spec, k) for k in range(len(spec.trajectory))]
    m, objs, poses, by_idx = _integrated(spec, recs)
    before_map, before = m.state(), objs.voxel_signature()
    ids = sorted(n.id for n in objs)
    res = apply_correction(m, objs, PoseCorrectionEvent(len(recs) - 1, dict(poses)), by_idx, spec.camera, poses)
    assert not res.changes and res.clouds == {}
    assert m.state() == before_map and objs.voxel_signature() == before
    assert sorted(n.id for n in objs) == ids


def test_unknown_keyframe_correction_rejected():
    spec = _scene()
    recs = [render_keyframe(spec, 0)]
    m, objs, poses, by_idx = _integrated(spec, recs)
    with pytest.raises(KeyError):
        apply_correction(m, objs, PoseCorrectionEvent(3, {3: Pose()}), by_idx, spec.camera, poses)


def test_shifting_lone_keyframe_moves_objects_rigidly():
    spec = _scene()
    rec = render_keyframe(spec, 0)
    m, objs, poses, by_idx = _integrated(spec, [rec])
    before = [(n.class_id, n.centroid.copy()) for n in objs]
    shifted = Pose(rec.pose.rotation, tuple(np.add(rec.pose.translation, (1.0, 0.0, 0.0))))
    apply_correction(m, objs, PoseCorrectionEvent(0, {0: shifted}), by_idx, spec.camera, poses)
    after = [(n.class_id, n.centroid) for n in objs]
    assert len(after) == len(before)
    for cls, c in before:
        moved = [a for k, a in after if k == cls and np.all(np.abs(a - c - (1.0, 0.0, 0.0)) <= VS)]
        assert len(moved) == 1


def test_drifted_loop_equals_from_scratch():
    spec = make_spec([(b.instance, b.cls, b.center, b.size) for b in _scene().objects],
                     waypoints=orbit((1.2, 1.0), 2.8, 40), step_deg=9.0, loop_events=[(-1, 0.0)],
                     noise={"drift_trans": 0.02, "drift_rot_deg": 0.3})
    sim = simulate(spec)
    assert len(spec.trajectory) == 41
    pipe = fuse(spec, sim.items)
    final = {k: p for ev in sim.items if isinstance(ev, PoseCorrectionEvent) for k, p in ev.corrections.items()}
    scratch = fuse(spec, [r.with_pose(final[r.index]) for r in sim.items if not isinstance(r, PoseCorrectionEvent)])
    assert pipe.stats.corrected_keyframes > 0
    assert pipe.map.state() == scratch.map.state()
    assert pipe.objects.voxel_signature() == scratch.objects.voxel_signature()
    # reapplying the same event changes nothing
    ev = [e for e in sim.items if isinstance(e, PoseCorrectionEvent)][-1]
    res = apply_correction(pipe.map, pipe.objects, ev, pipe.records, spec.camera, pipe.poses)
    assert not res.changes and not res.clouds


# ------------------------------------------------------- single-frame centroid
def test_single_frame_centroid_of_fronto_parallel_face():
    lo_hi = ((3.0, 0.0, 0.5), (0.4, 0.8, 0.6))
    spec = make_spec([(1, "table",) + lo_hi], waypoints=[[0, 0, 0]],
                     camera={"fx": 60.0, "fy": 60.0, "cx": 32.0, "cy": 24.0, "width": 64, "height": 48,
                             "mount_height": 0.5, "pitch_deg": 0.0, "max_range": 10.0})
    rec = render_keyframe(spec, 0)
    (box,) = spec.objects
    eye = spec.camera.extrinsic.translation
    faces = oracles.visible_faces(box.lo, box.hi, eye)
    assert faces == [(0, 0)]
    ref = oracles.surface_centroid(box.lo, box.hi, faces)
    got = centroid_single_frame(rec, 1, spec.camera)
    assert np.linalg.norm(got - ref) <= VS


def test_single_pixel_instance(camera):
    from scenefuse.dataset import KeyframeRecord, PanopticImage
    from scenefuse.geometry import PointCloud, backproject, sensor_to_world
    imap = np.zeros((camera.height, camera.width), dtype=np.uint16)
    imap[10, 20] = 4
    p = backproject(20.5, 10.5, 2.5, camera)
    rec = KeyframeRecord(0, 0.0, Pose(), PointCloud(p[None], np.array([[10, 20]])),
                         PanopticImage(imap, {4: (1, 1.0)}))
    assert centroid_single_frame(rec, 4, camera) == pytest.approx(sensor_to_world(Pose(), camera).apply(p))
    with pytest.raises(KeyError):
        centroid_single_frame(rec, 5, camera)
