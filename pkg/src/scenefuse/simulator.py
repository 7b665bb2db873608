"""Deterministic box-world simulator producing keyframe datasets with ground truth.

All randomness comes from one seed split into named streams (label flips,
relation flips, depth noise, pose drift, loop residuals), so changing one noise
level never perturbs the draws of another.
"""
from __future__ import annotations

import json
import math
import os
import zlib
from functools import cached_property
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .dataset import (KeyframeRecord, PanopticImage, PoseCorrectionEvent, RelationObservation,
                      Vocabulary, write_dataset)
from .geometry import Z_MIN, CameraModel, PointCloud, Pose, sensor_to_world

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class SceneSpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Box:
    cls: str
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    instance: int = 0
    level: str = ""

    @cached_property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2

    @cached_property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2


@dataclass(frozen=True)
class NoiseSpec:
    p_flip: float = 0.0
    p_flip_relation: Optional[float] = None
    sigma_d: float = 0.0
    erosion: int = 0
    drift_trans: float = 0.0   # m per keyframe, per axis std
    drift_rot: float = 0.0     # rad per keyframe, std

    @property
    def relation_flip(self) -> float:
        return self.p_flip if self.p_flip_relation is None else self.p_flip_relation


@dataclass(frozen=True)
class RelationRules:
    eps_z: float = 0.05
    d_beside: float = 0.5
    attach_overlap: float = 0.8
    attach_gap: float = 0.01
    on_overlap: float = 0.5
    p_vis: int = 20
    d_view: float = 2.0


@dataclass(frozen=True)
class SceneSpec:
    name: str
    seed: int
    vocab: Vocabulary
    camera: CameraModel
    objects: Tuple[Box, ...]
    landmarks: Tuple[Box, ...] = ()
    structure: Tuple[Box, ...] = ()
    regions: Tuple[Tuple[str, Tuple[Tuple[float, float], ...]], ...] = ()
    trajectory: Tuple[Pose, ...] = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    loop_events: Tuple[Tuple[int, float], ...] = ()
    rules: RelationRules = field(default_factory=RelationRules)
    max_range: float = 20.0
    keyframe_dt: float = 1.0
    # recommended fusion settings for this scene, as (name, value) pairs
    run: Tuple[Tuple[str, object], ...] = ()

    def __post_init__(self):
        ids = [b.instance for b in self.objects + self.landmarks]
        if len(set(ids)) != len(ids):
            raise SceneSpecError("objects", "instance ids must be unique")
        if any(i <= 0 or i > 65535 for i in ids):
            raise SceneSpecError("objects", "instance ids must lie in [1, 65535]")
        for b in self.objects + self.landmarks + self.structure:
            if min(b.size) <= 0:
                raise SceneSpecError("objects", f"box {b.cls}#{b.instance} has non-positive extent")
        for b in self.labeled_boxes:
            if b.cls not in self.vocab.classes:
                raise SceneSpecError("objects", f"unknown class {b.cls!r}")
        n = self.noise
        if not 0.0 <= n.p_flip < 0.5:
            raise SceneSpecError("p_flip", f"must lie in [0, 0.5), got {n.p_flip}")
        if not 0.0 <= n.relation_flip < 0.5:
            raise SceneSpecError("p_flip_relation", f"must lie in [0, 0.5), got {n.relation_flip}")
        if n.sigma_d < 0:
            raise SceneSpecError("sigma_d", f"must be non-negative, got {n.sigma_d}")
        if n.erosion < 0:
            raise SceneSpecError("erosion", "must be non-negative")
        if n.drift_trans < 0 or n.drift_rot < 0:
            raise SceneSpecError("drift", "drift rates must be non-negative")
        for trig, res in self.loop_events:
            if not 0 <= trig < max(len(self.trajectory), 1) or res < 0:
                raise SceneSpecError("loop_events", f"bad event ({trig}, {res})")

    def with_noise(self, **kw) -> "SceneSpec":
        return replace(self, noise=replace(self.noise, **kw))

    @property
    def labeled_boxes(self) -> Tuple[Box, ...]:
        return self.objects + self.landmarks

    @cached_property
    def truth_relations(self) -> List[Tuple[int, str, int]]:
        return ground_truth_relations(self)


# ---------------------------------------------------------------- loading
def _densify(waypoints: Sequence[Sequence[float]], step_m: float, step_deg: float) -> List[Tuple[float, float, float]]:
    out: List[Tuple[float, float, float]] = []
    for i, (x, y, yaw) in enumerate(waypoints):
        if i == 0:
            out.append((x, y, yaw))
            continue
        x0, y0, a0 = waypoints[i - 1]
        da = (yaw - a0 + 180.0) % 360.0 - 180.0
        n = max(1, math.ceil(math.hypot(x - x0, y - y0) / step_m - 1e-9),
                math.ceil(abs(da) / step_deg - 1e-9))
        for j in range(1, n + 1):
            f = j / n
            out.append((x0 + f * (x - x0), y0 + f * (y - y0), a0 + f * da))
    return out


def _box(d: dict, level: str = "") -> Box:
    return Box(str(d.get("class", "")), tuple(float(v) for v in d["center"]),
               tuple(float(v) for v in d["size"]), int(d.get("id", 0)), d.get("level", level))


def spec_from_dict(d: dict) -> SceneSpec:
    try:
        vocab = Vocabulary.from_dict(d["vocabulary"])
    except (KeyError, ValueError) as exc:
        raise SceneSpecError("vocabulary", str(exc)) from None
    c = d.get("camera", {})
    try:
        cam = CameraModel.mounted(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                                  int(c["width"]), int(c["height"]), float(c.get("mount_height", 1.0)),
                                  math.radians(float(c.get("pitch_deg", 0.0))))
    except (KeyError, ValueError) as exc:
        raise SceneSpecError("camera", str(exc)) from None
    nz = d.get("noise", {})
    noise = NoiseSpec(float(nz.get("p_flip", 0.0)),
                      None if "p_flip_relation" not in nz else float(nz["p_flip_relation"]),
                      float(nz.get("sigma_d", 0.0)), int(nz.get("erosion", 0)),
                      float(nz.get("drift_trans", 0.0)), math.radians(float(nz.get("drift_rot_deg", 0.0))))
    rules = RelationRules(**d.get("relations", {}))
    t = d.get("trajectory", {})
    wps = t.get("waypoints", [])
    poses = tuple(Pose.from_xyz_rpy(x, y, 0.0, yaw=math.radians(a))
                  for x, y, a in _densify(wps, float(t.get("step_m", 0.5)), float(t.get("step_deg", 30.0))))
    events = []
    for trig, res in t.get("loop_events", []):
        trig = int(trig)
        if trig < 0:
            trig += len(poses)
        events.append((trig, float(res)))

    def level(cls):
        return "large" if cls in vocab.large_classes else "small"

    objects = tuple(_box(o, level(o.get("class", ""))) for o in d.get("objects", []))
    landmarks = tuple(_box(o, "landmark") for o in d.get("landmarks", []))
    structure = tuple(_box(o) for o in d.get("structure", []))
    regions = tuple((r["name"], tuple(tuple(float(v) for v in p) for p in r["polygon"]))
                    for r in d.get("regions", []))
    return SceneSpec(
        name=str(d.get("name", "scene")), seed=int(d.get("seed", 0)), vocab=vocab, camera=cam,
        objects=objects, landmarks=landmarks, structure=structure, regions=regions,
        trajectory=poses, noise=noise, loop_events=tuple(events), rules=rules,
        max_range=float(c.get("max_range", 20.0)), keyframe_dt=float(t.get("dt", 1.0)),
        run=tuple(sorted(d.get("run", {}).items())),
    )


def load_spec(path: str) -> SceneSpec:
    with open(path, "rb") as fh:
        try:
            d = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SceneSpecError("toml", str(exc)) from None
    return spec_from_dict(d)


def bundled_spec_path(name: str) -> str:
    return os.path.join(os.path.dirname(__file__), "data", f"{name}.toml")


def bundled_spec(name: str) -> SceneSpec:
    return load_spec(bundled_spec_path(name))


# ----------------------------------------------------------- ground truth
@dataclass
class ScenarioTruth:
    objects: List[dict]
    landmarks: List[dict]
    triplets: List[Tuple[int, str, int]]
    regions: List[dict]

    def to_dict(self) -> dict:
        return {"objects": self.objects, "landmarks": self.landmarks,
                "triplets": [list(t) for t in self.triplets], "regions": self.regions}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioTruth":
        return cls(d["objects"], d.get("landmarks", []),
                   [(int(s), str(p), int(o)) for s, p, o in d["triplets"]], d.get("regions", []))

    @classmethod
    def load(cls, path: str) -> "ScenarioTruth":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def object(self, instance: int) -> dict:
        for o in self.objects:
            if o["id"] == instance:
                return o
        raise KeyError(f"instance {instance} not in truth")


def _point_in_polygon(x: float, y: float, poly: Sequence[Tuple[float, float]]) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
            inside = not inside
    return inside


def ground_truth_relations(spec: SceneSpec) -> List[Tuple[int, str, int]]:
    """Rule-based view-independent triplets ``(subject, predicate, object)``.

    ``on``: subject's bottom within ``eps_z`` of the object's top and at least
    ``on_overlap`` of the subject's footprint over it.  ``attached to``: vertical
    faces in contact (gap <= ``attach_gap``) sharing at least ``attach_overlap``
    of the smaller face; the smaller box is the subject.  ``beside`` (symmetric,
    lower id first): footprint gap <= ``d_beside``, positive vertical overlap,
    and neither of the other two.
    """
    r = spec.rules
    boxes = sorted(spec.objects, key=lambda b: b.instance)
    out = set()
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            found = False
            for s, o in ((a, b), (b, a)):
                if abs(s.lo[2] - o.hi[2]) <= r.eps_z:
                    ox = max(0.0, min(s.hi[0], o.hi[0]) - max(s.lo[0], o.lo[0]))
                    oy = max(0.0, min(s.hi[1], o.hi[1]) - max(s.lo[1], o.lo[1]))
                    if ox * oy >= r.on_overlap * s.size[0] * s.size[1]:
                        out.add((s.instance, "on", o.instance))
                        found = True
            if found:
                continue
            gx = max(0.0, max(a.lo[0], b.lo[0]) - min(a.hi[0], b.hi[0]))
            gy = max(0.0, max(a.lo[1], b.lo[1]) - min(a.hi[1], b.hi[1]))
            vz = min(a.hi[2], b.hi[2]) - max(a.lo[2], b.lo[2])
            if vz <= 0:
                continue
            attached = False
            for axis, gap in ((0, gx), (1, gy)):
                other = 1 - axis
                if gap <= r.attach_gap and (gx if axis == 1 else gy) == 0.0:
                    ov = min(a.hi[other], b.hi[other]) - max(a.lo[other], b.lo[other])
                    fa = a.size[other] * a.size[2]
                    fb = b.size[other] * b.size[2]
                    if ov > 0 and ov * vz >= r.attach_overlap * min(fa, fb):
                        attached = True
            if attached:
                va, vb = np.prod(a.size), np.prod(b.size)
                s, o = (a, b) if (va, a.instance) < (vb, b.instance) else (b, a)
                out.add((s.instance, "attached to", o.instance))
            elif math.hypot(gx, gy) <= r.d_beside:
                out.add((a.instance, "beside", b.instance))
    return sorted(out, key=lambda t: (t[0], t[2], t[1]))


def scenario_truth(spec: SceneSpec) -> ScenarioTruth:
    def region_of(center):
        for idx, (_name, poly) in enumerate(spec.regions):
            if _point_in_polygon(center[0], center[1], poly):
                return idx
        return None

    def entry(b: Box) -> dict:
        return {"id": b.instance, "class": b.cls, "level": b.level,
                "centroid": [float(v) for v in b.center],
                "aabb": {"min": [float(v) for v in b.lo], "max": [float(v) for v in b.hi]},
                "region": region_of(b.center)}

    return ScenarioTruth(
        objects=[entry(b) for b in sorted(spec.objects, key=lambda b: b.instance)],
        landmarks=[entry(b) for b in sorted(spec.landmarks, key=lambda b: b.instance)],
        triplets=ground_truth_relations(spec),
        regions=[{"id": i, "name": n, "polygon": [list(p) for p in poly]}
                 for i, (n, poly) in enumerate(spec.regions)],
    )


# -------------------------------------------------------------- rendering
def _ray_boxes(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Entry parameter of each ray into each box (inf on miss). ``dirs`` is (N, 3), boxes (M, 3)."""
    d = np.where(np.abs(dirs) < 1e-15, 1e-15, dirs)
    inv = 1.0 / d
    tnear = tfar = None
    for ax in range(3):
        a = np.outer(inv[:, ax], lo[:, ax] - origin[ax])
        b = np.outer(inv[:, ax], hi[:, ax] - origin[ax])
        near = np.minimum(a, b)
        far = np.maximum(a, b, out=a)
        if tnear is None:
            tnear, tfar = near, far
        else:
            np.maximum(tnear, near, out=tnear)
            np.minimum(tfar, far, out=tfar)
    hit = (tnear <= tfar) & (tnear > Z_MIN)
    tnear[~hit] = np.inf
    return tnear


def _pixel_rays(cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:cam.height, 0:cam.width]
    rows, cols = rows.ravel(), cols.ravel()
    dirs = np.column_stack([(cols + 0.5 - cam.cx) / cam.fx, (rows + 0.5 - cam.cy) / cam.fy,
                            np.ones(len(rows))])
    return np.column_stack([rows, cols]), dirs


def render_keyframe(spec: SceneSpec, index: int, pose: Optional[Pose] = None) -> KeyframeRecord:
    """Noise-free keyframe seen from trajectory pose ``index``.

    The record's pose is the ground-truth pose unless ``pose`` overrides it
    (the geometry is always rendered from the ground truth).
    """
    gt = spec.trajectory[index]
    cam = spec.camera
    cw = sensor_to_world(gt, cam)
    pix, dirs_c = _pixel_rays(cam)
    dirs_w = dirs_c @ cw.matrix.T
    origin = np.asarray(cw.translation)
    boxes = list(spec.labeled_boxes) + list(spec.structure)
    ids = np.array([b.instance for b in spec.labeled_boxes] + [0] * len(spec.structure))
    if boxes:
        lo = np.array([b.lo for b in boxes])
        hi = np.array([b.hi for b in boxes])
        # drop boxes entirely behind the image plane, out of range, or with all
        # corners outside one side plane of the view pyramid
        corners = np.stack([np.where(np.array(m)[None, :], hi, lo)
                            for m in np.ndindex(2, 2, 2)], axis=1)
        cc = (corners - origin) @ cw.matrix
        x, y, z = cc[..., 0], cc[..., 1], cc[..., 2]
        keep = (z.max(axis=1) > Z_MIN) & (z.min(axis=1) <= spec.max_range)
        keep &= (cam.fx * x + cam.cx * z).max(axis=1) >= 0
        keep &= (cam.fx * x + (cam.cx - cam.width) * z).min(axis=1) <= 0
        keep &= (cam.fy * y + cam.cy * z).max(axis=1) >= 0
        keep &= (cam.fy * y + (cam.cy - cam.height) * z).min(axis=1) <= 0
        if not keep.any():
            keep[0] = True
        lo, hi, ids = lo[keep], hi[keep], ids[keep]
        t = _ray_boxes(origin, dirs_w, lo, hi)
        which = np.argmin(t, axis=1)
        depth = t[np.arange(len(t)), which]
    else:
        which = np.zeros(len(dirs_c), dtype=int)
        depth = np.full(len(dirs_c), np.inf)
    hit = depth <= spec.max_range
    inst = np.where(hit, ids[which] if len(ids) else 0, 0)

    imap = inst.reshape(cam.height, cam.width).astype(np.uint16)
    pts = (dirs_c[hit] * depth[hit, None]).astype(np.float32).astype(np.float64)
    cloud = PointCloud(pts, pix[hit])

    vocab = spec.vocab
    by_id = {b.instance: b for b in spec.labeled_boxes}
    counts = dict(zip(*np.unique(inst[inst > 0], return_counts=True)))
    counts = {int(k): int(v) for k, v in counts.items()}
    table = {i: (vocab.class_id(by_id[i].cls), 1.0) for i in sorted(counts)}

    object_ids = {b.instance for b in spec.objects}
    visible = {i for i, n in counts.items() if n >= spec.rules.p_vis and i in object_ids}
    rels = []
    gt_pairs = set()
    for s, p, o in spec.truth_relations:
        gt_pairs.add((min(s, o), max(s, o)))
        if s in visible and o in visible:
            rels.append(RelationObservation(s, o, vocab.predicate_id(p), 1.0))
    if "in front of" in vocab.predicates:
        mean_depth = {}
        for i in visible:
            mean_depth[i] = float(depth[inst == i].mean())
        vis = sorted(visible)
        front = vocab.predicate_id("in front of")
        for a_i, a in enumerate(vis):
            for b in vis[a_i + 1:]:
                if (a, b) in gt_pairs:
                    continue
                if np.linalg.norm(np.subtract(by_id[a].center, by_id[b].center)) > spec.rules.d_view:
                    continue
                near, far = (a, b) if mean_depth[a] <= mean_depth[b] else (b, a)
                rels.append(RelationObservation(near, far, front, 1.0))
    return KeyframeRecord(index, index * spec.keyframe_dt, pose if pose is not None else gt,
                          cloud, PanopticImage(imap, table), tuple(rels))


# ------------------------------------------------------------------ noise
def named_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass
class NoiseLog:
    label_flips: List[Tuple[int, int, int, int]] = field(default_factory=list)   # kf, inst, from, to
    relation_flips: List[Tuple[int, int, int, int]] = field(default_factory=list)  # kf, rel idx, from, to
    instances_seen: int = 0
    relations_seen: int = 0


def corrupt(rec: KeyframeRecord, spec: SceneSpec, rngs: Dict[str, np.random.Generator],
            log: Optional[NoiseLog] = None) -> KeyframeRecord:
    """Apply mask erosion, whole-instance label flips, depth jitter and predicate flips."""
    noise = spec.noise
    vocab = spec.vocab
    log = log if log is not None else NoiseLog()
    imap = rec.panoptic.instance_map.copy()
    table = dict(rec.panoptic.instance_table)

    if noise.erosion > 0:
        for iid in sorted(table):
            mask = imap == iid
            kept = ndimage.binary_erosion(mask, iterations=noise.erosion)
            imap[mask & ~kept] = 0
            if not kept.any():
                del table[iid]

    flippable = [c for c, name in enumerate(vocab.classes) if name not in vocab.landmark_classes]
    lab = rngs["labels"]
    for iid in sorted(table):
        log.instances_seen += 1
        cls, conf = table[iid]
        if lab.random() < noise.p_flip:
            choices = [c for c in flippable if c != cls]
            new = int(choices[lab.integers(len(choices))])
            table[iid] = (new, conf)
            log.label_flips.append((rec.index, iid, cls, new))

    pts = rec.cloud.points
    if noise.sigma_d > 0 and len(pts):
        z = pts[:, 2]
        jitter = rngs["depth"].normal(0.0, noise.sigma_d, size=len(z))
        z_new = np.maximum(z + jitter, 2 * Z_MIN)
        pts = (pts * (z_new / z)[:, None]).astype(np.float32).astype(np.float64)

    rel_rng = rngs["relations"]
    rels = []
    for n, r in enumerate(rec.relations):
        if r.subject not in table or r.object not in table:
            continue
        log.relations_seen += 1
        pred = r.predicate
        if rel_rng.random() < noise.relation_flip:
            choices = [p for p in range(len(vocab.predicates)) if p != pred]
            pred = int(choices[rel_rng.integers(len(choices))])
            log.relation_flips.append((rec.index, n, r.predicate, pred))
        rels.append(RelationObservation(r.subject, r.object, pred, r.confidence))
    return KeyframeRecord(rec.index, rec.timestamp, rec.pose, PointCloud(pts, rec.cloud.pixels),
                          PanopticImage(imap, table), tuple(rels))


def drift_poses(spec: SceneSpec) -> Tuple[List[Pose], List[PoseCorrectionEvent]]:
    """Odometry-style random-walk estimate of the trajectory plus loop-closure events.

    Each step composes the true relative motion with a perturbation
    ``N(0, drift_trans)`` per horizontal axis and ``N(0, drift_rot)`` in yaw.
    At a loop event every pose up to the trigger is replaced by truth composed
    with a fixed horizontal residual of the configured magnitude, and the
    estimate continues from the corrected trigger pose.
    """
    gt = list(spec.trajectory)
    noise = spec.noise
    drifting = noise.drift_trans > 0 or noise.drift_rot > 0
    rng = named_rng(spec.seed, "drift")
    res_rng = named_rng(spec.seed, "residual")
    events_at = dict(spec.loop_events)
    est: List[Pose] = []
    events: List[PoseCorrectionEvent] = []
    cur: Optional[Pose] = None
    for k, pose in enumerate(gt):
        if cur is None or not drifting:
            cur = pose
        else:
            rel = gt[k - 1].inverse().compose(pose)
            dx, dy = rng.normal(0.0, noise.drift_trans, size=2)
            dyaw = rng.normal(0.0, noise.drift_rot)
            cur = cur.compose(rel).compose(Pose.from_xyz_rpy(dx, dy, 0.0, yaw=dyaw))
        est.append(cur)
        if k in events_at:
            mag = events_at[k]
            if mag > 0:
                ang = res_rng.uniform(0.0, 2 * math.pi)
                offset = Pose.from_xyz_rpy(mag * math.cos(ang), mag * math.sin(ang), 0.0)
                corr = {j: offset.compose(gt[j]) for j in range(k + 1)}
            else:
                corr = {j: gt[j] for j in range(k + 1)}
            events.append(PoseCorrectionEvent(k, corr))
            cur = corr[k]
    return est, events


# ----------------------------------------------------------------- output
@dataclass
class Simulation:
    items: List[object]
    truth: ScenarioTruth
    log: NoiseLog
    true_poses: List[Pose]


def simulate(spec: SceneSpec) -> Simulation:
    est, events = drift_poses(spec)
    by_trigger: Dict[int, List[PoseCorrectionEvent]] = {}
    for ev in events:
        by_trigger.setdefault(ev.trigger, []).append(ev)
    rngs = {name: named_rng(spec.seed, name) for name in ("labels", "relations", "depth")}
    log = NoiseLog()
    items: List[object] = []
    for k in range(len(spec.trajectory)):
        rec = corrupt(render_keyframe(spec, k, est[k]), spec, rngs, log)
        items.append(rec)
        items.extend(by_trigger.get(k, []))
    return Simulation(items, scenario_truth(spec), log, list(spec.trajectory))


def generate(spec: SceneSpec, out_dir: str) -> Simulation:
    """Write the dataset, ``truth.json`` and ``noise_log.json`` into ``out_dir``."""
    sim = simulate(spec)
    write_dataset(out_dir, spec.vocab, spec.camera, sim.items, cloud_has_pixels=True,
                  extra={"scene": spec.name, "seed": spec.seed, "run": dict(spec.run),
                         "true_poses": [p.to_list() for p in sim.true_poses]})
    with open(os.path.join(out_dir, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump({**sim.truth.to_dict(), "scene": spec.name, "seed": spec.seed}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "noise_log.json"), "w", encoding="utf-8") as fh:
        json.dump({"label_flips": sim.log.label_flips, "relation_flips": sim.log.relation_flips,
                   "instances_seen": sim.log.instances_seen,
                   "relations_seen": sim.log.relations_seen}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return sim
