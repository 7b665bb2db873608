"""Keyframe-sequential fusion: label -> integrate -> recluster -> lift -> merge -> regions."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

from .dataset import Dataset, KeyframeRecord, PoseCorrectionEvent, Vocabulary
from .geometry import CameraModel, Pose
from .graph import SceneGraph, lift, partition_regions
from .objects import ObjectSet, apply_correction
from .voxel_map import SemanticVoxelMap, label_cloud

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class RunConfig:
    voxel_size: float = 0.10
    p_hit: float = 0.9
    c_max: int = 5
    r_c: int = 1
    min_cluster_size: int = 5
    v_min: int = 2
    f_min: float = 0.3
    d_max: float = 1.5
    speed: float = 0.7
    t_look: float = 8.0
    r_s: float = 2.0
    seed: int = 0
    ground_max_z: float = 0.10
    ground_min_hits: int = 2
    separator_margin: int = 1
    min_region_area: float = 1.0

    def __post_init__(self):
        positive = ("voxel_size", "c_max", "r_c", "min_cluster_size", "v_min", "d_max",
                    "speed", "t_look", "r_s", "ground_min_hits", "min_region_area")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.p_hit < 1.0:
            raise ValueError(f"p_hit must lie in (0, 1), got {self.p_hit}")
        if not 0.0 <= self.f_min <= 1.0:
            raise ValueError(f"f_min must lie in [0, 1], got {self.f_min}")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d).replace(**overrides)

    @classmethod
    def from_toml(cls, path: str, **overrides) -> "RunConfig":
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
        return cls.from_dict(d.get("run", d), **overrides)


@dataclass
class FusionStats:
    keyframes: int = 0
    corrections: int = 0
    corrected_keyframes: int = 0
    label_corrections: int = 0
    instances_resolved: int = 0
    instances_unresolved: int = 0
    wall_time: float = 0.0

    def as_dict(self, graph: SceneGraph) -> dict:
        d = dataclasses.asdict(self)
        d["objects"] = len(graph.object_nodes())
        d["edges"] = len(graph.accepted_edges())
        d["regions"] = len(graph.regions)
        return d


class FusionPipeline:
    def __init__(self, vocab: Vocabulary, camera: CameraModel, config: RunConfig = RunConfig()):
        self.vocab = vocab
        self.camera = camera
        self.config = config
        self.map = SemanticVoxelMap(vocab.num_classes, config.voxel_size, config.p_hit, config.c_max,
                                    config.ground_max_z, config.ground_min_hits)
        self.objects = ObjectSet(vocab, config.voxel_size, config.r_c, config.min_cluster_size)
        self.graph = SceneGraph(vocab, self.objects, config.v_min, config.f_min)
        self.records: Dict[int, KeyframeRecord] = {}
        self.poses: Dict[int, Pose] = {}
        self.stats = FusionStats()
        self.lift_reports = {}

    def process(self, item) -> None:
        t0 = time.perf_counter()
        if isinstance(item, PoseCorrectionEvent):
            self._apply_event(item)
        else:
            self._add_record(item)
        self.stats.wall_time += time.perf_counter() - t0

    def run(self, items: Iterable) -> "FusionPipeline":
        for item in items:
            self.process(item)
        return self

    def _regions(self) -> None:
        partition_regions(self.graph, self.map, self.objects, self.config.separator_margin,
                          self.config.min_region_area)

    def _add_record(self, rec: KeyframeRecord) -> None:
        sc = label_cloud(rec, self.camera)
        summary = self.map.integrate(sc, rec.index)
        self.records[rec.index] = rec
        self.poses[rec.index] = rec.pose
        if summary.relabeled:
            self.graph.sync(self.objects.recluster(self.map, summary.dirty()))
        lifted = lift(rec, sc, self.objects, self.map, self.config.f_min)
        self.lift_reports[rec.index] = (len(lifted.corrected), len(lifted.unresolved))
        self.stats.label_corrections += len(lifted.corrected)
        self.stats.instances_unresolved += len(lifted.unresolved)
        self.stats.instances_resolved += len(lifted.instances) - len(lifted.unresolved)
        self.graph.merge(lifted)
        self.stats.keyframes += 1
        self._regions()

    def _apply_event(self, event: PoseCorrectionEvent) -> None:
        res = apply_correction(self.map, self.objects, event, self.records, self.camera, self.poses)
        self.stats.corrections += 1
        if not res.clouds:
            return
        self.stats.corrected_keyframes += len(res.clouds)
        self.graph.sync(res.changes)
        for kf in sorted(res.clouds):
            self.graph.remove_keyframe(kf)
            rec = self.records[kf].with_pose(self.poses[kf])
            self.graph.merge(lift(rec, res.clouds[kf], self.objects, self.map, self.config.f_min))
        self._regions()


def fuse_dataset(ds: Dataset, config: RunConfig = RunConfig(),
                 poses: Optional[Dict[int, Pose]] = None) -> FusionPipeline:
    """Fuse a whole dataset. With ``poses`` given, every keyframe is integrated
    under that pose and correction events are skipped (a from-scratch build)."""
    pipe = FusionPipeline(ds.vocabulary, ds.camera, config)
    for item in ds:
        if poses is not None:
            if isinstance(item, PoseCorrectionEvent):
                continue
            item = item.with_pose(poses[item.index])
        pipe.process(item)
    return pipe
