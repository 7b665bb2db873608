"""Object nodes: same-label voxel clusters with stable ids."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .dataset import KeyframeRecord, PoseCorrectionEvent, Vocabulary
from .geometry import CameraModel, Pose
from .voxel_map import UNLABELED, Key, SemanticCloud, SemanticVoxelMap, UpdateSummary, label_cloud

log = logging.getLogger(__name__)

_CUBE = np.ones((3, 3, 3), dtype=bool)


def voxel_components(keys: np.ndarray, radius: int = 1) -> List[np.ndarray]:
    """Connected components of integer voxel keys.

    Two voxels are linked when their Chebyshev distance is at most ``radius``
    (``radius=1`` is 26-connectivity).  Returns index arrays into ``keys``,
    each sorted, ordered by their first index.
    """
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    n = len(keys)
    if n == 0:
        return []
    if radius == 1:
        lo = keys.min(axis=0)
        shape = tuple(keys.max(axis=0) - lo + 1)
        grid = np.zeros(shape, dtype=bool)
        local = keys - lo
        grid[local[:, 0], local[:, 1], local[:, 2]] = True
        lab, _ = ndimage.label(grid, structure=_CUBE)
        comp = lab[local[:, 0], local[:, 1], local[:, 2]]
    else:
        pairs = cKDTree(keys).query_pairs(radius + 0.5, p=np.inf, output_type="ndarray")
        adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, comp = connected_components(adj, directed=False)
    order = np.argsort(comp, kind="stable")
    splits = np.flatnonzero(np.diff(comp[order])) + 1
    groups = np.split(order, splits)
    groups.sort(key=lambda g: g[0])
    return groups


@dataclass
class ObjectNode:
    id: int
    class_id: int
    level: str
    voxels: FrozenSet[Key]
    centroid: np.ndarray
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    region: Optional[int] = None

    @classmethod
    def build(cls, oid: int, class_id: int, level: str, voxels: Iterable[Key],
              voxel_size: float) -> "ObjectNode":
        vox = frozenset(voxels)
        arr = np.array(sorted(vox), dtype=float)
        centers = (arr + 0.5) * voxel_size
        return cls(oid, class_id, level, vox, centers.mean(axis=0),
                   arr.min(axis=0) * voxel_size, (arr.max(axis=0) + 1) * voxel_size)

    @property
    def size(self) -> int:
        return len(self.voxels)


@dataclass
class ChangeList:
    created: List[int] = field(default_factory=list)
    updated: List[int] = field(default_factory=list)
    removed: List[int] = field(default_factory=list)
    # voxels whose owning object changed (including gained/lost ownership)
    moved_voxels: Set[Key] = field(default_factory=set)

    def __bool__(self) -> bool:
        return bool(self.created or self.updated or self.removed)

    def extend(self, other: "ChangeList") -> None:
        self.created.extend(other.created)
        self.updated.extend(other.updated)
        self.removed.extend(other.removed)
        self.moved_voxels |= other.moved_voxels


class ObjectSet:
    """The object set ``O``: clusters of same-label voxels.

    Ids survive re-clustering when a new component overlaps exactly one old
    same-class component by at least half of the smaller of the two; when
    several new components claim the same old id, the largest overlap keeps it.
    """

    def __init__(self, vocab: Vocabulary, voxel_size: float, radius: int = 1,
                 min_cluster_size: int = 5):
        self.vocab = vocab
        self.voxel_size = voxel_size
        self.radius = int(radius)
        self.min_cluster_size = int(min_cluster_size)
        self.nodes: Dict[int, ObjectNode] = {}
        self.owner: Dict[Key, int] = {}
        self._next_id = 1
        self.merges: List[Tuple[int, Tuple[int, ...]]] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes[k] for k in sorted(self.nodes))

    def __getitem__(self, oid: int) -> ObjectNode:
        return self.nodes[oid]

    def _level(self, class_id: int) -> str:
        return "large" if self.vocab.is_large(class_id) else "small"

    def recluster(self, vmap: SemanticVoxelMap, dirty: Optional[Iterable[Key]] = None) -> ChangeList:
        """Recompute components of every class touched by ``dirty`` (all classes when ``None``)."""
        if dirty is None:
            classes = set(vmap.by_label) | {n.class_id for n in self.nodes.values()}
        else:
            classes = set()
            for k in dirty:
                classes.add(vmap.label(k))
                if k in self.owner:
                    classes.add(self.nodes[self.owner[k]].class_id)
            classes.discard(UNLABELED)
        changes = ChangeList()
        for c in sorted(classes):
            self._recluster_class(vmap, c, changes)
        return changes

    def _recluster_class(self, vmap: SemanticVoxelMap, c: int, changes: ChangeList) -> None:
        members = vmap.by_label.get(c, ())
        comps: List[FrozenSet[Key]] = []
        if members:
            keys = sorted(members)
            arr = np.array(keys, dtype=np.int64)
            for idx in voxel_components(arr, self.radius):
                if len(idx) >= self.min_cluster_size:
                    comps.append(frozenset(keys[i] for i in idx.tolist()))
        old_ids = {oid for oid, n in self.nodes.items() if n.class_id == c}
        # first (smallest) key of each component, for tie-breaks
        firsts = [min(comp) for comp in comps]

        claims: Dict[int, List[Tuple[int, int]]] = {}
        candidates: List[List[int]] = []
        owner = self.owner
        for ci, comp in enumerate(comps):
            inter: Dict[int, int] = {}
            for k in comp:
                o = owner.get(k)
                if o is not None and o in old_ids:
                    inter[o] = inter.get(o, 0) + 1
            cands = sorted(o for o, m in inter.items()
                           if 2 * m >= min(len(comp), self.nodes[o].size))
            candidates.append(cands)
            if len(cands) == 1:
                claims.setdefault(cands[0], []).append((inter[cands[0]], ci))
            elif len(cands) > 1:
                log.info("class %d: component merges objects %s", c, cands)
        winner: Dict[int, int] = {}
        for oid, cl in claims.items():
            # largest overlap wins; ties go to the component with the smallest key
            best = max(cl, key=lambda mc: (mc[0], tuple(-v for v in firsts[mc[1]])))
            winner[best[1]] = oid

        new_nodes: Dict[int, ObjectNode] = {}
        for ci, comp in enumerate(comps):
            oid = winner.get(ci)
            if oid is not None and self.nodes[oid].voxels == comp:
                new_nodes[oid] = self.nodes[oid]
                continue
            if oid is None:
                oid = self._next_id
                self._next_id += 1
                if len(candidates[ci]) > 1:
                    self.merges.append((oid, tuple(candidates[ci])))
            new_nodes[oid] = ObjectNode.build(oid, c, self._level(c), comp, self.voxel_size)

        for oid in sorted(old_ids):
            old = self.nodes[oid]
            new = new_nodes.get(oid)
            if new is old:
                continue
            del self.nodes[oid]
            if new is None:
                changes.removed.append(oid)
                changes.moved_voxels |= old.voxels
            else:
                new.region = old.region
                changes.updated.append(oid)
                changes.moved_voxels |= old.voxels ^ new.voxels
            for k in old.voxels:
                if owner.get(k) == oid:
                    del owner[k]
        for oid in sorted(new_nodes):
            node = new_nodes[oid]
            if oid not in old_ids:
                changes.created.append(oid)
                changes.moved_voxels |= node.voxels
            if self.nodes.get(oid) is node:
                continue
            self.nodes[oid] = node
            for k in node.voxels:
                owner[k] = oid

    def voxel_signature(self) -> List[Tuple[int, Tuple[Key, ...]]]:
        """Id-free description of the object set: sorted (class, sorted voxels)."""
        return sorted((n.class_id, tuple(sorted(n.voxels))) for n in self.nodes.values())


@dataclass
class CorrectionResult:
    changes: ChangeList
    clouds: Dict[int, SemanticCloud]
    summary: UpdateSummary


def apply_correction(vmap: SemanticVoxelMap, objects: ObjectSet, event: PoseCorrectionEvent,
                     records: Mapping[int, KeyframeRecord], cam: CameraModel,
                     poses: Dict[int, Pose]) -> CorrectionResult:
    """Replay corrected keyframes under their new poses.

    ``poses`` maps each integrated keyframe to the pose it was integrated with
    and is updated in place.  Keyframes whose pose is unchanged are skipped, so
    re-applying an event is a no-op.
    """
    unknown = sorted(k for k in event.corrections if k not in vmap)
    if unknown:
        raise KeyError(f"correction references keyframes never integrated: {unknown}")
    summary = UpdateSummary()
    clouds: Dict[int, SemanticCloud] = {}
    todo = [kf for kf in sorted(event.corrections) if poses.get(kf) != event.corrections[kf]]
    # retract everything first and relabel once at the end: the final labels
    # depend only on the final evidence, so intermediate relabels are wasted work
    for kf in todo:
        summary.extend(vmap.retract(kf, refresh=False))
    for kf in todo:
        pose = event.corrections[kf]
        sc = label_cloud(records[kf].with_pose(pose), cam)
        summary.extend(vmap.integrate(sc, kf, refresh=False))
        poses[kf] = pose
        clouds[kf] = sc
    vmap.refresh(summary)
    changes = objects.recluster(vmap, summary.dirty()) if summary.relabeled else ChangeList()
    return CorrectionResult(changes, clouds, summary)


def centroid_single_frame(rec: KeyframeRecord, instance: int, cam: CameraModel) -> np.ndarray:
    """Mean world point of one instance's mask in a single keyframe."""
    if instance not in rec.panoptic.instance_table:
        raise KeyError(f"instance {instance} absent from keyframe {rec.index}")
    sc = label_cloud(rec, cam)
    pts = sc.points[sc.instances == instance]
    if len(pts) == 0:
        raise ValueError(f"instance {instance} has no backprojectable points in keyframe {rec.index}")
    return pts.mean(axis=0)
