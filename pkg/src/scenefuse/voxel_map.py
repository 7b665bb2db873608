"""Sparse semantic voxel map with exact, retractable Bayesian label evidence.

Every observation of class ``o`` in a voxel multiplies the categorical
likelihood of each class ``c`` by ``p_hit`` if ``c == o`` and by
``(1 - p_hit) / (K - 1)`` otherwise.  Up to a constant shared by all classes
the log posterior of ``c`` is therefore ``n_c * w`` with
``w = log(p_hit) - log((1 - p_hit) / (K - 1))``, so a voxel only has to keep
integer observation counts.  Integer counts make integration order-free and
retraction bit-exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from .dataset import KeyframeRecord
from .geometry import CameraModel, project_many, sensor_to_world

Key = Tuple[int, int, int]
Cell2 = Tuple[int, int]

UNLABELED = -1


@dataclass(frozen=True, eq=False)
class SemanticCloud:
    """World-frame labeled points of one keyframe.

    ``unlabeled`` keeps the world points that hit unlabeled pixels; they carry no
    class evidence but mark the ground as explored for region partitioning.
    """

    points: np.ndarray
    classes: np.ndarray
    instances: np.ndarray
    unlabeled: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.points)


def unique_rows(rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Lexicographically sorted unique rows of an integer array and their counts.

    Same result as ``np.unique(rows, axis=0, return_counts=True)`` but packs
    each row into one int64 first, which is much faster.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        return rows.reshape(0, rows.shape[1]), np.zeros(0, dtype=np.int64)
    lo = rows.min(axis=0)
    span = rows.max(axis=0) - lo + 1
    if np.prod(span.astype(float)) >= 2.0 ** 62:
        return np.unique(rows, axis=0, return_counts=True)
    code = np.zeros(len(rows), dtype=np.int64)
    for j in range(rows.shape[1]):
        code = code * span[j] + (rows[:, j] - lo[j])
    ucode, counts = np.unique(code, return_counts=True)
    out = np.empty((len(ucode), rows.shape[1]), dtype=np.int64)
    for j in range(rows.shape[1] - 1, -1, -1):
        ucode, out[:, j] = np.divmod(ucode, span[j])
        out[:, j] += lo[j]
    return out, counts


def label_cloud(rec: KeyframeRecord, cam: CameraModel) -> SemanticCloud:
    """Attach panoptic labels to the keyframe's points and move them to the world frame."""
    pts = rec.cloud.points
    imap = rec.panoptic.instance_map
    h, w = imap.shape
    if rec.cloud.pixels is not None:
        rows, cols = rec.cloud.pixels[:, 0], rec.cloud.pixels[:, 1]
        hit = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    else:
        uv, hit = project_many(pts, cam)
        # clamp: projection admits a rounding hair below zero at the image edge
        cols = np.where(hit, np.maximum(np.floor(np.nan_to_num(uv[:, 0])), 0), 0).astype(np.int64)
        rows = np.where(hit, np.maximum(np.floor(np.nan_to_num(uv[:, 1])), 0), 0).astype(np.int64)
        hit &= (rows < h) & (cols < w)
    ids = np.zeros(len(pts), dtype=np.int64)
    ids[hit] = imap[rows[hit], cols[hit]]

    table = rec.panoptic.instance_table
    lut = np.full(max([0] + list(table)) + 1, UNLABELED, dtype=np.int64)
    for iid, (cls, _conf) in table.items():
        lut[iid] = cls
    classes = np.full(len(pts), UNLABELED, dtype=np.int64)
    known = hit & (ids < len(lut))
    classes[known] = lut[ids[known]]
    labeled = classes != UNLABELED

    to_world = sensor_to_world(rec.pose, cam)
    world = to_world.apply(pts) if len(pts) else np.zeros((0, 3))
    return SemanticCloud(
        points=world[labeled],
        classes=classes[labeled],
        instances=ids[labeled],
        unlabeled=world[hit & ~labeled],
        dropped=int(len(pts) - labeled.sum()),
    )


@dataclass
class VoxelCell:
    counts: Dict[int, int] = field(default_factory=dict)
    # (keyframe, class) -> saturated observation count
    contributors: Dict[Tuple[int, int], int] = field(default_factory=dict)
    label: int = UNLABELED

    @property
    def last_update(self) -> int:
        """Most recent keyframe still contributing evidence."""
        return max((kf for kf, _c in self.contributors), default=-1)


@dataclass
class UpdateSummary:
    touched: Set[Key] = field(default_factory=set)
    # (key, old label, new label); UNLABELED stands for "no voxel"
    relabeled: List[Tuple[Key, int, int]] = field(default_factory=list)

    def dirty(self) -> Set[Key]:
        return {k for k, _o, _n in self.relabeled}

    def extend(self, other: "UpdateSummary") -> None:
        self.touched |= other.touched
        self.relabeled.extend(other.relabeled)


class SemanticVoxelMap:
    def __init__(self, num_classes: int, voxel_size: float = 0.10, p_hit: float = 0.9,
                 c_max: int = 5, ground_max_z: float = 0.10, ground_min_hits: int = 2):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        if not 0.0 < p_hit < 1.0:
            raise ValueError("p_hit must lie in (0, 1)")
        if voxel_size <= 0 or c_max < 1:
            raise ValueError("voxel_size and c_max must be positive")
        self.num_classes = num_classes
        self.voxel_size = float(voxel_size)
        self.p_hit = float(p_hit)
        self.c_max = int(c_max)
        self.ground_max_z = float(ground_max_z)
        self.ground_min_hits = int(ground_min_hits)
        self.weight = math.log(p_hit) - math.log((1.0 - p_hit) / (num_classes - 1))
        self.cells: Dict[Key, VoxelCell] = {}
        self.by_label: Dict[int, Set[Key]] = {}
        self._provenance: Dict[int, List[Tuple[Key, int, int]]] = {}
        self._ground: Dict[int, Dict[Cell2, int]] = {}
        self.ground_hits: Dict[Cell2, int] = {}
        self.explored: Set[Cell2] = set()
        # bumped whenever the explored set changes
        self.explored_version = 0
        self.points_integrated = 0

    # ------------------------------------------------------------------ keys
    def key_of(self, points: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(points, dtype=float) / self.voxel_size).astype(np.int64)

    def center_of(self, keys) -> np.ndarray:
        return (np.asarray(keys, dtype=float) + 0.5) * self.voxel_size

    @property
    def keyframes(self) -> List[int]:
        return sorted(self._provenance)

    def __contains__(self, kf: int) -> bool:
        return kf in self._provenance

    def __len__(self) -> int:
        return len(self.cells)

    def label(self, key: Key) -> int:
        cell = self.cells.get(key)
        return UNLABELED if cell is None else cell.label

    # ---------------------------------------------------------- evidence
    def evidence(self, key: Key) -> Dict[int, float]:
        """Accumulated log-weight per observed class (relative to unobserved classes)."""
        cell = self.cells[key]
        return {c: n * self.weight for c, n in sorted(cell.counts.items())}

    def posterior(self, key: Key) -> np.ndarray:
        """Normalized class probabilities over all ``num_classes`` classes."""
        logp = np.zeros(self.num_classes)
        cell = self.cells.get(key)
        if cell is not None:
            for c, n in cell.counts.items():
                logp[c] = n * self.weight
        logp -= logp.max()
        p = np.exp(logp)
        return p / p.sum()

    def _relabel(self, key: Key, cell: VoxelCell) -> int:
        top = max(cell.counts.values())
        tied = [c for c, n in cell.counts.items() if n == top]
        if len(tied) == 1:
            return tied[0]
        recent = {c: -1 for c in tied}
        for kf, c in cell.contributors:
            if c in recent and kf > recent[c]:
                recent[c] = kf
        return max(tied, key=lambda c: (recent[c], -c))

    def _set_label(self, key: Key, old: int, new: int) -> None:
        if old != UNLABELED:
            s = self.by_label[old]
            s.discard(key)
            if not s:
                del self.by_label[old]
        if new != UNLABELED:
            self.by_label.setdefault(new, set()).add(key)

    # ------------------------------------------------------------- updates
    def integrate(self, sc: SemanticCloud, kf: int, refresh: bool = True) -> UpdateSummary:
        """Add one keyframe's labeled points.

        With ``refresh=False`` labels are left stale and the caller must pass
        the returned summary to :meth:`refresh` once its batch is complete.
        """
        if kf in self._provenance:
            raise ValueError(f"keyframe {kf} already integrated")
        summary = UpdateSummary()
        entries: List[Tuple[Key, int, int]] = []
        if len(sc):
            keys = self.key_of(sc.points)
            rows = np.column_stack([keys, sc.classes.astype(np.int64)])
            uniq, counts = unique_rows(rows)
            np.minimum(counts, self.c_max, out=counts)
            entries = [((ix, iy, iz), c, n) for (ix, iy, iz, c), n in zip(uniq.tolist(), counts.tolist())]
        self._provenance[kf] = entries
        self.points_integrated += len(sc)

        cells = self.cells
        touched = summary.touched
        for key, c, n in entries:
            cell = cells.get(key)
            if cell is None:
                cell = cells[key] = VoxelCell()
            cell.counts[c] = cell.counts.get(c, 0) + n
            cell.contributors[(kf, c)] = n
            touched.add(key)
        if refresh:
            self.refresh(summary)

        ground: Dict[Cell2, int] = {}
        allpts = [p for p in (sc.points, sc.unlabeled) if len(p)]
        if allpts:
            pts = np.concatenate(allpts)
            low = pts[pts[:, 2] <= self.ground_max_z]
            if len(low):
                gcells, n = unique_rows(self.key_of(low[:, :2]))
                ground = {(a, b): m for (a, b), m in zip(gcells.tolist(), n.tolist())}
        self._ground[kf] = ground
        hits = self.ground_hits
        for cell, n in ground.items():
            before = hits.get(cell, 0)
            hits[cell] = before + n
            if before < self.ground_min_hits <= before + n:
                self.explored.add(cell)
                self.explored_version += 1
        return summary

    def retract(self, kf: int, refresh: bool = True) -> UpdateSummary:
        """Remove every contribution of keyframe ``kf`` (exact inverse of integrate)."""
        if kf not in self._provenance:
            raise KeyError(f"keyframe {kf} was never integrated")
        summary = UpdateSummary()
        for key, c, n in self._provenance.pop(kf):
            cell = self.cells[key]
            left = cell.counts[c] - n
            if left:
                cell.counts[c] = left
            else:
                del cell.counts[c]
            del cell.contributors[(kf, c)]
            summary.touched.add(key)
        if refresh:
            self.refresh(summary)
        hits = self.ground_hits
        for cell, n in self._ground.pop(kf).items():
            before = hits[cell]
            left = before - n
            if left:
                hits[cell] = left
            else:
                del hits[cell]
            if left < self.ground_min_hits <= before:
                self.explored.discard(cell)
                self.explored_version += 1
        return summary

    def refresh(self, summary: UpdateSummary) -> None:
        """Recompute labels of the summary's touched voxels, recording changes."""
        cells = self.cells
        for key in sorted(summary.touched):
            cell = cells.get(key)
            if cell is None:
                continue
            old = cell.label
            counts = cell.counts
            if not counts:
                new = UNLABELED
                del cells[key]
            else:
                new = next(iter(counts)) if len(counts) == 1 else self._relabel(key, cell)
                cell.label = new
            if new != old:
                self._set_label(key, old, new)
                summary.relabeled.append((key, old, new))

    # ------------------------------------------------------------- queries
    def keyframe_voxels(self, kf: int) -> Set[Key]:
        return {k for k, _c, _n in self._provenance.get(kf, ())}

    def contributing_keyframes(self, keys: Iterable[Key]) -> Set[int]:
        out = set()
        for k in keys:
            out.update(kf for kf, _c in self.cells[k].contributors)
        return out

    def explored_cells(self) -> Set[Cell2]:
        return set(self.explored)

    def explored_array(self) -> np.ndarray:
        """Explored ground cells as a sorted ``(n, 2)`` integer array."""
        if not self.explored:
            return np.zeros((0, 2), dtype=np.int64)
        return unique_rows(np.array(list(self.explored), dtype=np.int64))[0]

    def query_voxels(self, classes: Optional[Iterable[int]] = None,
                     aabb: Optional[Tuple[Iterable[float], Iterable[float]]] = None
                     ) -> List[Tuple[Key, int]]:
        """Labeled voxels matching the class filter and whose centers lie in ``aabb``,
        in lexicographic key order."""
        if classes is None:
            pool = ((k, c.label) for k, c in self.cells.items())
        else:
            pool = ((k, cls) for cls in set(classes) for k in self.by_label.get(cls, ()))
        out = list(pool)
        if aabb is not None and out:
            lo, hi = (np.asarray(v, dtype=float) for v in aabb)
            centers = self.center_of([k for k, _ in out])
            inside = np.all((centers >= lo) & (centers <= hi), axis=1)
            out = [o for o, keep in zip(out, inside) if keep]
        return sorted(out)

    def state(self) -> dict:
        """Exact snapshot of evidence and provenance, for equality checks."""
        return {k: (dict(sorted(c.counts.items())), dict(sorted(c.contributors.items())), c.label)
                for k, c in sorted(self.cells.items())}

    def dump(self, path: str) -> None:
        doc = {
            "voxel_size": self.voxel_size,
            "p_hit": self.p_hit,
            "voxels": [
                {"key": list(k), "label": c.label,
                 "evidence": {str(cls): e for cls, e in self.evidence(k).items()}}
                for k, c in sorted(self.cells.items())
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
