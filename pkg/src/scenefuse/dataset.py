"""Keyframe dataset: in-memory records and the on-disk directory format.

A dataset directory holds ``manifest.json`` plus, per keyframe ``k``:

* ``kf_<k>.pan.png``   16-bit single channel instance map (0 = unlabeled)
* ``kf_<k>.inst.json`` instance table and relation observations
* ``kf_<k>.cloud.bin`` little-endian f32 ``(x, y, z)`` triples, followed by
  u32 flat pixel indices (``row * width + col``) when the manifest sets
  ``cloud_has_pixels``
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .geometry import CameraModel, PointCloud, Pose

FORMAT_TAG = "scenefuse-dataset/1"


class DatasetError(ValueError):
    """Malformed dataset; ``keyframe`` names the offending keyframe when known."""

    def __init__(self, message: str, keyframe: Optional[int] = None):
        if keyframe is not None:
            message = f"keyframe {keyframe}: {message}"
        super().__init__(message)
        self.keyframe = keyframe


@dataclass(frozen=True)
class Vocabulary:
    classes: Tuple[str, ...]
    predicates: Tuple[str, ...]
    large_classes: FrozenSet[str] = frozenset()
    landmark_classes: FrozenSet[str] = frozenset()
    symmetric_predicates: FrozenSet[str] = frozenset()
    view_dependent_predicates: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "predicates", tuple(self.predicates))
        for name in ("large_classes", "landmark_classes", "symmetric_predicates",
                     "view_dependent_predicates"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")
        if len(set(self.predicates)) != len(self.predicates):
            raise ValueError("predicate names must be unique")
        if not self.large_classes <= set(self.classes):
            raise ValueError(f"unknown large classes: {sorted(self.large_classes - set(self.classes))}")
        if not self.landmark_classes <= set(self.classes):
            raise ValueError(f"unknown landmark classes: {sorted(self.landmark_classes - set(self.classes))}")
        preds = set(self.predicates)
        if not (self.symmetric_predicates <= preds and self.view_dependent_predicates <= preds):
            raise ValueError("predicate subsets must name known predicates")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_id(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}") from None

    def predicate_id(self, name: str) -> int:
        try:
            return self.predicates.index(name)
        except ValueError:
            raise KeyError(f"unknown predicate {name!r}") from None

    def is_large(self, class_id: int) -> bool:
        return self.classes[class_id] in self.large_classes

    def is_landmark(self, class_id: int) -> bool:
        return self.classes[class_id] in self.landmark_classes

    def is_symmetric(self, predicate_id: int) -> bool:
        return self.predicates[predicate_id] in self.symmetric_predicates

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "predicates": list(self.predicates),
            "large_classes": sorted(self.large_classes),
            "landmark_classes": sorted(self.landmark_classes),
            "symmetric_predicates": sorted(self.symmetric_predicates),
            "view_dependent_predicates": sorted(self.view_dependent_predicates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            tuple(d["classes"]), tuple(d["predicates"]),
            frozenset(d.get("large_classes", ())), frozenset(d.get("landmark_classes", ())),
            frozenset(d.get("symmetric_predicates", ())),
            frozenset(d.get("view_dependent_predicates", ())),
        )


@dataclass(frozen=True, eq=False)
class PanopticImage:
    """Instance-id image plus the id -> (class id, confidence) table."""

    instance_map: np.ndarray
    instance_table: Dict[int, Tuple[int, float]]

    def __post_init__(self):
        m = np.asarray(self.instance_map)
        if m.ndim != 2:
            raise ValueError("instance map must be 2-D")
        object.__setattr__(self, "instance_map", m.astype(np.uint16, copy=False))
        object.__setattr__(self, "instance_table",
                           {int(k): (int(c), float(p)) for k, (c, p) in self.instance_table.items()})

    @property
    def height(self) -> int:
        return self.instance_map.shape[0]

    @property
    def width(self) -> int:
        return self.instance_map.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanopticImage):
            return NotImplemented
        return (np.array_equal(self.instance_map, other.instance_map)
                and self.instance_table == other.instance_table)

    def pixel_counts(self) -> Dict[int, int]:
        ids, counts = np.unique(self.instance_map, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts) if i != 0}


@dataclass(frozen=True)
class RelationObservation:
    subject: int
    object: int
    predicate: int
    confidence: float = 1.0


@dataclass(frozen=True, eq=False)
class KeyframeRecord:
    index: int
    timestamp: float
    pose: Pose
    cloud: PointCloud
    panoptic: PanopticImage
    relations: Tuple[RelationObservation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeyframeRecord):
            return NotImplemented
        return (self.index == other.index and self.timestamp == other.timestamp
                and self.pose == other.pose and self.cloud == other.cloud
                and self.panoptic == other.panoptic and self.relations == other.relations)

    def with_pose(self, pose: Pose) -> "KeyframeRecord":
        return KeyframeRecord(self.index, self.timestamp, pose, self.cloud, self.panoptic, self.relations)


@dataclass(frozen=True)
class PoseCorrectionEvent:
    trigger: int
    corrections: Dict[int, Pose] = field(default_factory=dict)

    def __post_init__(self):
        bad = [k for k in self.corrections if k > self.trigger]
        if bad:
            raise ValueError(f"correction indices {bad} exceed trigger {self.trigger}")


def validate_record(rec: KeyframeRecord, vocab: Vocabulary,
                    cam: Optional[CameraModel] = None) -> List[str]:
    """Return human-readable invariant violations; empty when the record is well formed."""
    out = []
    pan = rec.panoptic
    table = pan.instance_table
    present = set(int(i) for i in np.unique(pan.instance_map)) - {0}
    for iid in sorted(present - set(table)):
        out.append(f"pixel instance id {iid} missing from instance table")
    for iid, (cls, conf) in sorted(table.items()):
        if iid == 0:
            out.append("instance id 0 is reserved for unlabeled pixels")
        if not 0 <= cls < vocab.num_classes:
            out.append(f"instance {iid} class id {cls} outside vocabulary")
        if not 0.0 <= conf <= 1.0:
            out.append(f"instance {iid} confidence {conf} outside [0, 1]")
    for n, r in enumerate(rec.relations):
        if r.subject == r.object:
            out.append(f"relation {n} has subject == object ({r.subject})")
        if not 0 <= r.predicate < len(vocab.predicates):
            out.append(f"relation {n} predicate id {r.predicate} outside vocabulary")
        if not 0.0 <= r.confidence <= 1.0:
            out.append(f"relation {n} confidence {r.confidence} outside [0, 1]")
        for end in (r.subject, r.object):
            if end not in table:
                out.append(f"relation {n} references unknown instance {end}")
    if not rec.cloud.pixels_within(pan.width, pan.height):
        out.append("cloud pixel index outside the panoptic image")
    if cam is not None and (pan.width, pan.height) != (cam.width, cam.height):
        out.append(f"panoptic size {pan.width}x{pan.height} differs from camera "
                   f"{cam.width}x{cam.height}")
    return out


Item = Union[KeyframeRecord, PoseCorrectionEvent]


def _kf_files(index: int) -> dict:
    return {"panoptic": f"kf_{index}.pan.png", "instances": f"kf_{index}.inst.json",
            "cloud": f"kf_{index}.cloud.bin"}


class Dataset:
    """Lazily decoded dataset directory. Iterating yields records and correction
    events in file order, each event right after its trigger keyframe."""

    def __init__(self, path: str):
        self.path = path
        manifest_path = os.path.join(path, "manifest.json")
        try:
            with open(manifest_path, encoding="utf-8") as fh:
                m = json.load(fh)
        except FileNotFoundError:
            raise DatasetError(f"missing manifest {manifest_path}") from None
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed manifest: {exc}") from None
        try:
            self.vocabulary = Vocabulary.from_dict(m["vocabulary"])
            self.camera = CameraModel.from_dict(m["camera"])
            self.cloud_has_pixels = bool(m.get("cloud_has_pixels", False))
            entries = m.get("keyframes", [])
            raw_events = m.get("corrections", [])
            # whatever else the writer stored (scene name, seed, run settings)
            self.meta = {k: v for k, v in m.items()
                         if k not in ("vocabulary", "camera", "keyframes", "corrections")}
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed manifest: {exc}") from None

        self._entries: Dict[int, dict] = {}
        order: List[int] = []
        last = None
        for e in entries:
            try:
                idx = int(e["index"])
            except (KeyError, TypeError, ValueError):
                raise DatasetError("keyframe entry without integer index") from None
            if idx in self._entries:
                raise DatasetError("duplicate keyframe index", idx)
            if last is not None and idx <= last:
                raise DatasetError(f"keyframe indices not increasing (after {last})", idx)
            for key in ("timestamp", "pose"):
                if key not in e:
                    raise DatasetError(f"entry lacks {key!r}", idx)
            last = idx
            self._entries[idx] = e
            order.append(idx)
        self.indices = order

        self._events: Dict[int, List[PoseCorrectionEvent]] = {}
        for ev in raw_events:
            try:
                trig = int(ev["trigger"])
                corr = {int(c["index"]): Pose.from_list(c["pose"]) for c in ev["corrections"]}
                event = PoseCorrectionEvent(trig, corr)
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"malformed correction event: {exc}") from None
            if trig not in self._entries:
                raise DatasetError("correction trigger is not a keyframe", trig)
            unknown = sorted(set(corr) - set(self._entries))
            if unknown:
                raise DatasetError(f"correction references unknown keyframes {unknown}", trig)
            self._events.setdefault(trig, []).append(event)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def events(self) -> List[PoseCorrectionEvent]:
        return [ev for k in self.indices for ev in self._events.get(k, [])]

    def record(self, index: int) -> KeyframeRecord:
        if index not in self._entries:
            raise DatasetError("unknown keyframe", index)
        e = self._entries[index]
        files = e.get("files") or _kf_files(index)
        cam = self.camera

        def _path(key):
            if key not in files:
                raise DatasetError(f"entry lacks file {key!r}", index)
            p = os.path.join(self.path, files[key])
            if not os.path.exists(p):
                raise DatasetError(f"missing file {files[key]}", index)
            return p

        with Image.open(_path("panoptic")) as im:
            imap = np.array(im, dtype=np.uint16)
        with open(_path("instances"), encoding="utf-8") as fh:
            try:
                inst = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed instance file: {exc}", index) from None
        try:
            table = {int(i["id"]): (int(i["class"]), float(i.get("confidence", 1.0)))
                     for i in inst.get("instances", [])}
            rels = tuple(RelationObservation(int(r["subject"]), int(r["object"]), int(r["predicate"]),
                                             float(r.get("confidence", 1.0)))
                         for r in inst.get("relations", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed instance file: {exc}", index) from None

        raw = np.fromfile(_path("cloud"), dtype="<u4")
        stride = 4 if self.cloud_has_pixels else 3
        if len(raw) % stride:
            raise DatasetError("cloud file length does not match its layout", index)
        n = len(raw) // stride
        pts = raw[:3 * n].view("<f4").reshape(n, 3).astype(np.float64)
        pixels = None
        if self.cloud_has_pixels:
            flat = raw[3 * n:].astype(np.int64)
            pixels = np.column_stack([flat // cam.width, flat % cam.width])
        try:
            pose = Pose.from_list(e["pose"])
            rec = KeyframeRecord(index, float(e["timestamp"]), pose, PointCloud(pts, pixels),
                                 PanopticImage(imap, table), rels)
        except ValueError as exc:
            raise DatasetError(str(exc), index) from None
        problems = validate_record(rec, self.vocabulary, cam)
        if problems:
            raise DatasetError("; ".join(problems), index)
        return rec

    def __iter__(self) -> Iterator[Item]:
        for idx in self.indices:
            yield self.record(idx)
            yield from self._events.get(idx, [])


def load_dataset(path: str) -> Dataset:
    return Dataset(path)


def write_dataset(path: str, vocab: Vocabulary, camera: CameraModel, items: Sequence[Item],
                  cloud_has_pixels: bool = True, extra: Optional[dict] = None) -> None:
    """Write records and events (in stream order) into ``path``.

    Point coordinates are stored as f32; records are otherwise reproduced exactly.
    """
    os.makedirs(path, exist_ok=True)
    entries, events = [], []
    for item in items:
        if isinstance(item, PoseCorrectionEvent):
            events.append({"trigger": item.trigger,
                           "corrections": [{"index": k, "pose": item.corrections[k].to_list()}
                                           for k in sorted(item.corrections)]})
            continue
        rec = item
        files = _kf_files(rec.index)
        entries.append({"index": rec.index, "timestamp": rec.timestamp,
                        "pose": rec.pose.to_list(), "files": files})
        Image.fromarray(np.ascontiguousarray(rec.panoptic.instance_map, dtype=np.uint16)).save(
            os.path.join(path, files["panoptic"]), format="PNG")
        inst = {
            "instances": [{"id": k, "class": c, "confidence": p}
                          for k, (c, p) in sorted(rec.panoptic.instance_table.items())],
            "relations": [{"subject": r.subject, "object": r.object, "predicate": r.predicate,
                           "confidence": r.confidence} for r in rec.relations],
        }
        with open(os.path.join(path, files["instances"]), "w", encoding="utf-8") as fh:
            json.dump(inst, fh, indent=1, sort_keys=True)
            fh.write("\n")
        blob = np.ascontiguousarray(rec.cloud.points, dtype="<f4").tobytes()
        if cloud_has_pixels:
            if rec.cloud.pixels is None:
                raise ValueError(f"keyframe {rec.index}: cloud lacks pixel indices")
            px = rec.cloud.pixels
            blob += (px[:, 0] * camera.width + px[:, 1]).astype("<u4").tobytes()
        with open(os.path.join(path, files["cloud"]), "wb") as fh:
            fh.write(blob)
    manifest = {
        "format": FORMAT_TAG,
        "vocabulary": vocab.to_dict(),
        "camera": camera.to_dict(),
        "cloud_has_pixels": cloud_has_pixels,
        "keyframes": entries,
        "corrections": events,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
