"""Accuracy of fused objects and relations against simulator truth, each
compared with a single-keyframe estimate."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import KeyframeRecord, PoseCorrectionEvent, Vocabulary
from .geometry import CameraModel, Pose
from .objects import centroid_single_frame
from .simulator import ScenarioTruth

D_MAX = 1.5


@dataclass
class MatchReport:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)   # (truth id, estimate id, error)
    unmatched_truth: List[int] = field(default_factory=list)
    unmatched_estimates: List[int] = field(default_factory=list)

    @property
    def errors(self) -> np.ndarray:
        return np.array([e for _t, _e, e in self.pairs], dtype=float)

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors)) if self.pairs else math.nan

    @property
    def median_error(self) -> float:
        return float(np.median(self.errors)) if self.pairs else math.nan

    def estimate_to_truth(self) -> Dict[int, int]:
        return {e: t for t, e, _d in self.pairs}


def _truth_objects(truth) -> List[dict]:
    if isinstance(truth, ScenarioTruth):
        return list(truth.objects)
    return list(truth)


def _graph_doc(graph) -> dict:
    if isinstance(graph, str):
        return json.loads(graph)
    return graph


def match_objects(truth, graph, d_max: float = D_MAX) -> MatchReport:
    """Greedy one-to-one same-class matching by centroid distance.

    Candidate pairs within ``d_max`` are taken in order of increasing distance;
    equal distances go to the lower estimate id, then the lower truth id.
    """
    gts = _truth_objects(truth)
    ests = _graph_doc(graph)["objects"] if not isinstance(graph, list) else graph
    cands = []
    for g in gts:
        gc = np.asarray(g["centroid"], dtype=float)
        for e in ests:
            if e["class"] != g["class"]:
                continue
            d = float(np.linalg.norm(np.asarray(e["centroid"], dtype=float) - gc))
            if d <= d_max:
                cands.append((d, e["id"], g["id"]))
    cands.sort()
    used_g, used_e = set(), set()
    rep = MatchReport()
    for d, eid, gid in cands:
        if gid in used_g or eid in used_e:
            continue
        used_g.add(gid)
        used_e.add(eid)
        rep.pairs.append((gid, eid, d))
    rep.pairs.sort()
    rep.unmatched_truth = sorted(g["id"] for g in gts if g["id"] not in used_g)
    rep.unmatched_estimates = sorted(e["id"] for e in ests if e["id"] not in used_e)
    return rep


# ----------------------------------------------------------------- inputs
def split_items(items: Iterable) -> Tuple[List[KeyframeRecord], Dict[int, Pose]]:
    """Records in stream order and the final pose of each after all corrections."""
    records, poses = [], {}
    for it in items:
        if isinstance(it, PoseCorrectionEvent):
            poses.update({k: v for k, v in it.corrections.items() if k in poses})
        else:
            records.append(it)
            poses[it.index] = it.pose
    return records, poses


def _mask_sizes(rec: KeyframeRecord) -> Dict[int, int]:
    ids, n = np.unique(rec.panoptic.instance_map, return_counts=True)
    table = rec.panoptic.instance_table
    return {int(i): int(c) for i, c in zip(ids, n) if i in table}


# ---------------------------------------------------------------- objects
@dataclass
class MethodScore:
    method: str
    value: float
    count: int
    extra: Dict[str, object] = field(default_factory=dict)


@dataclass
class ObjectEval:
    baseline: MethodScore
    fused: MethodScore
    excluded: List[int]            # truth objects never visible
    match: MatchReport
    baseline_errors: Dict[int, float]

    @property
    def improvement_pct(self) -> float:
        a, b = self.baseline.value, self.fused.value
        return (a - b) / a * 100.0 if a > 0 else math.nan

    def rows(self, scene: str, seed: int) -> List[dict]:
        m = self.match
        return [
            {"method": "single_frame", "scene": scene, "seed": seed,
             "mean_error_m": _f(self.baseline.value), "median_error_m": _f(self.baseline.extra["median"]),
             "objects": self.baseline.count, "unmatched_truth": len(self.excluded),
             "unmatched_estimates": 0, "improvement_pct": ""},
            {"method": "fused", "scene": scene, "seed": seed,
             "mean_error_m": _f(self.fused.value), "median_error_m": _f(m.median_error),
             "objects": len(m.pairs), "unmatched_truth": len(m.unmatched_truth),
             "unmatched_estimates": len(m.unmatched_estimates),
             "improvement_pct": _f(self.improvement_pct)},
        ]


def _f(v: float) -> str:
    return "nan" if v is None or math.isnan(v) else f"{v:.6f}"


def eval_objects(items: Iterable, camera: CameraModel, truth: ScenarioTruth, graph,
                 d_max: float = D_MAX) -> ObjectEval:
    """Single-frame centroids versus fused graph centroids.

    The single-frame estimate of each truth object back-projects its largest
    mask under that keyframe's final (corrected) pose.  Objects never visible
    are excluded from both methods and listed.
    """
    records, poses = split_items(items)
    sizes = [(rec, _mask_sizes(rec)) for rec in records]
    base_err: Dict[int, float] = {}
    excluded = []
    for obj in truth.objects:
        iid = obj["id"]
        best, best_n = None, 0
        for rec, sz in sizes:
            if sz.get(iid, 0) > best_n:
                best, best_n = rec, sz[iid]
        if best is None:
            excluded.append(iid)
            continue
        try:
            c = centroid_single_frame(best.with_pose(poses[best.index]), iid, camera)
        except ValueError:
            excluded.append(iid)
            continue
        base_err[iid] = float(np.linalg.norm(c - np.asarray(obj["centroid"], dtype=float)))
    visible = [o for o in truth.objects if o["id"] not in excluded]
    match = match_objects(visible, graph, d_max)
    be = np.array(list(base_err.values()))
    baseline = MethodScore("single_frame", float(be.mean()) if len(be) else math.nan, len(be),
                           {"median": float(np.median(be)) if len(be) else math.nan})
    fused = MethodScore("fused", match.mean_error, len(match.pairs))
    return ObjectEval(baseline, fused, sorted(excluded), match, base_err)


# -------------------------------------------------------------- relations
Triplet = Tuple[int, str, int]


def _norm(t: Triplet, symmetric: Iterable[str]) -> Triplet:
    s, p, o = t
    if p in symmetric and s > o:
        return (o, p, s)
    return (s, p, o)


@dataclass
class RelationEval:
    truth: List[Triplet]
    baseline_hits: List[Triplet]
    fused_hits: List[Triplet]
    baseline_keyframe: Optional[int]

    @property
    def baseline_accuracy(self) -> float:
        return 100.0 * len(self.baseline_hits) / len(self.truth) if self.truth else math.nan

    @property
    def fused_accuracy(self) -> float:
        return 100.0 * len(self.fused_hits) / len(self.truth) if self.truth else math.nan

    @property
    def improvement_points(self) -> float:
        return self.fused_accuracy - self.baseline_accuracy

    def rows(self, scene: str, seed: int) -> List[dict]:
        n = len(self.truth)
        return [
            {"method": "single_frame", "scene": scene, "seed": seed,
             "accuracy_pct": _f(self.baseline_accuracy), "correct": len(self.baseline_hits),
             "truth": n, "improvement_points": ""},
            {"method": "fused", "scene": scene, "seed": seed,
             "accuracy_pct": _f(self.fused_accuracy), "correct": len(self.fused_hits),
             "truth": n, "improvement_points": _f(self.improvement_points)},
        ]


def eval_relations(items: Iterable, vocab: Vocabulary, truth: ScenarioTruth, graph,
                   match: Optional[MatchReport] = None, d_max: float = D_MAX) -> RelationEval:
    """Share of view-independent truth triplets recovered.

    Single-frame: the relations of the keyframe in which the most truth pairs
    are covisible (earliest on ties).  Fused: accepted edges of the graph,
    with object ids mapped to truth ids through the centroid matching.
    """
    sym = set(vocab.symmetric_predicates)
    view_dep = set(vocab.view_dependent_predicates)
    gt = sorted({_norm(t, sym) for t in truth.triplets if t[1] not in view_dep})
    gt_set = set(gt)
    pairs = {(s, o) for s, _p, o in gt}

    records, _poses = split_items(items)
    best, best_n = None, 0
    for rec in records:
        table = rec.panoptic.instance_table
        n = sum(1 for s, o in pairs if s in table and o in table)
        if n > best_n:
            best, best_n = rec, n
    base_hits = set()
    if best is not None:
        for r in best.relations:
            t = _norm((r.subject, vocab.predicates[r.predicate], r.object), sym)
            if t in gt_set:
                base_hits.add(t)

    doc = _graph_doc(graph)
    if match is None:
        match = match_objects(truth, doc, d_max)
    to_gt = match.estimate_to_truth()
    fused_hits = set()
    for e in doc["relations"]:
        if not e["accepted"] or e["predicate"] in view_dep:
            continue
        s, o = to_gt.get(e["subject"]), to_gt.get(e["object"])
        if s is None or o is None:
            continue
        t = _norm((s, e["predicate"], o), sym)
        if t in gt_set:
            fused_hits.add(t)
    return RelationEval(gt, sorted(base_hits), sorted(fused_hits),
                        best.index if best is not None else None)


# -------------------------------------------------------------------- csv
OBJECT_COLUMNS = ["method", "scene", "seed", "mean_error_m", "median_error_m", "objects",
                  "unmatched_truth", "unmatched_estimates", "improvement_pct"]
RELATION_COLUMNS = ["method", "scene", "seed", "accuracy_pct", "correct", "truth", "improvement_points"]


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Mapping[str, object]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
