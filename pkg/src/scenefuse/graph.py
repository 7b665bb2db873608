"""Layered 3D scene graph: site -> regions -> objects, plus voted relation edges.

Relation observations are stored at the instance level (the voxels each 2D
instance's points fell into) and resolved against the *current* object set.
Whenever objects are re-clustered, observations touching moved voxels are
re-resolved, so vote tallies are always a function of the present objects and
the observations, independent of the order in which keyframes arrived or were
corrected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .dataset import KeyframeRecord, RelationObservation, Vocabulary
from .objects import ChangeList, ObjectNode, ObjectSet
from .voxel_map import Key, SemanticCloud, SemanticVoxelMap, unique_rows

InstKey = Tuple[int, int]           # (keyframe, instance id)
RelKey = Tuple[int, int]            # (keyframe, relation index)
PairKey = Tuple[int, int]           # unordered object pair, low id first
PredKey = Tuple[int, Optional[int]]  # (predicate, subject id or None when symmetric)

UNASSIGNED_REGION = 0


@dataclass
class InstanceLift:
    object_id: Optional[int]
    observed_class: int
    point_count: int
    voxel_hist: Dict[Key, int] = field(default_factory=dict)


@dataclass
class LiftedGraph:
    keyframe: int
    instances: Dict[int, InstanceLift]
    relations: List[Tuple[RelationObservation, Optional[int], Optional[int]]]
    corrected: List[Tuple[int, int, int]]   # (instance, observed class, fused class)
    unresolved: List[int]


def _resolve(hist: Dict[Key, int], owner: Dict[Key, int], f_min: float) -> Optional[int]:
    total = 0
    votes: Dict[int, int] = {}
    first: Dict[int, Key] = {}
    for k, n in hist.items():
        total += n
        o = owner.get(k)
        if o is not None:
            votes[o] = votes.get(o, 0) + n
            first[o] = min(first.get(o, k), k)
    if not votes:
        return None
    # equal votes go to the object holding the lowest voxel, independent of id history
    best = min(votes, key=lambda o: (-votes[o], first[o]))
    return best if votes[best] >= f_min * total else None


def lift(rec: KeyframeRecord, sc: SemanticCloud, objects: ObjectSet, vmap: SemanticVoxelMap,
         f_min: float = 0.3) -> LiftedGraph:
    """Resolve the keyframe's 2D instances and relations to 3D object ids.

    The fused 3D class is authoritative: an instance whose matched object has
    a different class is reported as corrected and takes the object's class.
    """
    hists: Dict[int, Dict[Key, int]] = {}
    if len(sc):
        keys = vmap.key_of(sc.points)
        rows = np.column_stack([sc.instances.astype(np.int64), keys])
        uniq, counts = unique_rows(rows)
        for (iid, ix, iy, iz), n in zip(uniq.tolist(), counts.tolist()):
            hists.setdefault(iid, {})[(ix, iy, iz)] = n
    instances: Dict[int, InstanceLift] = {}
    corrected, unresolved = [], []
    for iid, (cls, _conf) in sorted(rec.panoptic.instance_table.items()):
        hist = hists.get(iid, {})
        oid = _resolve(hist, objects.owner, f_min)
        instances[iid] = InstanceLift(oid, cls, sum(hist.values()), hist)
        if oid is None:
            unresolved.append(iid)
        elif objects[oid].class_id != cls:
            corrected.append((iid, cls, objects[oid].class_id))
    relations = []
    for r in rec.relations:
        s = instances.get(r.subject)
        o = instances.get(r.object)
        relations.append((r, s.object_id if s else None, o.object_id if o else None))
    return LiftedGraph(rec.index, instances, relations, corrected, unresolved)


@dataclass
class Region:
    id: int
    cells: np.ndarray                 # (n, 2) ground cell keys, lexicographically sorted
    bounds: List[Tuple[float, float]]
    landmarks: Tuple[int, ...] = ()

    @property
    def area_cells(self) -> int:
        return len(self.cells)


_UNSET = object()


class SceneGraph:
    def __init__(self, vocab: Vocabulary, objects: ObjectSet, v_min: int = 2, f_min: float = 0.3):
        self.vocab = vocab
        self.objects = objects
        self.v_min = int(v_min)
        self.f_min = float(f_min)
        self.regions: Dict[int, Region] = {}
        self._next_region = 1
        self._inst: Dict[InstKey, List] = {}          # -> [hist, resolved id]
        self._vindex: Dict[Key, Set[InstKey]] = {}
        self._rels: Dict[RelKey, Tuple[int, int, int, float]] = {}
        self._inst_rels: Dict[InstKey, List[RelKey]] = {}
        self._rel_edge: Dict[RelKey, Optional[Tuple[PairKey, PredKey]]] = {}
        self._tally: Dict[PairKey, Dict[PredKey, Dict[RelKey, float]]] = {}
        self._kf_rels: Dict[int, List[RelKey]] = {}
        self._kf_insts: Dict[int, List[InstKey]] = {}
        self._region_key = None
        self._region_index = None

    # --------------------------------------------------------------- nodes
    def object_nodes(self) -> List[ObjectNode]:
        return [n for n in self.objects if not self.vocab.is_landmark(n.class_id)]

    def landmark_nodes(self) -> List[ObjectNode]:
        return [n for n in self.objects if self.vocab.is_landmark(n.class_id)]

    # ------------------------------------------------------------- tallies
    def _edge_key(self, rel: RelKey) -> Optional[Tuple[PairKey, PredKey]]:
        kf, _ = rel
        si, oi, pred, _conf = self._rels[rel]
        s = self._inst[(kf, si)][1] if (kf, si) in self._inst else None
        o = self._inst[(kf, oi)][1] if (kf, oi) in self._inst else None
        if s is None or o is None or s == o:
            return None
        if self.vocab.is_landmark(self.objects[s].class_id) or self.vocab.is_landmark(self.objects[o].class_id):
            return None
        pair = (min(s, o), max(s, o))
        pk = (pred, None) if self.vocab.is_symmetric(pred) else (pred, s)
        return pair, pk

    def _recount(self, rel: RelKey) -> None:
        new = self._edge_key(rel)
        old = self._rel_edge.get(rel, _UNSET)
        if new == old:
            return
        if old is _UNSET:
            old = None
        if old is not None:
            pair, pk = old
            bucket = self._tally[pair][pk]
            del bucket[rel]
            if not bucket:
                del self._tally[pair][pk]
                if not self._tally[pair]:
                    del self._tally[pair]
        if new is not None:
            pair, pk = new
            self._tally.setdefault(pair, {}).setdefault(pk, {})[rel] = self._rels[rel][3]
        self._rel_edge[rel] = new

    def merge(self, lifted: LiftedGraph) -> List[PairKey]:
        """Add one keyframe's lifted observations; returns the pairs whose tally changed."""
        kf = lifted.keyframe
        if kf in self._kf_rels:
            raise ValueError(f"keyframe {kf} already merged")
        ends = {r.subject for r, _s, _o in lifted.relations} | {r.object for r, _s, _o in lifted.relations}
        for iid in sorted(ends):
            info = lifted.instances.get(iid)
            if info is None:
                continue
            ik = (kf, iid)
            self._kf_insts.setdefault(kf, []).append(ik)
            self._inst[ik] = [info.voxel_hist, _resolve(info.voxel_hist, self.objects.owner, self.f_min)]
            for k in info.voxel_hist:
                self._vindex.setdefault(k, set()).add(ik)
        rels = []
        touched = set()
        for n, (r, _s, _o) in enumerate(lifted.relations):
            rk = (kf, n)
            self._rels[rk] = (r.subject, r.object, r.predicate, r.confidence)
            for end in (r.subject, r.object):
                self._inst_rels.setdefault((kf, end), []).append(rk)
            rels.append(rk)
            self._recount(rk)
            e = self._rel_edge[rk]
            if e is not None:
                touched.add(e[0])
        self._kf_rels[kf] = rels
        return sorted(touched)

    def remove_keyframe(self, kf: int) -> None:
        for rk in self._kf_rels.pop(kf, []):
            old = self._rel_edge.pop(rk, None)
            if old is not None:
                pair, pk = old
                bucket = self._tally[pair][pk]
                del bucket[rk]
                if not bucket:
                    del self._tally[pair][pk]
                    if not self._tally[pair]:
                        del self._tally[pair]
            del self._rels[rk]
        for ik in self._kf_insts.pop(kf, []):
            hist, _ = self._inst.pop(ik)
            for k in hist:
                s = self._vindex[k]
                s.discard(ik)
                if not s:
                    del self._vindex[k]
            self._inst_rels.pop(ik, None)

    def sync(self, changes: ChangeList) -> None:
        """Re-resolve observations whose voxels changed owner."""
        affected: Set[InstKey] = set()
        for k in changes.moved_voxels:
            affected |= self._vindex.get(k, set())
        stale: Set[RelKey] = set()
        for ik in sorted(affected):
            entry = self._inst[ik]
            new = _resolve(entry[0], self.objects.owner, self.f_min)
            if new != entry[1]:
                entry[1] = new
                stale.update(self._inst_rels.get(ik, ()))
        # recount only after every endpoint is re-resolved
        for rk in sorted(stale):
            self._recount(rk)

    def accepted(self, pair: PairKey) -> Optional[PredKey]:
        tally = self._tally.get(pair)
        if not tally:
            return None
        ranked = sorted(((len(v), pk) for pk, v in tally.items()), key=lambda t: -t[0])
        votes, pk = ranked[0]
        if votes < self.v_min or (len(ranked) > 1 and ranked[1][0] == votes):
            return None
        return pk

    def edges(self) -> List[dict]:
        """All tallied edges sorted by (subject, object, predicate)."""
        out = []
        for pair, tally in self._tally.items():
            acc = self.accepted(pair)
            for pk, obs in tally.items():
                pred, subj = pk
                s, o = (pair if subj is None else (subj, pair[1] if subj == pair[0] else pair[0]))
                out.append({
                    "subject": s, "object": o, "predicate": pred,
                    "votes": len(obs),
                    "weight": math.fsum(sorted(obs.values())),
                    "last_seen": max(kf for kf, _n in obs),
                    "accepted": pk == acc,
                    "symmetric": subj is None,
                })
        out.sort(key=lambda e: (e["subject"], e["object"], e["predicate"]))
        return out

    def accepted_edges(self) -> List[Tuple[int, int, int]]:
        return [(e["subject"], e["object"], e["predicate"]) for e in self.edges() if e["accepted"]]


# ------------------------------------------------------------------ regions
def _cell_bounds(cells: np.ndarray, voxel: float) -> List[Tuple[float, float]]:
    (x0, y0), (x1, y1) = cells.min(axis=0) * voxel, (cells.max(axis=0) + 1) * voxel
    x0, y0, x1, y1 = (float(v) for v in (x0, y0, x1, y1))
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _flood_regions(explored: np.ndarray, footprints, vs: float, min_region_area: float
                   ) -> Tuple[List[np.ndarray], List[Tuple[int, ...]]]:
    """4-connected components of explored, non-separator cells, ordered by first cell,
    with the landmarks adjacent to each."""
    comps: List[np.ndarray] = []
    touching: List[Tuple[int, ...]] = []
    if len(explored):
        # one cell of padding so landmark adjacency checks never fall off the grid
        lo = explored.min(axis=0) - 1
        shape = tuple(explored.max(axis=0) - lo + 2)
        grid = np.zeros(shape, dtype=bool)
        grid[explored[:, 0] - lo[0], explored[:, 1] - lo[1]] = True
        sep = np.zeros(shape, dtype=bool)
        lm_boxes = []
        for lid, a, b in footprints:
            a, b = np.maximum(a - lo, 0), np.minimum(b - lo + 1, shape)
            if np.all(b > a):
                sep[a[0]:b[0], a[1]:b[1]] = True
                lm_boxes.append((lid, a, b))
        lab, n = ndimage.label(grid & ~sep)
        if n:
            flat = lab.ravel()
            nz = np.flatnonzero(flat)
            sizes = np.bincount(flat[nz], minlength=n + 1)
            min_cells = max(1, int(math.ceil(min_region_area / (vs * vs) - 1e-9)))
            # row-major order: each label's first flat index is its smallest cell
            order = np.argsort(flat[nz], kind="stable")
            starts = np.r_[0, np.flatnonzero(np.diff(flat[nz][order])) + 1]
            labels = flat[nz][order][starts]
            groups = np.split(nz[order], starts[1:])
            for lbl, g in zip(labels.tolist(), groups):
                if sizes[lbl] < min_cells:
                    continue
                cells = np.column_stack(np.unravel_index(g, shape)) + lo
                near = []
                for lid, a, b in lm_boxes:
                    a2, b2 = np.maximum(a - 1, 0), np.minimum(b + 1, shape)
                    if np.any(lab[a2[0]:b2[0], a2[1]:b2[1]] == lbl):
                        near.append(lid)
                comps.append(cells)
                touching.append(tuple(sorted(near)))
        order = sorted(range(len(comps)), key=lambda i: tuple(comps[i][0]))
        comps = [comps[i] for i in order]
        touching = [touching[i] for i in order]
    return comps, touching


def _inherit_regions(graph: SceneGraph, comps: List[np.ndarray], touching: List[Tuple[int, ...]],
                     vs: float) -> Dict[int, Region]:
    # id inheritance by overlap, same rule as objects
    old = graph.regions
    inter_all: Dict[Tuple[int, int], int] = {}
    if comps and old:
        def code(c):
            return c[:, 0] * (1 << 32) + c[:, 1]
        new_codes = np.concatenate([code(c) for c in comps])
        new_ids = np.repeat(np.arange(len(comps)), [len(c) for c in comps])
        old_codes = np.concatenate([code(r.cells) for r in old.values()])
        old_ids = np.repeat(np.array(list(old.keys())), [len(r.cells) for r in old.values()])
        srt = np.argsort(old_codes)
        pos = np.clip(np.searchsorted(old_codes[srt], new_codes), 0, len(old_codes) - 1)
        hit = old_codes[srt][pos] == new_codes
        pairs = np.column_stack([new_ids[hit], old_ids[srt][pos][hit]])
        if len(pairs):
            up, cnt = unique_rows(pairs)
            inter_all = {(int(ci), int(r)): int(m) for (ci, r), m in zip(up.tolist(), cnt.tolist())}
    claims: Dict[int, List[Tuple[int, int]]] = {}
    by_comp: Dict[int, List[int]] = {}
    for (ci, r), m in sorted(inter_all.items()):
        if 2 * m >= min(len(comps[ci]), len(old[r].cells)):
            by_comp.setdefault(ci, []).append(r)
    for ci, cands in by_comp.items():
        if len(cands) == 1:
            claims.setdefault(cands[0], []).append((inter_all[(ci, cands[0])], ci))
    winner = {}
    for rid, cl in claims.items():
        best = max(cl, key=lambda mc: (mc[0], tuple(-int(v) for v in comps[mc[1]][0])))
        winner[best[1]] = rid
    regions: Dict[int, Region] = {}
    for ci, cells in enumerate(comps):
        rid = winner.get(ci)
        if rid is None:
            rid = graph._next_region
            graph._next_region += 1
        regions[rid] = Region(rid, cells, _cell_bounds(cells, vs), touching[ci])
    return regions


def partition_regions(graph: SceneGraph, vmap: SemanticVoxelMap, objects: ObjectSet,
                      separator_margin: int = 1, min_region_area: float = 1.0
                      ) -> Tuple[Dict[int, Region], List[Tuple[int, Optional[int], int]]]:
    """Flood-fill explored ground cells, using landmark footprints as walls.

    Returns the region map and ``(object id, old region, new region)`` reassignments.
    """
    vs = vmap.voxel_size
    footprints = []
    for lm in graph.landmark_nodes():
        ks = np.array(sorted(lm.voxels), dtype=np.int64)[:, :2]
        footprints.append((lm.id, ks.min(axis=0) - separator_margin, ks.max(axis=0) + separator_margin))
    # unchanged explored cells and separators reproduce the previous regions exactly
    fkey = (id(vmap), vmap.explored_version, min_region_area,
            tuple((lid, tuple(a.tolist()), tuple(b.tolist())) for lid, a, b in footprints))
    if graph._region_key != fkey:
        comps, touching = _flood_regions(vmap.explored_array(), footprints, vs, min_region_area)
        graph.regions = _inherit_regions(graph, comps, touching, vs)
        graph._region_key = fkey
        graph._region_index = None
        if graph.regions:
            rids = sorted(graph.regions)
            cells = np.concatenate([graph.regions[r].cells for r in rids])
            owner = np.repeat(rids, [len(graph.regions[r].cells) for r in rids])
            graph._region_index = (cKDTree(cells.astype(float)), owner)
    regions = graph.regions

    nodes = graph.object_nodes()
    assigned = [UNASSIGNED_REGION] * len(nodes)
    if graph._region_index is not None and nodes:
        tree, owner = graph._region_index
        cells = np.floor(np.array([n.centroid[:2] for n in nodes]) / vs)
        dist, idx = tree.query(cells)
        for i, (d, j) in enumerate(zip(dist, idx)):
            if d > 0:
                # no covering cell: among the closest cells take the lowest key, so
                # the choice does not depend on region id history
                near = tree.query_ball_point(cells[i], d + 1e-9)
                j = min(near, key=lambda c: tuple(tree.data[c]))
            assigned[i] = int(owner[j])
    changes = []
    for node, new in zip(nodes, assigned):
        if node.region != new:
            changes.append((node.id, node.region, new))
            node.region = new
    return regions, changes


# ------------------------------------------------------------------ exports
def _r(v: float) -> float:
    return round(float(v), 6) + 0.0


def export_graph(graph: SceneGraph) -> str:
    """Canonical JSON document of the graph."""
    vocab = graph.vocab
    objects = graph.object_nodes()
    regions = [graph.regions[k] for k in sorted(graph.regions)]
    unassigned = any(n.region in (None, UNASSIGNED_REGION) for n in objects)
    contain = [{"parent": 0, "child": f"region:{r.id}"} for r in regions]
    if unassigned:
        contain.insert(0, {"parent": 0, "child": f"region:{UNASSIGNED_REGION}"})
    contain += [{"parent": f"region:{n.region or UNASSIGNED_REGION}", "child": f"object:{n.id}"}
                for n in objects]
    doc = {
        "site": {"id": 0, "name": "site"},
        "regions": ([{"id": UNASSIGNED_REGION, "bounds": [], "landmarks": [], "cells": 0}] if unassigned else [])
        + [{"id": r.id, "bounds": [[_r(x), _r(y)] for x, y in r.bounds],
            "landmarks": list(r.landmarks), "cells": len(r.cells)} for r in regions],
        "landmarks": [_node_doc(n, vocab) for n in graph.landmark_nodes()],
        "objects": [_node_doc(n, vocab) for n in objects],
        "containment": contain,
        "relations": [
            {**e, "predicate": vocab.predicates[e["predicate"]], "weight": _r(e["weight"])}
            for e in graph.edges()
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _node_doc(n: ObjectNode, vocab: Vocabulary) -> dict:
    return {
        "id": n.id,
        "class": vocab.classes[n.class_id],
        "level": n.level,
        "centroid": [_r(v) for v in n.centroid],
        "aabb": {"min": [_r(v) for v in n.aabb_min], "max": [_r(v) for v in n.aabb_max]},
        "region": n.region if n.region is not None else UNASSIGNED_REGION,
        "voxels": n.size,
    }


def canonicalize_export(doc: dict) -> dict:
    """Rename object and region ids by sorted content so that two builds of the
    same state compare equal regardless of id allocation history."""
    def okey(o):
        return (o["class"], o["centroid"], o["aabb"]["min"], o["aabb"]["max"], o["voxels"])

    objs = sorted(doc["objects"], key=okey)
    lms = sorted(doc["landmarks"], key=okey)
    oid = {o["id"]: i + 1 for i, o in enumerate(objs)}
    lid = {o["id"]: i + 1 for i, o in enumerate(lms)}
    regs = sorted((r for r in doc["regions"] if r["id"] != UNASSIGNED_REGION),
                  key=lambda r: (r["bounds"], r["cells"]))
    rid = {UNASSIGNED_REGION: UNASSIGNED_REGION}
    rid.update({r["id"]: i + 1 for i, r in enumerate(regs)})
    regs = [r for r in doc["regions"] if r["id"] == UNASSIGNED_REGION] + regs

    def node(o, ids):
        return {**o, "id": ids[o["id"]], "region": rid[o["region"]]}

    rels = []
    for e in doc["relations"]:
        s, t = oid[e["subject"]], oid[e["object"]]
        rels.append({**e, "subject": s, "object": t})
    # symmetric edges are stored low-id first; keep that form after renaming
    for e in rels:
        if e["symmetric"]:
            e["subject"], e["object"] = sorted((e["subject"], e["object"]))
    return {
        "objects": sorted((node(o, oid) for o in objs), key=lambda o: o["id"]),
        "landmarks": sorted((node(o, lid) for o in lms), key=lambda o: o["id"]),
        "regions": sorted(({**r, "id": rid[r["id"]], "landmarks": sorted(lid[x] for x in r["landmarks"])}
                           for r in regs), key=lambda r: r["id"]),
        "relations": sorted(rels, key=lambda e: (e["subject"], e["object"], e["predicate"])),
    }


def export_prompt(graph: Union[SceneGraph, str, dict], target: Optional[str] = None) -> str:
    """Plain-text rendering of the graph for a language-model planner.

    Accepts a live graph or its exported JSON document; both give the same text.
    """
    doc = graph
    if isinstance(graph, SceneGraph):
        doc = export_graph(graph)
    if isinstance(doc, str):
        doc = json.loads(doc)
    objects = doc["objects"]
    large = [o for o in objects if o["level"] == "large"]
    small = [o for o in objects if o["level"] != "large"]
    regions = [r for r in doc["regions"] if r["id"] != UNASSIGNED_REGION]
    lines = [
        "# 3D scene graph",
        f"site: {len(regions)} regions, {len(large)} large objects, {len(small)} small objects",
    ]
    if target is not None:
        lines.append(f"target: {target}")
    names = {o["id"]: f"{o['class']}#{o['id']}" for o in objects}
    lm_names = {o["id"]: f"{o['class']}#{o['id']}" for o in doc["landmarks"]}

    for r in doc["regions"]:
        rid = r["id"]
        members = sorted(o["id"] for o in small if o["region"] == rid)
        smalls = ", ".join(names[i] for i in members) if members else "none"
        if rid == UNASSIGNED_REGION:
            lines.append(f"region {rid} (unassigned): small objects: {smalls}")
            continue
        (x0, y0), (x1, y1) = r["bounds"][0], r["bounds"][2]
        doors = ", ".join(lm_names[i] for i in r["landmarks"]) if r["landmarks"] else "none"
        lines.append(f"region {rid}: x [{x0:.2f}, {x1:.2f}] y [{y0:.2f}, {y1:.2f}]; "
                     f"landmarks: {doors}; small objects: {smalls}")
    for o in large:
        x, y, z = o["centroid"]
        lines.append(f"object {names[o['id']]} at ({x:.2f}, {y:.2f}, {z:.2f}) in region {o['region']}")
    for e in doc["relations"]:
        if e["accepted"]:
            lines.append(f"{names[e['subject']]} {e['predicate']} {names[e['object']]}")
    return "\n".join(lines) + "\n"
