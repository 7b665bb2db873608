"""Object search over a scene graph: plan a visiting order of large objects and
simulate a robot executing it until the target comes within sensing range."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

WITH_RELATIONS = "with-relations"
NO_RELATIONS = "no-relations"
MODES = (WITH_RELATIONS, NO_RELATIONS)


@dataclass(frozen=True)
class LikelihoodPrior:
    """How likely a target class is found near an anchor class."""

    scores: Mapping[Tuple[str, str], float] = field(default_factory=dict)
    default: float = 0.05

    def __post_init__(self):
        for k, v in list(self.scores.items()) + [(("*", "*"), self.default)]:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"prior score for {k} must lie in [0, 1], got {v}")

    def __call__(self, target: str, anchor: str) -> float:
        return self.scores.get((target, anchor), self.default)

    def targets(self) -> List[str]:
        return sorted({t for t, _a in self.scores})

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodPrior":
        default = float(d.get("default", 0.05))
        scores = {}
        for target, table in d.items():
            if target == "default":
                continue
            if not isinstance(table, dict):
                raise ValueError(f"prior entry {target!r} must be a table of anchor scores")
            for anchor, v in table.items():
                scores[(target, anchor)] = float(v)
        return cls(scores, default)

    @classmethod
    def load(cls, path: str) -> "LikelihoodPrior":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))


@dataclass(frozen=True)
class Waypoint:
    position: Tuple[float, float, float]
    dwell: bool
    anchors: Tuple[int, ...]
    score: float


@dataclass(frozen=True)
class SearchPlan:
    waypoints: Tuple[Waypoint, ...]
    mode: str
    target: str
    start: Tuple[float, float]

    def covered(self) -> List[int]:
        return sorted(a for w in self.waypoints for a in w.anchors)


@dataclass
class SearchResult:
    time_s: float
    path_m: float
    found: bool
    dwells: int
    trace: List[dict] = field(default_factory=list)


def _doc(graph) -> dict:
    return json.loads(graph) if isinstance(graph, str) else graph


def _clusters(objects: Sequence[dict], relations: Sequence[dict], use_relations: bool) -> List[List[dict]]:
    ids = [o["id"] for o in objects]
    ds = DisjointSet(ids)
    if use_relations:
        for e in relations:
            if e["accepted"] and e["predicate"] == "beside" and e["subject"] in ds and e["object"] in ds:
                ds.merge(e["subject"], e["object"])
    by_id = {o["id"]: o for o in objects}
    return sorted(([by_id[i] for i in sorted(s)] for s in ds.subsets()), key=lambda c: c[0]["id"])


def plan(graph, target: str, prior: LikelihoodPrior, mode: str = WITH_RELATIONS,
         start: Sequence[float] = (0.0, 0.0), use_distance: bool = True) -> SearchPlan:
    """Greedy visiting order over large objects.

    Each step picks the unvisited waypoint maximizing ``score / (1 + d)`` where
    ``d`` is the horizontal distance from the current position (or just
    ``score`` when ``use_distance`` is off); ties go to the lower anchor id.
    With relations, large objects joined by accepted ``beside`` edges share one
    waypoint placed at the member with the highest score.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    doc = _doc(graph)
    anchors = [o for o in doc.get("objects", []) if o["level"] == "large"]
    if not anchors:
        raise ValueError("graph has no large objects to search around")
    pending = []
    for cl in _clusters(anchors, doc.get("relations", []), mode == WITH_RELATIONS):
        best = max(cl, key=lambda o: (prior(target, o["class"]), -o["id"]))
        pending.append(Waypoint(tuple(float(v) for v in best["centroid"]), True,
                                tuple(o["id"] for o in cl), prior(target, best["class"])))
    pos = np.asarray(start[:2], dtype=float)
    order = []
    while pending:
        def utility(w: Waypoint) -> Tuple[float, int]:
            d = float(np.hypot(*(np.asarray(w.position[:2]) - pos))) if use_distance else 0.0
            return (w.score / (1.0 + d), -min(w.anchors))
        nxt = max(pending, key=utility)
        pending.remove(nxt)
        order.append(nxt)
        pos = np.asarray(nxt.position[:2])
    return SearchPlan(tuple(order), mode, target, (float(start[0]), float(start[1])))


def execute(search: SearchPlan, truth, instance: int, speed: float = 0.7,
            t_look: float = 8.0, r_s: float = 2.0) -> SearchResult:
    """Drive straight between waypoints, looking around at each dwell.

    The target is found at the first dwell within ``r_s`` (horizontally) of the
    true centroid of ``instance``.  Time is path length over ``speed`` plus
    ``t_look`` per dwell.
    """
    if speed <= 0 or t_look < 0 or r_s <= 0:
        raise ValueError("speed and r_s must be positive and t_look non-negative")
    goal = np.asarray(target_position(truth, instance)[:2], dtype=float)
    pos = np.asarray(search.start, dtype=float)
    path = 0.0
    dwells = 0
    trace = []
    for w in search.waypoints:
        nxt = np.asarray(w.position[:2])
        path += float(np.hypot(*(nxt - pos)))
        pos = nxt
        found = False
        if w.dwell:
            dwells += 1
            found = float(np.hypot(*(goal - pos))) <= r_s
        trace.append({"anchors": list(w.anchors), "position": [float(v) for v in pos],
                      "path_m": path, "found": found})
        if found:
            return SearchResult(path / speed + dwells * t_look, path, True, dwells, trace)
    return SearchResult(path / speed + dwells * t_look, path, False, dwells, trace)


def target_position(truth, instance: Optional[int] = None, target: Optional[str] = None) -> Tuple[float, float, float]:
    """True centroid of the target, picked by instance id or by a unique class."""
    objs = truth.objects if hasattr(truth, "objects") else truth
    if instance is not None:
        for o in objs:
            if o["id"] == instance:
                return tuple(o["centroid"])
        raise KeyError(f"instance {instance} not in truth")
    hits = [o for o in objs if o["class"] == target]
    if len(hits) != 1:
        raise KeyError(f"need exactly one {target!r} in truth, found {len(hits)}")
    return tuple(hits[0]["centroid"])


# -------------------------------------------------------------- scenarios
@dataclass(frozen=True)
class Scenario:
    name: str
    target: str
    instance: int
    position: Tuple[float, float, float]
    start: Tuple[float, float]


def load_scenarios(path: str) -> Tuple[str, List[Scenario], Tuple[int, ...]]:
    """Scene name, scenarios, and the instances to leave out of the search graph."""
    with open(path, "rb") as fh:
        d = tomllib.load(fh)
    out = []
    for s in d.get("scenarios", []):
        out.append(Scenario(str(s["name"]), str(s["target"]), int(s["instance"]),
                            tuple(float(v) for v in s["position"]), tuple(float(v) for v in s["start"])))
    remove = tuple(int(i) for i in d.get("remove", ()))
    return str(d.get("scene", "indoor_small")), out, remove


SEARCH_COLUMNS = ["scenario", "target", "mode", "time_s", "path_m", "found"]


def result_row(scenario: str, target: str, mode: str, res: SearchResult) -> dict:
    return {"scenario": scenario, "target": target, "mode": mode,
            "time_s": f"{res.time_s:.6f}", "path_m": f"{res.path_m:.6f}", "found": int(res.found)}
