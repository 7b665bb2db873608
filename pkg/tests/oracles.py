"""Slow, obviously-correct reference implementations used by the tests.

None of these import the package's own algorithms; they only share plain data.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Dict, Iterable, List, Sequence, Set, Tuple

import numpy as np


# ---------------------------------------------------------------- Bayes
def categorical_posterior(observations: Sequence[int], num_classes: int, p_hit: Fraction) -> List[Fraction]:
    """Exact posterior of a uniform-prior categorical label after independent
    observations, each correct with ``p_hit`` and otherwise uniform over the rest."""
    miss = (1 - p_hit) / (num_classes - 1)
    post = []
    for c in range(num_classes):
        p = Fraction(1)
        for o in observations:
            p *= p_hit if o == c else miss
        post.append(p)
    z = sum(post)
    return [p / z for p in post]


def saturated(observations: Sequence[Tuple[int, int]], c_max: int) -> List[int]:
    """Keep at most ``c_max`` observations of each class per keyframe."""
    seen: Dict[Tuple[int, int], int] = {}
    out = []
    for kf, c in observations:
        n = seen.get((kf, c), 0)
        if n < c_max:
            out.append(c)
        seen[(kf, c)] = n + 1
    return out


# ------------------------------------------------------------ clustering
class UnionFind:
    def __init__(self):
        self.parent: Dict[object, object] = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def grid_components(labels: np.ndarray, radius: int = 1) -> Set[Tuple[int, frozenset]]:
    """(class, voxel set) for every connected same-class group of a dense label grid.

    Negative entries are empty.  Neighbors are all offsets with Chebyshev norm
    at most ``radius``, visited by brute force over the whole grid.
    """
    uf = UnionFind()
    cells = [tuple(int(v) for v in k) for k in np.argwhere(labels >= 0)]
    occupied = set(cells)
    offsets = [d for d in itertools.product(range(-radius, radius + 1), repeat=3) if any(d)]
    for k in cells:
        uf.find(k)
        for d in offsets:
            n = (k[0] + d[0], k[1] + d[1], k[2] + d[2])
            if n in occupied and labels[n] == labels[k]:
                uf.union(k, n)
    groups: Dict[object, Set] = {}
    for k in cells:
        groups.setdefault(uf.find(k), set()).add(k)
    return {(int(labels[next(iter(g))]), frozenset(g)) for g in groups.values()}


# -------------------------------------------------------------- matching
def optimal_matching(truth: Sequence[dict], estimates: Sequence[dict], d_max: float
                     ) -> Tuple[int, float]:
    """Max-cardinality, then min-total-distance same-class matching.

    Exhaustive backtracking: every truth object tries each unused estimate of
    its class within ``d_max``, or staying unmatched.
    """
    cand = []
    for g in truth:
        gc = np.asarray(g["centroid"], float)
        row = []
        for j, e in enumerate(estimates):
            d = float(np.linalg.norm(gc - np.asarray(e["centroid"], float)))
            if e["class"] == g["class"] and d <= d_max:
                row.append((j, d))
        cand.append(row)
    best = [0, 0.0]

    def search(i: int, used: frozenset, n: int, total: float) -> None:
        if i == len(cand):
            if n > best[0] or (n == best[0] and total < best[1]):
                best[0], best[1] = n, total
            return
        for j, d in cand[i]:
            if j not in used:
                search(i + 1, used | {j}, n + 1, total + d)
        search(i + 1, used, n, total)

    search(0, frozenset(), 0, 0.0)
    return best[0], best[1]


# -------------------------------------------------------------- geometry
def ray_box_distance(origin: Sequence[float], direction: Sequence[float],
                     lo: Sequence[float], hi: Sequence[float]) -> float:
    """Entry parameter t of ``origin + t * direction`` into an axis-aligned box (inf on miss)."""
    t0, t1 = -math.inf, math.inf
    for a in range(3):
        o, d = origin[a], direction[a]
        if d == 0.0:
            if not lo[a] <= o <= hi[a]:
                return math.inf
            continue
        ta, tb = (lo[a] - o) / d, (hi[a] - o) / d
        t0 = max(t0, min(ta, tb))
        t1 = min(t1, max(ta, tb))
    return t0 if t0 <= t1 and t0 > 0 else math.inf


def visible_faces(lo, hi, eye) -> List[Tuple[int, int]]:
    """(axis, side) of box faces whose outward normal points toward ``eye``."""
    out = []
    for a in range(3):
        if eye[a] < lo[a]:
            out.append((a, 0))
        elif eye[a] > hi[a]:
            out.append((a, 1))
    return out


def face_area(lo, hi, axis: int) -> float:
    u, v = [i for i in range(3) if i != axis]
    return (hi[u] - lo[u]) * (hi[v] - lo[v])


def surface_centroid(lo, hi, faces: Iterable[Tuple[int, int]], n: int = 4000, seed: int = 0) -> np.ndarray:
    """Area-weighted centroid of the given faces by uniform random sampling."""
    rng = np.random.default_rng(seed)
    pts, weights = [], []
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    for axis, side in faces:
        s = rng.uniform(lo, hi, size=(n, 3))
        s[:, axis] = hi[axis] if side else lo[axis]
        pts.append(s.mean(axis=0))
        weights.append(face_area(lo, hi, axis))
    w = np.asarray(weights)
    return (np.asarray(pts) * w[:, None]).sum(axis=0) / w.sum()
