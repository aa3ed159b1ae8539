"""Finite-box proxies for infinite-geodesic structure.

The end count works on the geodesic tree with the ball
``{v : |v - root|_inf <= r}`` removed.  What remains is a forest; every
component is a subtree hanging off a vertex just outside radius r, distinct
components are vertex-disjoint, and a component that reaches sup-radius R
contains a branch crossing the annulus ``r < |v|_inf <= R``.  The count of
such components is nondecreasing in r and nonincreasing in R.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numba
import numpy as np

from .errors import ConfigError, DomainError
from .lattice import BoxRegion, Environment
from .metric import GeodesicTree, LatticePath, passage_map, path_weight


@dataclass(frozen=True)
class EndCountReport:
    r: int
    R: int
    count: int
    directions: tuple[tuple[float, ...], ...] = ()
    exits: tuple[tuple[int, ...], ...] = ()

    def to_record(self, seed=None) -> dict:
        rec = {"seed": seed, "r": self.r, "R": self.R, "count": self.count}
        rec["directions"] = [list(u) for u in self.directions]
        return rec


@numba.njit(cache=True)
def _forest_tops(order, pred, radius, r):
    top = np.full(pred.size, -1, dtype=np.int64)
    for i in order:
        if radius[i] <= r:
            continue
        p = pred[i]
        if p < 0 or radius[p] <= r:
            top[i] = i
        else:
            top[i] = top[p]
    return top


def _sup_radius(region: BoxRegion, center) -> np.ndarray:
    return np.abs(region.coords() - np.asarray(center)).max(axis=1)


def tree_end_count(tree: GeodesicTree, r: int, R: int) -> EndCountReport:
    """Number of pairwise-disjoint tree branches crossing from radius r to R."""
    region = tree.region
    if not (0 <= r < R <= region.inradius(tree.root)):
        raise ConfigError(f"need 0 <= r < R <= inradius {region.inradius(tree.root)}, got r={r}, R={R}")
    radius = _sup_radius(region, tree.root)
    top = _forest_tops(tree.pm.order, tree.parent, radius, r)
    far = np.flatnonzero(radius == R)
    exits = {}
    for v in far:
        t = int(top[v])
        if t not in exits:
            exits[t] = int(v)
    root = np.asarray(tree.root, dtype=float)
    ordered = sorted(exits.items())
    vecs = []
    pts = []
    for _, v in ordered:
        p = region.vertex(v)
        u = np.asarray(p, dtype=float) - root
        vecs.append(tuple(float(x) for x in u / np.linalg.norm(u)))
        pts.append(p)
    return EndCountReport(r, R, len(ordered), tuple(vecs), tuple(pts))


def _box_around(center, R) -> BoxRegion:
    return BoxRegion(tuple(c - R for c in center), tuple(c + R for c in center))


def candidate_geodesics(env: Environment, sources, R: int, center=None) -> list[list[frozenset]]:
    """For each source, the distinct geodesics to the sup-sphere of radius R around ``center``."""
    d = env.d
    center = tuple(center) if center is not None else (0,) * d
    box = _box_around(center, R)
    if not env.region.contains_region(box):
        raise ConfigError(f"radius-{R} box around {center} not inside environment region")
    sub = env.restrict(box)
    for x in sources:
        if not box.contains(x):
            raise ConfigError(f"source {tuple(x)} outside the radius-{R} box")
    sphere = np.flatnonzero(_sup_radius(box, center) == R)
    out = []
    for x in sources:
        pm = passage_map(sub, x)
        seen = {}
        for w in sphere:
            verts = frozenset(pm.chain(int(w)))
            seen.setdefault(verts, None)
        out.append(sorted(seen, key=lambda s: (len(s), min(s))))
    return out


def _pack(candidates: list[list[frozenset]]) -> dict:
    """Greedy choice with single-conflict augmentation; returns source -> chosen path."""
    chosen: dict[int, frozenset] = {}

    def conflicts(path):
        return [j for j, p in chosen.items() if not path.isdisjoint(p)]

    def place(i, visiting):
        for path in candidates[i]:
            if not conflicts(path):
                chosen[i] = path
                return True
        for path in candidates[i]:
            blockers = conflicts(path)
            if len(blockers) != 1 or blockers[0] in visiting:
                continue
            j = blockers[0]
            old = chosen.pop(j)
            chosen[i] = path
            if place(j, visiting | {i, j}):
                return True
            del chosen[i]
            chosen[j] = old
        return False

    for i in range(len(candidates)):
        place(i, frozenset({i}))
    return chosen


def disjoint_geodesic_count(env: Environment, sources: Sequence[Sequence[int]], R: int, center=None) -> int:
    """Certified lower bound on the number of pairwise vertex-disjoint geodesics,
    at most one per source, each running from its source to the sup-sphere of radius R."""
    if not sources:
        raise ConfigError("need at least one source")
    sources = [tuple(x) for x in sources]
    if len(set(sources)) != len(sources):
        raise ConfigError("duplicate sources")
    candidates = candidate_geodesics(env, sources, R, center)
    chosen = _pack(candidates)
    paths = list(chosen.values())
    for a in range(len(paths)):
        for b in range(a + 1, len(paths)):
            if not paths[a].isdisjoint(paths[b]):
                raise AssertionError("packing produced overlapping geodesics")
    return len(chosen)


@dataclass(frozen=True)
class MergePoint:
    """Where geo(x, target) and geo(y, target) join for good (None if only at the target)."""

    vertex: tuple[int, ...] | None
    path_x: LatticePath = field(repr=False)
    path_y: LatticePath = field(repr=False)
    steps_to_target: int | None = None

    @property
    def present(self) -> bool:
        return self.vertex is not None


def coalescence_merge(env: Environment, x, y, target) -> MergePoint:
    """First vertex after which the geodesics from x and from y to ``target`` coincide.

    Both geodesics are read off the single geodesic tree rooted at ``target``,
    so once they meet they agree up to the target.  The merge is reported
    absent when the only shared vertex is the target itself.
    """
    x, y, target = tuple(x), tuple(y), tuple(target)
    pm = passage_map(env, target)
    region = env.region
    cx = pm.chain(region.index(x))
    cy = pm.chain(region.index(y))
    on_y = set(cy)
    m = next(i for i in cx if i in on_y)
    px = tuple(region.vertex(i) for i in cx)
    py = tuple(region.vertex(i) for i in cy)
    path_x = LatticePath(px, path_weight(env, px), pm.ties > 0)
    path_y = LatticePath(py, path_weight(env, py), pm.ties > 0)
    t_idx = region.index(target)
    if m == t_idx and x != target and y != target:
        return MergePoint(None, path_x, path_y, None)
    steps = len(cx) - 1 - cx.index(m)
    return MergePoint(region.vertex(m), path_x, path_y, steps)


def direction_sequence(path: LatticePath) -> list[tuple[float, ...]]:
    """Unit vectors (v_k - v_0)/|v_k - v_0| for k >= 1."""
    verts = path.vertices
    if len(verts) < 2:
        raise DomainError("direction sequence needs a path with at least one step")
    origin = np.asarray(verts[0], dtype=float)
    out = []
    for v in verts[1:]:
        u = np.asarray(v, dtype=float) - origin
        out.append(tuple(float(c) for c in u / math.sqrt(float(u @ u))))
    return out


def records_to_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            if hasattr(rec, "__dataclass_fields__"):
                rec = asdict(rec)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
