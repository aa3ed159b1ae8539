"""Passage times, geodesics and geodesic trees on finite boxes.

Single-source distances come from a binary-heap Dijkstra with lazy deletion
(compiled with numba).  Exact floating-point ties between competing
predecessors are resolved towards the lexicographically smallest
predecessor and counted; under a continuous weight law the counter should
stay at zero.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .errors import ConfigError, DomainError
from .lattice import BoxRegion, Environment

BRUTE_FORCE_MAX_VERTICES = 20


@numba.njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] < keys[i] or (keys[parent] == keys[i] and vals[parent] <= vals[i]):
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        vals[parent], vals[i] = vals[i], vals[parent]
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, size):
    key = keys[0]
    val = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and (keys[right] < keys[left] or (keys[right] == keys[left] and vals[right] < vals[left])):
            child = right
        if keys[i] < keys[child] or (keys[i] == keys[child] and vals[i] <= vals[child]):
            break
        keys[child], keys[i] = keys[i], keys[child]
        vals[child], vals[i] = vals[i], vals[child]
        i = child
    return key, val, size


@numba.njit(cache=True)
def _dijkstra(forward, shape, strides, sources, offsets):
    """Multi-source Dijkstra; each source starts at its offset time.

    Returns distances, predecessor (-1 at sources), settle order, owning
    source index and the number of exact ties met during relaxation.
    """
    n, d = forward.shape
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    owner = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    cap = 2 * d * n + len(sources) + 1
    keys = np.empty(cap)
    vals = np.empty(cap, dtype=np.int64)
    size = 0
    ties = 0
    for j in range(len(sources)):
        s = sources[j]
        if offsets[j] < dist[s]:
            dist[s] = offsets[j]
            owner[s] = j
            size = _heap_push(keys, vals, size, offsets[j], s)
    settled = 0
    while size > 0:
        key, u, size = _heap_pop(keys, vals, size)
        if done[u] or key > dist[u]:
            continue
        done[u] = True
        order[settled] = u
        settled += 1
        du = dist[u]
        for a in range(d):
            c = (u // strides[a]) % shape[a]
            for side in range(2):
                if side == 0:
                    if c == shape[a] - 1:
                        continue
                    v = u + strides[a]
                    w = forward[u, a]
                else:
                    if c == 0:
                        continue
                    v = u - strides[a]
                    w = forward[v, a]
                if done[v]:
                    continue
                nd = du + w
                if nd < dist[v]:
                    dist[v] = nd
                    pred[v] = u
                    owner[v] = owner[u]
                    size = _heap_push(keys, vals, size, nd, v)
                elif nd == dist[v]:
                    ties += 1
                    if u < pred[v]:
                        pred[v] = u
                        owner[v] = owner[u]
    return dist, pred, order[:settled], owner, ties


def run_dijkstra(env: Environment, sources: Sequence[int], offsets=None):
    """Low-level entry point over canonical vertex indices."""
    src = np.asarray(sources, dtype=np.int64)
    off = np.zeros(len(src)) if offsets is None else np.asarray(offsets, dtype=np.float64)
    region = env.region
    return _dijkstra(
        np.ascontiguousarray(env.forward),
        np.asarray(region.shape, dtype=np.int64),
        np.asarray(region.strides, dtype=np.int64),
        src,
        off,
    )


@dataclass(frozen=True)
class LatticePath:
    """Self-avoiding vertex sequence with its front-to-back summed weight."""

    vertices: tuple[tuple[int, ...], ...]
    weight: float
    uniqueness_warning: bool = False

    def __len__(self):
        return len(self.vertices)

    @property
    def source(self):
        return self.vertices[0]

    @property
    def target(self):
        return self.vertices[-1]

    def is_self_avoiding(self) -> bool:
        return len(set(self.vertices)) == len(self.vertices)


def path_weight(env: Environment, vertices: Sequence[Sequence[int]]) -> float:
    """Sum of edge weights along ``vertices``, accumulated front to back."""
    from .lattice import edge_weight

    total = 0.0
    for a, b in zip(vertices[:-1], vertices[1:]):
        total += edge_weight(env, a, b)
    return total


@dataclass(frozen=True, eq=False)
class PassageMap:
    """T(source, .) and predecessor links over ``env.region``."""

    env: Environment = field(repr=False)
    source: tuple[int, ...]
    dist: np.ndarray = field(repr=False)
    pred: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)
    ties: int = 0

    @property
    def region(self) -> BoxRegion:
        return self.env.region

    @property
    def source_index(self) -> int:
        return self.region.index(self.source)

    def chain(self, i: int) -> list[int]:
        """Canonical indices from vertex ``i`` back to the source."""
        out = [int(i)]
        pred = self.pred
        while pred[out[-1]] >= 0:
            out.append(int(pred[out[-1]]))
        return out


def passage_map(env: Environment, source: Sequence[int], region: BoxRegion | None = None) -> PassageMap:
    """Exact single-source passage times within ``region`` (default: the whole box)."""
    source = tuple(int(c) for c in source)
    if region is not None:
        env = env.restrict(region)
    if not env.region.contains(source):
        raise DomainError(f"source {source} outside region {env.region}")
    dist, pred, order, _, ties = run_dijkstra(env, [env.region.index(source)])
    for arr in (dist, pred, order):
        arr.setflags(write=False)
    return PassageMap(env, source, dist, pred, order, int(ties))


def passage_time(pm: PassageMap, target: Sequence[int]) -> float:
    if not pm.region.contains(target):
        raise DomainError(f"target {tuple(target)} outside region {pm.region}")
    return float(pm.dist[pm.region.index(target)])


def geodesic(pm: PassageMap, target: Sequence[int]) -> LatticePath:
    """Predecessor-traced path from the source to ``target``."""
    if not pm.region.contains(target):
        raise DomainError(f"target {tuple(target)} outside region {pm.region}")
    idx = pm.chain(pm.region.index(target))[::-1]
    vertices = tuple(pm.region.vertex(i) for i in idx)
    weight = path_weight(pm.env, vertices)
    if pm.ties:
        warnings.warn(f"passage map from {pm.source} met {pm.ties} exact ties; geodesic may not be unique")
    return LatticePath(vertices, weight, uniqueness_warning=pm.ties > 0)


def _neighbours(region: BoxRegion, v):
    for a in range(region.d):
        for step in (-1, 1):
            w = list(v)
            w[a] += step
            if region.contains(w):
                yield tuple(w)


def _brute_force_all(env: Environment, x) -> dict:
    from .lattice import edge_weight

    region = env.region
    if region.n_vertices > BRUTE_FORCE_MAX_VERTICES:
        raise ConfigError(
            f"brute force enumeration limited to {BRUTE_FORCE_MAX_VERTICES} vertices, "
            f"region has {region.n_vertices}"
        )
    x = tuple(x)
    if not region.contains(x):
        raise DomainError(f"{x} outside region")
    verts = list(region.vertices())
    index = {v: i for i, v in enumerate(verts)}
    adj = [[(index[w], edge_weight(env, v, w)) for w in _neighbours(region, v)] for v in verts]
    s = index[x]
    best_t = [math.inf] * len(verts)
    best_p: list = [None] * len(verts)
    best_t[s], best_p[s] = 0.0, (s,)
    path = [s]

    def walk(v, total, seen):
        for w, c in adj[v]:
            bit = 1 << w
            if seen & bit:
                continue
            t = total + c
            path.append(w)
            if t < best_t[w]:
                best_t[w], best_p[w] = t, tuple(path)
            walk(w, t, seen | bit)
            path.pop()

    walk(s, 0.0, 1 << s)
    return {
        verts[i]: (best_t[i], tuple(verts[j] for j in best_p[i]))
        for i in range(len(verts))
        if best_p[i] is not None
    }


def brute_force_passage_time(env: Environment, x: Sequence[int], y: Sequence[int]) -> tuple[float, LatticePath]:
    """Minimum over every self-avoiding path from x to y, by exhaustive enumeration."""
    y = tuple(y)
    if not env.region.contains(y):
        raise DomainError(f"{y} outside region")
    t, verts = _brute_force_all(env, x)[y]
    return t, LatticePath(verts, t)


def brute_force_passage_times(env: Environment, x: Sequence[int]) -> dict:
    """Brute-force (time, path) for every target reachable from ``x``."""
    return {y: (t, LatticePath(v, t)) for y, (t, v) in _brute_force_all(env, x).items()}


@dataclass(frozen=True, eq=False)
class GeodesicTree:
    """Spanning tree of geodesics from ``root`` inside a box."""

    pm: PassageMap = field(repr=False)
    root: tuple[int, ...]
    parent: np.ndarray = field(repr=False)

    @property
    def region(self) -> BoxRegion:
        return self.pm.region

    @property
    def n_vertices(self) -> int:
        return int(self.parent.size)

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.parent >= 0))

    def children(self, v: Sequence[int]) -> list[tuple[int, ...]]:
        i = self.region.index(v)
        return [self.region.vertex(j) for j in np.flatnonzero(self.parent == i)]

    def path_to(self, v: Sequence[int]) -> list[tuple[int, ...]]:
        return [self.region.vertex(i) for i in self.pm.chain(self.region.index(v))[::-1]]


def geodesic_tree(pm: PassageMap) -> GeodesicTree:
    if np.isinf(pm.dist).any():
        raise DomainError("passage map incomplete")
    return GeodesicTree(pm, pm.source, pm.pred)


def export_passage_map(pm: PassageMap, path) -> Path:
    """CSV with vertex coordinates, T and predecessor coordinates in canonical order."""
    path = Path(path)
    region = pm.region
    d = region.d
    coords = region.coords()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"v{a}" for a in range(d)] + ["T"] + [f"pred_v{a}" for a in range(d)])
        for i in range(region.n_vertices):
            p = int(pm.pred[i])
            pc = list(coords[p]) if p >= 0 else [""] * d
            w.writerow([int(c) for c in coords[i]] + [repr(float(pm.dist[i]))] + [c if c == "" else int(c) for c in pc])
    return path
