"""Multi-type Richardson competition and FPP-Voronoi partitions.

With equal rates the growth model is first-passage percolation from several
sources: a site is eventually coloured by whichever source is closest in
the random metric.  ``simulate_richardson`` runs the Markov dynamics event by
event; its traversal clocks are the exponential weights of an Environment
scaled by ``1/rate`` of the type that exposes the edge.  An edge is only ever
exposed from one endpoint (the first to be coloured), so every clock is read
once and the dynamics match the Markov chain by memorylessness.  With all
rates equal to 1 the clocks are the environment weights themselves and the
final colouring equals ``fpp_voronoi`` on that environment, vertex for vertex.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DomainError, WitnessError
from .lattice import BoxRegion, Environment, WeightSpec, make_environment
from .metric import LatticePath, PassageMap, passage_map, path_weight


@dataclass(frozen=True, eq=False)
class Partition:
    region: BoxRegion
    sources: tuple[tuple[int, ...], ...]
    owner: np.ndarray = field(repr=False)
    cell_sizes: tuple[int, ...]
    touches_boundary: tuple[bool, ...]
    ties: int = 0
    passage_maps: tuple[PassageMap, ...] | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.sources)

    def owner_of(self, v) -> int:
        return int(self.owner[self.region.index(v)])

    def shares(self) -> tuple[float, ...]:
        n = self.region.n_vertices
        return tuple(s / n for s in self.cell_sizes)


def _check_sources(region: BoxRegion, sources) -> tuple[tuple[int, ...], ...]:
    sources = tuple(tuple(int(c) for c in x) for x in sources)
    if not sources:
        raise ConfigError("need at least one source")
    if len(set(sources)) != len(sources):
        raise ConfigError(f"duplicate sources in {sources}")
    for x in sources:
        if not region.contains(x):
            raise DomainError(f"source {x} outside region {region}")
    return sources


def _cells_connected(region: BoxRegion, owner: np.ndarray, sources) -> bool:
    grid = owner.reshape(region.shape)
    structure = ndimage.generate_binary_structure(region.d, 1)
    for i in range(len(sources)):
        _, n = ndimage.label(grid == i, structure=structure)
        if n != 1:
            return False
    return True


def _build_partition(region, sources, owner, ties, pms=None) -> Partition:
    k = len(sources)
    sizes = np.bincount(owner, minlength=k)
    bmask = region.boundary_mask()
    touch = np.zeros(k, dtype=bool)
    touch[np.unique(owner[bmask])] = True
    return Partition(
        region,
        sources,
        owner,
        tuple(int(s) for s in sizes),
        tuple(bool(t) for t in touch),
        int(ties),
        pms,
    )


def fpp_voronoi(env: Environment, sources: Sequence[Sequence[int]], check_connected: bool = True) -> Partition:
    """owner(v) = argmin_j T(x_j, v); exact ties go to the lower index and are counted."""
    sources = _check_sources(env.region, sources)
    pms = tuple(passage_map(env, x) for x in sources)
    dist = np.vstack([pm.dist for pm in pms])
    owner = np.argmin(dist, axis=0)
    best = dist[owner, np.arange(dist.shape[1])]
    ties = int(np.count_nonzero((dist == best).sum(axis=0) > 1))
    part = _build_partition(env.region, sources, owner, ties, pms)
    if check_connected and not ties and not _cells_connected(env.region, owner, sources):
        raise WitnessError("FPP-Voronoi cell is not lattice-connected")
    return part


@dataclass(frozen=True, eq=False)
class GrowthTrace:
    """Colouring events after time 0 (sources are the initial state)."""

    rates: tuple[float, ...]
    times: np.ndarray = field(repr=False)
    vertices: np.ndarray = field(repr=False)
    types: np.ndarray = field(repr=False)

    def __len__(self):
        return int(self.times.size)


def clock_environment(region: BoxRegion, seed: int) -> Environment:
    """Rate-1 exponential clocks shared with ``fpp_voronoi`` for the coupling."""
    return make_environment(region, WeightSpec.exponential(1.0), seed)


def simulate_richardson(
    region: BoxRegion,
    sources: Sequence[Sequence[int]],
    rates: Sequence[float],
    seed: int,
    clocks: Environment | None = None,
) -> tuple[Partition, GrowthTrace]:
    """Event-driven k-type Richardson growth on ``region``."""
    sources = _check_sources(region, sources)
    rates = tuple(float(r) for r in rates)
    if len(rates) != len(sources):
        raise ConfigError(f"{len(sources)} sources but {len(rates)} rates")
    if any(not (r > 0) for r in rates):
        raise ConfigError(f"rates must be positive, got {rates}")
    if clocks is None:
        clocks = clock_environment(region, seed)
    elif clocks.region != region:
        raise ConfigError("clock environment must live on the simulation region")
    fw = clocks.forward
    shape = region.shape
    strides = region.strides
    d = region.d
    n = region.n_vertices
    owner = np.full(n, -1, dtype=np.int64)
    heap: list[tuple[float, int, int]] = []
    for j, x in enumerate(sources):
        owner[region.index(x)] = j

    def expose(u, t):
        typ = int(owner[u])
        rate = rates[typ]
        for a in range(d):
            c = (u // strides[a]) % shape[a]
            if c < shape[a] - 1:
                v = u + strides[a]
                if owner[v] < 0:
                    heapq.heappush(heap, (t + fw[u, a] / rate, v, typ))
            if c > 0:
                v = u - strides[a]
                if owner[v] < 0:
                    heapq.heappush(heap, (t + fw[v, a] / rate, v, typ))

    for x in sources:
        expose(region.index(x), 0.0)
    times, verts, types = [], [], []
    while heap:
        t, v, typ = heapq.heappop(heap)
        if owner[v] >= 0:
            continue
        owner[v] = typ
        times.append(t)
        verts.append(v)
        types.append(typ)
        expose(v, t)
    trace = GrowthTrace(rates, np.asarray(times), np.asarray(verts, dtype=np.int64), np.asarray(types, dtype=np.int64))
    return _build_partition(region, sources, owner, 0), trace


PROXY_MODES = ("boundary", "volume")


def coexistence_proxy(p: Partition, mode: str = "boundary", theta: float | None = None) -> bool:
    """Finite stand-in for Coex: every cell reaches the box boundary ("boundary")
    or holds at least a fraction ``theta`` of the box ("volume")."""
    if mode == "boundary":
        return all(p.touches_boundary)
    if mode == "volume":
        if theta is None or not (0.0 <= theta <= 1.0):
            raise ConfigError(f"volume mode needs 0 <= theta <= 1, got {theta}")
        return all(s >= theta * p.region.n_vertices for s in p.cell_sizes)
    raise ConfigError(f"unknown proxy mode {mode!r}; expected one of {PROXY_MODES}")


def extract_disjoint_geodesics(p: Partition, env: Environment) -> list[LatticePath]:
    """One geodesic per cell, from its source to the nearest boundary vertex of the cell.

    Every returned path is checked to lie inside its cell, and the paths are
    checked to be pairwise vertex-disjoint.
    """
    if not coexistence_proxy(p, "boundary"):
        raise ConfigError("boundary coexistence proxy does not hold; no witness to extract")
    pms = p.passage_maps
    if pms is None:
        pms = tuple(passage_map(env, x) for x in p.sources)
    region = p.region
    bmask = region.boundary_mask()
    paths = []
    used: set[int] = set()
    for i, pm in enumerate(pms):
        cand = np.flatnonzero(bmask & (p.owner == i))
        w = int(cand[np.argmin(pm.dist[cand])])
        chain = pm.chain(w)[::-1]
        if np.any(p.owner[chain] != i):
            raise WitnessError(f"geodesic from source {i} leaves its cell")
        if used.intersection(chain):
            raise WitnessError(f"geodesic from source {i} meets another witness path")
        used.update(chain)
        verts = tuple(region.vertex(j) for j in chain)
        paths.append(LatticePath(verts, path_weight(env, verts), pm.ties > 0))
    return paths


def export_partition(p: Partition, path) -> Path:
    path = Path(path)
    coords = p.region.coords()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"v{a}" for a in range(p.region.d)] + ["owner"])
        for c, o in zip(coords, p.owner):
            w.writerow([int(x) for x in c] + [int(o)])
    return path


def export_trace(trace: GrowthTrace, region: BoxRegion, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"v{a}" for a in range(region.d)] + ["type"])
        for t, v, typ in zip(trace.times, trace.vertices, trace.types):
            w.writerow([repr(float(t))] + list(region.vertex(int(v))) + [int(typ)])
    return path
