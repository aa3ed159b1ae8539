"""Time constant and asymptotic shape estimates, hull sides and supporting functionals.

A direction u is probed through the lattice point ``v = round(n u)``; the
time constant in the effective direction ``v/|v|`` is estimated by
``T(0, v)/|v|`` averaged over replicas, and the shape point is
``(v/|v|) / mu_hat``.  Replicas whose geodesic to v touches the simulation
box boundary are discarded for that direction and counted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import partial
from itertools import permutations, product
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .busemann import LinearFunctional
from .errors import ConfigError, DomainError
from .lattice import BoxRegion, WeightSpec, make_environment
from .metric import run_dijkstra
from .runner import map_replicas
from .stats import Summary


@numba.njit(cache=True)
def _touch_boundary(order, pred, on_boundary):
    touch = np.zeros(pred.size, dtype=np.bool_)
    for i in order:
        p = pred[i]
        touch[i] = on_boundary[i] or (p >= 0 and touch[p])
    return touch


def lattice_symmetries(d: int) -> list[np.ndarray]:
    """Signed permutation matrices (the symmetry group of Z^d fixing the origin)."""
    mats = []
    for perm in permutations(range(d)):
        for signs in product((1, -1), repeat=d):
            m = np.zeros((d, d), dtype=np.int64)
            for i, (j, s) in enumerate(zip(perm, signs)):
                m[i, j] = s
            mats.append(m)
    return mats


def direction_grid(count: int, offset: float = 0.0) -> np.ndarray:
    """``count`` equally spaced unit vectors in the plane."""
    if count < 3:
        raise ConfigError("direction grid needs at least 3 directions")
    a = offset + 2 * math.pi * np.arange(count) / count
    return np.stack([np.cos(a), np.sin(a)], axis=1)


def lattice_targets(directions: np.ndarray, n: int) -> np.ndarray:
    t = np.rint(n * np.asarray(directions, dtype=float)).astype(np.int64)
    if np.any(np.all(t == 0, axis=1)):
        raise ConfigError(f"n = {n} too small: some direction rounds to the origin")
    return t


def _probe(spec: WeightSpec, targets: np.ndarray, region: BoxRegion, index: int, seed: int) -> dict:
    """One replica: T(0, v)/|v| for every target plus validity flags."""
    env = make_environment(region, spec, seed)
    dist, pred, order, _, ties = run_dijkstra(env, [region.index((0,) * region.d)])
    touch = _touch_boundary(order, pred, region.boundary_mask())
    idx = np.array([region.index(t) for t in targets])
    norms = np.linalg.norm(targets.astype(float), axis=1)
    return {
        "index": index,
        "seed": seed,
        "passage": [float(x) for x in dist[idx]],
        "ratio": [float(x) for x in dist[idx] / norms],
        "valid": [bool(not x) for x in touch[idx]],
        "ties": int(ties),
    }


def probe_replicas(spec, targets, region, replicas, seed, workers=1) -> list[dict]:
    fn = partial(_probe, spec, np.asarray(targets, dtype=np.int64), region)
    return map_replicas(fn, seed, replicas, workers)


def default_margin(extent: int) -> int:
    return max(10, math.ceil(0.3 * extent))


@dataclass(frozen=True)
class TimeConstantEstimate:
    direction: tuple[int, ...]
    mu: float
    stderr: float
    n_list: tuple[int, ...]
    trend: tuple[float, ...]
    accepted: int
    discarded: int

    @property
    def trend_nonincreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.trend, self.trend[1:]))


def estimate_time_constant(
    spec: WeightSpec,
    z: Sequence[int],
    n_list: Sequence[int],
    replicas: int,
    seed: int,
    margin: int | None = None,
    workers: int = 1,
) -> TimeConstantEstimate:
    """mu_hat(z) = mean of T(0, n_max z)/n_max over replicas whose geodesic stays off the box boundary."""
    z = np.asarray(z, dtype=np.int64)
    n_list = tuple(int(n) for n in n_list)
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ConfigError(f"n_list must be positive and strictly increasing, got {n_list}")
    if not z.any():
        raise ConfigError("direction z must be nonzero")
    if replicas < 1:
        raise ConfigError("need at least one replica")
    far = n_list[-1] * z
    m = default_margin(int(np.abs(far).max())) if margin is None else int(margin)
    lower = tuple(int(min(0, c)) - m for c in far)
    upper = tuple(int(max(0, c)) + m for c in far)
    region = BoxRegion(lower, upper)
    targets = np.stack([n * z for n in n_list])
    records = probe_replicas(spec, targets, region, replicas, seed, workers)
    per_n = []
    for k, n in enumerate(n_list):
        per_n.append(Summary.of(r["passage"][k] / n for r in records if r["valid"][k]))
    last = per_n[-1]
    if last.n == 0:
        raise DomainError("every replica touched the box boundary; increase the margin")
    stderr = last.stderr if last.n > 1 else math.nan
    if spec.family == "constant":
        stderr = 0.0
    return TimeConstantEstimate(
        tuple(int(c) for c in z),
        last.mean,
        stderr,
        n_list,
        tuple(s.mean for s in per_n),
        last.n,
        replicas - last.n,
    )


def convex_hull_2d(points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain); near-collinear vertices are dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) < 3:
        return np.asarray(pts)
    scale = max(max(abs(c) for p in pts for c in p), 1.0)
    eps = tol * scale * scale

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    # exact chain first; pruning inside the chain would misjudge which of
    # three nearly collinear points is the middle one
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    changed = True
    while changed and len(hull) > 3:
        changed = False
        for i in range(len(hull)):
            if cross(hull[i - 1], hull[i], hull[(i + 1) % len(hull)]) <= eps:
                del hull[i]
                changed = True
                break
    return np.asarray(hull)


def _orbits(targets: np.ndarray, valid: np.ndarray) -> list[list[int]]:
    d = targets.shape[1]
    lookup = {tuple(t): i for i, t in enumerate(targets) if valid[i]}
    seen = set()
    orbits = []
    group = lattice_symmetries(d)
    for i, t in enumerate(targets):
        if not valid[i] or i in seen:
            continue
        orbit = sorted({lookup[tuple(g @ t)] for g in group if tuple(g @ t) in lookup})
        seen.update(orbit)
        orbits.append(orbit)
    return orbits


@dataclass(frozen=True, eq=False)
class ShapeEstimate:
    targets: np.ndarray = field(repr=False)
    directions: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)
    hull: np.ndarray = field(repr=False)
    n: int = 0
    replicas: int = 0
    symmetry_defect: float = 0.0
    symmetry_defect_se: float = 0.0
    orbits: tuple = ()

    @property
    def partial(self) -> bool:
        return not bool(self.mask.all())

    def pooled_stderr(self) -> float:
        se = self.stderr[self.mask]
        return float(math.sqrt(np.mean(se**2))) if se.size else math.nan


def _symmetry_defect(mu, se, orbits) -> tuple[float, float]:
    rel = 0.0
    in_se = 0.0
    for orbit in orbits:
        if len(orbit) < 2:
            continue
        m = mu[orbit]
        centre = float(m.mean())
        dev = np.abs(m - centre)
        rel = max(rel, float(dev.max()) / centre)
        pooled = math.sqrt(float(np.mean(se[orbit] ** 2)))
        if dev.max() > 0:
            in_se = max(in_se, float(dev.max()) / pooled if pooled > 0 else math.inf)
    return rel, in_se


def shape_from_records(spec: WeightSpec, targets: np.ndarray, records: Sequence[dict], n: int) -> ShapeEstimate:
    """Aggregate per-replica probe records (in replica order) into a ShapeEstimate."""
    targets = np.asarray(targets, dtype=np.int64)
    m = len(targets)
    summaries = [Summary() for _ in range(m)]
    for rec in records:
        for j in range(m):
            if rec["valid"][j]:
                summaries[j] = summaries[j].push(rec["ratio"][j])
    counts = np.array([s.n for s in summaries])
    mask = counts > 0
    mu = np.array([s.mean if s.n else np.nan for s in summaries])
    if spec.family == "constant":
        se = np.where(mask, 0.0, np.nan)
    else:
        se = np.array([s.stderr if s.n > 1 else np.nan for s in summaries])
    norms = np.linalg.norm(targets.astype(float), axis=1)
    directions = targets / norms[:, None]
    points = directions / mu[:, None]
    hull = convex_hull_2d(points[mask]) if targets.shape[1] == 2 and mask.sum() >= 3 else np.empty((0, 2))
    orbits = _orbits(targets, mask)
    rel, in_se = _symmetry_defect(mu, se, orbits)
    return ShapeEstimate(
        targets, directions, mu, se, counts, mask, points, hull, n, len(records), rel, in_se, tuple(map(tuple, orbits))
    )


def estimate_shape(
    spec: WeightSpec,
    directions,
    n: int,
    replicas: int,
    seed: int,
    margin: int | None = None,
    workers: int = 1,
) -> ShapeEstimate:
    """Point cloud z/mu_hat(z) over a direction grid (an int gives an equally spaced planar grid)."""
    if isinstance(directions, int):
        directions = direction_grid(directions)
    directions = np.asarray(directions, dtype=float)
    if replicas < 1:
        raise ConfigError("need at least one replica")
    targets = lattice_targets(directions, n)
    d = targets.shape[1]
    L = int(np.abs(targets).max()) + (default_margin(n) if margin is None else int(margin))
    region = BoxRegion.centered(L, d)
    records = probe_replicas(spec, targets, region, replicas, seed, workers)
    return shape_from_records(spec, targets, records, n)


def hull_radius(hull: np.ndarray, u: np.ndarray) -> float:
    """Distance from the origin to the hull boundary along unit vector u."""
    best = math.inf
    k = len(hull)
    for i in range(k):
        a, b = hull[i], hull[(i + 1) % k]
        e = b - a
        det = u[0] * (-e[1]) - u[1] * (-e[0])
        if abs(det) < 1e-15:
            continue
        t = (a[0] * (-e[1]) - a[1] * (-e[0])) / det
        s = (u[0] * a[1] - u[1] * a[0]) / det
        if t > 0 and -1e-12 <= s <= 1 + 1e-12:
            best = min(best, t)
    return best


def convexity_defect(shape: ShapeEstimate) -> float:
    """Largest inward gap between a cloud point and the hull, in radial standard errors."""
    worst = 0.0
    for j in np.flatnonzero(shape.mask):
        u = shape.directions[j]
        r_pt = 1.0 / shape.mu[j]
        gap = hull_radius(shape.hull, u) - r_pt
        if gap <= 1e-12:
            continue
        se_r = shape.stderr[j] / shape.mu[j] ** 2
        worst = max(worst, gap / se_r if se_r > 0 else math.inf)
    return worst


@dataclass(frozen=True)
class SideReport:
    angle_tol: float
    count: int
    normals: tuple[float, ...] = ()


def _edge_normal_angles(hull: np.ndarray) -> np.ndarray:
    e = np.roll(hull, -1, axis=0) - hull
    return np.arctan2(-e[:, 0], e[:, 1]) % (2 * math.pi)


def count_sides(shape, angle_tol: float) -> SideReport:
    """Tangent lines of the (planar) hull after merging supports with nearly parallel normals.

    Every hull edge carries a tangent line.  Edge normals are grouped
    greedily around the circle, starting after the widest gap; a group
    absorbs normals within ``angle_tol`` of its first member.
    """
    if not (0 <= angle_tol < math.pi / 4):
        raise ConfigError(f"angle_tol must lie in [0, pi/4), got {angle_tol}")
    hull = shape.hull if isinstance(shape, ShapeEstimate) else np.asarray(shape, dtype=float)
    if len(hull) < 3:
        raise DomainError("degenerate hull")
    ang = np.sort(_edge_normal_angles(hull))
    gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * math.pi]))
    start = (int(np.argmax(gaps)) + 1) % len(ang)
    seq = np.concatenate([ang[start:], ang[:start] + 2 * math.pi])
    anchors = [seq[0]]
    for a in seq[1:]:
        if a - anchors[-1] >= angle_tol:
            anchors.append(a)
    return SideReport(angle_tol, len(anchors), tuple(float(a % (2 * math.pi)) for a in anchors))


@dataclass(frozen=True)
class SupportReport:
    functional: LinearFunctional
    touch_points: tuple[tuple[float, ...], ...]
    max_value: float

    @property
    def unique_touch(self) -> bool:
        return len(self.touch_points) == 1

    @property
    def tangent(self) -> bool:
        """Unique supporting line at some boundary point: true on a hull edge, false at a lone vertex."""
        return len(self.touch_points) >= 2


def supporting_functional(shape, u, tol: float = 1e-12) -> SupportReport:
    """rho with gradient along u, scaled so that max over the hull of rho is 1."""
    hull = shape.hull if isinstance(shape, ShapeEstimate) else np.asarray(shape, dtype=float)
    u = np.asarray(u, dtype=float)
    if abs(float(np.linalg.norm(u)) - 1.0) > 1e-9:
        raise ConfigError("direction must be a unit vector")
    if len(hull) < 3:
        raise DomainError("degenerate hull")
    h = float((hull @ u).max())
    if h <= 0:
        raise DomainError("origin not inside hull")
    g = u / h
    vals = hull @ g
    touch = tuple(tuple(float(c) for c in p) for p, v in zip(hull, vals) if v >= 1.0 - tol)
    if vals.max() > 1.0 + tol:
        raise AssertionError("support scaling failed")
    return SupportReport(LinearFunctional(tuple(float(c) for c in g)), touch, float(vals.max()))


def export_shape(shape: ShapeEstimate, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle", "mu", "stderr", "n", "replicas"])
        for j in range(len(shape.targets)):
            ang = math.atan2(shape.directions[j][1], shape.directions[j][0]) if shape.targets.shape[1] == 2 else math.nan
            w.writerow([repr(ang), repr(float(shape.mu[j])), repr(float(shape.stderr[j])), shape.n, int(shape.counts[j])])
    return path


def export_hull(shape: ShapeEstimate, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for p in shape.hull:
            w.writerow([repr(float(p[0])), repr(float(p[1]))])
    return path
