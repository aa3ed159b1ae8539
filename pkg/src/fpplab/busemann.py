"""Finite-horizon Busemann differences, linear functionals and point placement.

``B_k(x, y) = T(x, v_k) - T(y, v_k)`` along a ray ``v_1, v_2, ...``.  All
passage times are exact dyadic numbers (see ``fpplab.lattice``), so the
antisymmetry and cocycle identities hold bit for bit.  The last value of
a series stands in for the limit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, InfeasibleGeometry
from .lattice import Environment
from .metric import PassageMap, geodesic, passage_map


@dataclass(frozen=True)
class BusemannSeries:
    x: tuple[int, ...]
    y: tuple[int, ...]
    ray: tuple[tuple[int, ...], ...]
    values: np.ndarray = field(repr=False)

    @property
    def last(self) -> float:
        return float(self.values[-1])

    @property
    def oscillation(self) -> float:
        """max - min over the last quartile of k (convergence diagnostic)."""
        q = self.values[-max(1, len(self.values) // 4) :]
        return float(q.max() - q.min())


def ray_toward(env: Environment, theta: float, base=None, pm: PassageMap | None = None) -> tuple[tuple[int, ...], ...]:
    """Vertices of the box geodesic from ``base`` to the boundary vertex closest in angle to ``theta`` (d = 2)."""
    region = env.region
    if region.d != 2:
        raise ConfigError("angular ray selection is defined for d = 2")
    base = tuple(base) if base is not None else (0, 0)
    if pm is None:
        pm = passage_map(env, base)
    coords = region.coords()[region.boundary_mask()]
    rel = coords - np.asarray(base)
    norms = np.linalg.norm(rel, axis=1)
    u = np.array([math.cos(theta), math.sin(theta)])
    score = (rel @ u) / np.where(norms > 0, norms, np.inf)
    target = tuple(int(c) for c in coords[int(np.argmax(score))])
    return geodesic(pm, target).vertices[1:]


def busemann_series(env: Environment, x, y, ray, pm_x: PassageMap | None = None, pm_y: PassageMap | None = None) -> BusemannSeries:
    """Exact ``T(x, v_k) - T(y, v_k)`` along ``ray``.

    ``ray`` is either a vertex sequence with increasing norm or an angle
    (radians), in which case the ray follows the geodesic from the origin
    toward that boundary direction.
    """
    x, y = tuple(x), tuple(y)
    region = env.region
    if isinstance(ray, (int, float)):
        ray = ray_toward(env, float(ray))
    ray = tuple(tuple(int(c) for c in v) for v in ray)
    if not ray:
        raise DomainError("empty ray")
    for v in ray:
        if not region.contains(v):
            raise DomainError(f"ray vertex {v} exits region {region}")
    pm_x = pm_x or passage_map(env, x)
    pm_y = pm_y or (pm_x if y == x else passage_map(env, y))
    idx = np.array([region.index(v) for v in ray])
    values = pm_x.dist[idx] - pm_y.dist[idx]
    values.setflags(write=False)
    return BusemannSeries(x, y, ray, values)


def export_series(series: BusemannSeries, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        d = len(series.x)
        w.writerow(["k"] + [f"v{a}" for a in range(d)] + ["B"])
        for k, (v, b) in enumerate(zip(series.ray, series.values), start=1):
            w.writerow([k, *v, repr(float(b))])
    return path


@dataclass(frozen=True)
class LinearFunctional:
    gradient: tuple[float, ...]
    residual_rms: float = 0.0
    condition: float = 1.0
    n_probes: int = 0

    def __call__(self, x) -> float:
        return float(np.dot(self.gradient, x))

    @property
    def angle(self) -> float:
        """Gradient direction in [0, 2pi) (d = 2)."""
        return math.atan2(self.gradient[1], self.gradient[0]) % (2 * math.pi)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.gradient))


def fit_gradient(displacements, values) -> LinearFunctional:
    """Least-squares gradient for ``values ~ <g, displacement>``."""
    A = np.asarray(displacements, dtype=float)
    b = np.asarray(values, dtype=float)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise ConfigError("displacements must be (m, d) with one value per row")
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise ConfigError(f"degenerate design: rank {np.linalg.matrix_rank(A)} < {A.shape[1]}")
    g, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = b - A @ g
    s = np.linalg.svd(A, compute_uv=False)
    return LinearFunctional(
        tuple(float(c) for c in g),
        float(math.sqrt(np.mean(resid**2))),
        float(s[0] / s[-1]),
        int(A.shape[0]),
    )


def fit_linear_functional(series: Sequence[BusemannSeries]) -> LinearFunctional:
    """Fit rho from B_last(x, y) over probes y sharing the anchor x."""
    anchors = {s.x for s in series}
    if len(anchors) != 1:
        raise ConfigError("all series must share the same anchor")
    (z,) = anchors
    disp = [np.subtract(s.y, z) for s in series]
    return fit_gradient(disp, [s.last for s in series])


def linearity_deviation_values(displacements, values, rho: LinearFunctional, M: float) -> float:
    A = np.asarray(displacements, dtype=float)
    b = np.asarray(values, dtype=float)
    r = np.linalg.norm(A, axis=1)
    keep = r >= M
    if not keep.any():
        raise DomainError(f"no probe at distance >= {M}")
    dev = np.abs(b[keep] - A[keep] @ np.asarray(rho.gradient)) / r[keep]
    return float(dev.max())


def linearity_deviation(series: Sequence[BusemannSeries], rho: LinearFunctional, M: float) -> float:
    """sup over probes with |y - z| >= M of |B_last(z, y) - rho(y - z)| / |y - z|.

    The event A_rho(z, delta, M) holds at level delta iff the result is < delta.
    """
    anchors = {s.x for s in series}
    if len(anchors) != 1:
        raise ConfigError("all series must share the anchor z")
    (z,) = anchors
    return linearity_deviation_values([np.subtract(s.y, z) for s in series], [s.last for s in series], rho, M)


@dataclass(frozen=True)
class RegionPredicate:
    """Half-plane ``H`` or double cone ``C`` attached to a functional."""

    kind: str
    anchor: tuple[int, ...]
    delta: float
    rho: LinearFunctional

    def __post_init__(self):
        if self.kind not in ("H", "C"):
            raise ConfigError(f"region kind must be 'H' or 'C', got {self.kind!r}")


def region_contains(pred: RegionPredicate, y) -> bool:
    diff = np.subtract(y, pred.anchor).astype(float)
    r = float(np.linalg.norm(diff))
    val = pred.rho(diff)
    if pred.kind == "H":
        return val <= -pred.delta * r
    return abs(val) <= pred.delta * r


def _half_width(rho: LinearFunctional, delta: float) -> float:
    """Angular half-width of the cone C_rho(0, delta) around the null line of rho."""
    ratio = delta / rho.norm
    return math.pi / 2 if ratio >= 1 else math.asin(ratio)


def cones_disjoint(functionals: Sequence[LinearFunctional], deltas: Sequence[float]) -> bool:
    """True iff the cones C_rho_i(0, delta_i) pairwise meet only at the origin (d = 2)."""
    for i in range(len(functionals)):
        for j in range(i + 1, len(functionals)):
            a = (functionals[i].angle - functionals[j].angle) % math.pi
            sep = min(a, math.pi - a)
            if sep <= _half_width(functionals[i], deltas[i]) + _half_width(functionals[j], deltas[j]):
                return False
    return True


def circle_separated(functionals: Sequence[LinearFunctional], deltas: Sequence[float]) -> bool:
    """True iff unit gradients u_i satisfy rho_i(u_j - u_i) < -delta_i |u_j - u_i| for all i != j.

    This is the scale-free condition for the circle placement.  It reduces to
    |g_i| sin(theta_ij / 2) > delta_i and, unlike cone disjointness, admits
    antiparallel pairs whose null lines coincide.
    """
    for i, fi in enumerate(functionals):
        for j, fj in enumerate(functionals):
            if i == j:
                continue
            half = 0.5 * abs(math.remainder(fi.angle - fj.angle, 2 * math.pi))
            if fi.norm * math.sin(half) <= deltas[i]:
                return False
    return True


@dataclass(frozen=True)
class Placement:
    points: tuple[tuple[int, ...], ...]
    functionals: tuple[LinearFunctional, ...]
    deltas: tuple[float, ...]
    radii: tuple[float, ...]
    method: str
    checks: tuple[dict, ...] = ()

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "points": [list(p) for p in self.points],
            "functionals": [{"gradient": list(f.gradient)} for f in self.functionals],
            "deltas": list(self.deltas),
            "radii": list(self.radii),
            "checks": list(self.checks),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        return path


def verify_placement(points, functionals, deltas, radii) -> list[dict]:
    """Evaluate every pairwise condition from scratch.

    For i != j: ``|x_i - x_j| >= max(M_i, M_j)`` and
    ``g_i . (x_j - x_i) <= -delta_i |x_j - x_i|``.
    """
    out = []
    k = len(points)
    for i in range(k):
        g = functionals[i].gradient
        for j in range(k):
            if i == j:
                continue
            diff = [b - a for a, b in zip(points[i], points[j])]
            dist = math.sqrt(sum(c * c for c in diff))
            lhs = sum(gc * c for gc, c in zip(g, diff))
            out.append(
                {
                    "i": i,
                    "j": j,
                    "distance": dist,
                    "distance_ok": dist >= max(radii[i], radii[j]),
                    "rho_i": lhs,
                    "bound": -deltas[i] * dist,
                    "halfplane_ok": lhs <= -deltas[i] * dist,
                }
            )
    return out


def _all_ok(checks) -> bool:
    return all(c["distance_ok"] and c["halfplane_ok"] for c in checks)


def _circle(functionals, radius) -> tuple[tuple[int, ...], ...]:
    pts = []
    for f in functionals:
        u = np.asarray(f.gradient) / f.norm
        pts.append(tuple(int(c) for c in np.rint(radius * u)))
    return tuple(pts)


def _window_direction(functionals, deltas, m: int, grid: int = 1 << 16) -> float:
    """Angle psi maximising the slack of: rho_l(u) > delta_l for l >= m, rho_l(u) < -delta_l for l < m."""
    psi = np.linspace(0.0, 2 * math.pi, grid, endpoint=False)
    U = np.stack([np.cos(psi), np.sin(psi)], axis=1)
    slack = np.full(grid, np.inf)
    for l, (f, dl) in enumerate(zip(functionals, deltas)):
        val = U @ np.asarray(f.gradient)
        s = (val - dl) if l >= m else (-val - dl)
        slack = np.minimum(slack, s / f.norm)
    best = int(np.argmax(slack))
    if slack[best] <= 0:
        raise InfeasibleGeometry(f"no direction separates functional {m} from the others")
    return float(psi[best])


def _inductive(functionals, deltas, radii, scale) -> tuple[tuple[int, ...], ...]:
    pts = [(0, 0)]
    for m in range(1, len(functionals)):
        psi = _window_direction(functionals, deltas, m)
        length = scale * max(radii[: m + 1])
        for _ in range(40):
            v = (int(round(length * math.cos(psi))), int(round(length * math.sin(psi))))
            vn = math.hypot(*v)
            ok = vn > max(radii[: m + 1]) and all(
                (np.dot(f.gradient, v) > dl * vn) if l >= m else (np.dot(f.gradient, v) < -dl * vn)
                for l, (f, dl) in enumerate(zip(functionals, deltas))
            )
            if ok:
                break
            length *= 1.5
        else:
            raise InfeasibleGeometry(f"could not round step {m} to a lattice vector")
        pts.append((pts[-1][0] + v[0], pts[-1][1] + v[1]))
    return tuple(pts)


def place_coexistence_points(
    functionals: Sequence[LinearFunctional],
    deltas: Sequence[float],
    radii: Sequence[float],
    method: str = "circle",
    radius: float | None = None,
) -> Placement:
    """Starting sites x_1..x_k with x_j in H_rho_i(x_i, delta_i) and |x_i - x_j| >= max(M_i, M_j).

    ``method="circle"`` puts x_i on a circle in the gradient direction of rho_i
    (radius defaults to max M and is doubled until the conditions hold).
    ``method="inductive"`` builds x_1 = 0, x_{i+1} = x_i + v_{i+1} for a
    sequence of functionals with strictly increasing angles.
    """
    functionals = tuple(functionals)
    deltas = tuple(float(x) for x in deltas)
    radii = tuple(float(x) for x in radii)
    k = len(functionals)
    if not (len(deltas) == len(radii) == k) or k == 0:
        raise ConfigError("need one delta and one radius per functional")
    if any(len(f.gradient) != 2 for f in functionals):
        raise ConfigError("placement is implemented for d = 2")
    if any(dl <= 0 for dl in deltas) or any(m < 1 for m in radii):
        raise ConfigError("deltas must be > 0 and radii >= 1")
    if k == 1:
        return Placement(((0, 0),), functionals, deltas, radii, method, ())
    if method == "circle":
        if not circle_separated(functionals, deltas):
            raise InfeasibleGeometry("gradient directions too close for slopes delta_i (cone separation violated)")
        r = float(radius) if radius is not None else max(radii)
        for _ in range(30):
            pts = _circle(functionals, r)
            checks = verify_placement(pts, functionals, deltas, radii)
            if len(set(pts)) == k and _all_ok(checks):
                return Placement(pts, functionals, deltas, radii, method, tuple(checks))
            if radius is not None:
                break
            r *= 2
        raise InfeasibleGeometry("circle placement violates the half-plane conditions")
    if method == "inductive":
        if not cones_disjoint(functionals, deltas):
            raise InfeasibleGeometry("cones C_rho_i(0, delta_i) intersect away from the origin")
        angles = [f.angle for f in functionals]
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise InfeasibleGeometry(f"functional angles must be strictly increasing, got {angles}")
        scale = 1.0
        for _ in range(20):
            pts = _inductive(functionals, deltas, radii, scale)
            checks = verify_placement(pts, functionals, deltas, radii)
            if _all_ok(checks):
                return Placement(pts, functionals, deltas, radii, method, tuple(checks))
            scale *= 2
        raise InfeasibleGeometry("inductive placement failed verification")
    raise ConfigError(f"unknown placement method {method!r}")
