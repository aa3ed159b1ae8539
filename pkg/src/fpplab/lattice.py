"""Reproducible random edge-weight environments on boxes of the Z^d lattice.

Every edge weight is a pure function of ``(seed, edge)``: a splitmix64 chain
over the coordinates of the lower endpoint and the edge axis produces a
53-bit uniform which is pushed through the inverse CDF of the chosen family.
Because the key is the absolute edge position, two boxes built from the same
seed agree on every edge they share (up to the rare grid-tie separation in
``make_environment``, which depends on the box).

Weights are rounded to the dyadic grid ``QUANTUM = 2**-40``.  Sums and
differences of grid values below ``2**13`` are exact in float64, so passage
times (and Busemann differences) are exact regardless of summation order.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DomainError, EnvironmentFileError, TieError

QUANTUM = 2.0**-40
EXACT_LIMIT = 2.0**13

MAGIC = b"FPPENV1"
FORMAT_VERSION = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def _zigzag(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.int64)
    return ((c << 1) ^ (c >> 63)).astype(np.uint64)


def hash_uniform(seed: int, coords: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Uniforms in the open interval (0, 1) keyed by (seed, edge).

    ``coords`` has shape (m, d) with the lower endpoint of each edge,
    ``axis`` has shape (m,).
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
    axis = np.asarray(axis, dtype=np.int64)
    with np.errstate(over="ignore"):
        h = np.full(coords.shape[0], np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
        h = _mix64(h + _GOLDEN)
        for i in range(coords.shape[1]):
            h = _mix64(h ^ (_zigzag(coords[:, i]) + _GOLDEN * np.uint64(i + 1)))
        h = _mix64(h ^ (axis.astype(np.uint64) + np.uint64(0xA5A5A5A5)))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def derive_seed(master: int, index: int) -> int:
    """Independent 64-bit seed for sub-stream ``index`` of ``master``."""
    with np.errstate(over="ignore"):
        h = _mix64(np.array([master & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLDEN)
        h = _mix64(h ^ (np.uint64(index) * _M2 + _GOLDEN))
    return int(h[0])


def quantize(w: np.ndarray) -> np.ndarray:
    return np.ldexp(np.round(np.ldexp(w, 40)), -40)


@dataclass(frozen=True)
class BoxRegion:
    """Inclusive box ``lower <= v <= upper`` of Z^d."""

    lower: tuple[int, ...]
    upper: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(int(c) for c in self.lower)
        upper = tuple(int(c) for c in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper):
            raise ConfigError("lower and upper corners differ in dimension")
        if len(lower) < 2:
            raise ConfigError(f"dimension must be >= 2, got {len(lower)}")
        if any(u < l for l, u in zip(lower, upper)):
            raise ConfigError(f"upper {upper} not >= lower {lower} coordinatewise")

    @classmethod
    def centered(cls, radius: int, d: int = 2) -> "BoxRegion":
        return cls((-radius,) * d, (radius,) * d)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u - l + 1 for l, u in zip(self.lower, self.upper))

    @property
    def strides(self) -> tuple[int, ...]:
        s = [1] * self.d
        for a in range(self.d - 2, -1, -1):
            s[a] = s[a + 1] * self.shape[a + 1]
        return tuple(s)

    @property
    def n_vertices(self) -> int:
        return math.prod(self.shape)

    @property
    def n_edges(self) -> int:
        total = 0
        for a in range(self.d):
            total += math.prod(n - 1 if b == a else n for b, n in enumerate(self.shape))
        return total

    def contains(self, v: Sequence[int]) -> bool:
        return len(v) == self.d and all(l <= c <= u for c, l, u in zip(v, self.lower, self.upper))

    def contains_region(self, other: "BoxRegion") -> bool:
        return self.contains(other.lower) and self.contains(other.upper)

    def on_boundary(self, v: Sequence[int]) -> bool:
        return any(c == l or c == u for c, l, u in zip(v, self.lower, self.upper))

    def index(self, v: Sequence[int]) -> int:
        """Canonical (lexicographic) index of vertex ``v``."""
        if not self.contains(v):
            raise DomainError(f"vertex {tuple(v)} outside region {self}")
        return sum((c - l) * s for c, l, s in zip(v, self.lower, self.strides))

    def vertex(self, i: int) -> tuple[int, ...]:
        out = []
        for l, s, n in zip(self.lower, self.strides, self.shape):
            out.append(l + (int(i) // s) % n)
        return tuple(out)

    def coords(self) -> np.ndarray:
        """All vertices in canonical order, shape (n_vertices, d)."""
        grids = np.indices(self.shape).reshape(self.d, -1).T
        return grids + np.asarray(self.lower, dtype=np.int64)

    def boundary_mask(self) -> np.ndarray:
        c = self.coords()
        return np.any((c == np.asarray(self.lower)) | (c == np.asarray(self.upper)), axis=1)

    def vertices(self) -> Iterator[tuple[int, ...]]:
        return product(*(range(l, u + 1) for l, u in zip(self.lower, self.upper)))

    def inradius(self, center: Sequence[int]) -> int:
        """Largest R with the sup-norm ball of radius R around ``center`` inside the box."""
        return min(min(c - l, u - c) for c, l, u in zip(center, self.lower, self.upper))

    def intersect(self, other: "BoxRegion") -> "BoxRegion":
        lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        hi = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        return BoxRegion(lo, hi)


FAMILIES = ("constant", "exponential", "uniform", "shifted_power")
_FAMILY_ID = {name: i for i, name in enumerate(FAMILIES)}


@dataclass(frozen=True)
class WeightSpec:
    """Edge-weight law.

    Families and parameters:

    * ``exponential``: ``rate`` > 0.
    * ``uniform``: ``low``, ``high`` with 0 <= low < high.
    * ``shifted_power``: ``shift + scale * (U**(-1/alpha) - 1)`` (a shifted
      Lomax law); ``alpha``, ``scale`` > 0, ``shift`` >= 0.
    * ``constant``: ``value`` > 0.  Atomic, admitted only as an analytic oracle.
    """

    family: str
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.family not in _FAMILY_ID:
            raise ConfigError(f"unknown weight family {self.family!r}; expected one of {FAMILIES}")
        params = self.params
        if isinstance(params, dict):
            params = tuple(sorted(params.items()))
        params = tuple((str(k), float(v)) for k, v in params)
        object.__setattr__(self, "params", params)
        p = dict(params)
        required = {
            "constant": ("value",),
            "exponential": ("rate",),
            "uniform": ("low", "high"),
            "shifted_power": ("alpha", "scale", "shift"),
        }[self.family]
        missing = [k for k in required if k not in p]
        extra = [k for k in p if k not in required]
        if missing or extra:
            raise ConfigError(f"{self.family} needs parameters {required}, got {sorted(p)}")
        if not all(math.isfinite(v) for v in p.values()):
            raise ConfigError("weight parameters must be finite")
        if self.family == "constant" and p["value"] <= 0:
            raise ConfigError("constant weight must be positive")
        if self.family == "exponential" and p["rate"] <= 0:
            raise ConfigError(f"exponential rate must be positive, got {p['rate']}")
        if self.family == "uniform" and not (0 <= p["low"] < p["high"]):
            raise ConfigError(f"uniform needs 0 <= low < high, got ({p['low']}, {p['high']})")
        if self.family == "shifted_power" and (p["alpha"] <= 0 or p["scale"] <= 0 or p["shift"] < 0):
            raise ConfigError("shifted_power needs alpha > 0, scale > 0, shift >= 0")

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "WeightSpec":
        return cls("exponential", (("rate", rate),))

    @classmethod
    def uniform(cls, low: float = 0.0, high: float = 1.0) -> "WeightSpec":
        return cls("uniform", (("high", high), ("low", low)))

    @classmethod
    def shifted_power(cls, alpha: float, scale: float = 1.0, shift: float = 0.0) -> "WeightSpec":
        return cls("shifted_power", (("alpha", alpha), ("scale", scale), ("shift", shift)))

    @classmethod
    def constant(cls, value: float = 1.0) -> "WeightSpec":
        return cls("constant", (("value", value),))

    @classmethod
    def from_dict(cls, data: dict) -> "WeightSpec":
        data = dict(data)
        family = data.pop("family", None)
        if family is None:
            raise ConfigError("weight spec needs a 'family' key")
        return cls(family, tuple(sorted(data.items())))

    def to_dict(self) -> dict:
        return {"family": self.family, **dict(self.params)}

    @property
    def p(self) -> dict:
        return dict(self.params)

    @property
    def continuous(self) -> bool:
        return self.family != "constant"

    def moment_flags(self, d: int) -> dict:
        """Declared flags: ``E[Y^d] < inf`` and ``E[exp(a w)] < inf`` for some a > 0.

        Y is the minimum of 2d independent weights.  For the shifted power law
        ``P(w > t) ~ t^-alpha`` so ``P(Y > t) ~ t^(-2 d alpha)`` and the d-th
        moment is finite iff ``alpha > 1/2``.
        """
        if self.family == "shifted_power":
            return {"min_moment": self.p["alpha"] > 0.5, "exp_moment": False}
        return {"min_moment": True, "exp_moment": True}

    def mean(self) -> float:
        p = self.p
        if self.family == "constant":
            return p["value"]
        if self.family == "exponential":
            return 1.0 / p["rate"]
        if self.family == "uniform":
            return 0.5 * (p["low"] + p["high"])
        if p["alpha"] <= 1:
            return math.inf
        return p["shift"] + p["scale"] / (p["alpha"] - 1.0)

    def variance(self) -> float:
        p = self.p
        if self.family == "constant":
            return 0.0
        if self.family == "exponential":
            return 1.0 / p["rate"] ** 2
        if self.family == "uniform":
            return (p["high"] - p["low"]) ** 2 / 12.0
        a = p["alpha"]
        if a <= 2:
            return math.inf
        return p["scale"] ** 2 * a / ((a - 1.0) ** 2 * (a - 2.0))

    def cdf(self, x):
        """Distribution function of the unquantized law (for goodness-of-fit checks)."""
        x = np.asarray(x, dtype=float)
        p = self.p
        if self.family == "constant":
            return (x >= p["value"]).astype(float)
        if self.family == "exponential":
            return np.where(x > 0, -np.expm1(-p["rate"] * np.maximum(x, 0)), 0.0)
        if self.family == "uniform":
            return np.clip((x - p["low"]) / (p["high"] - p["low"]), 0.0, 1.0)
        t = np.maximum(x - p["shift"], 0.0) / p["scale"]
        return 1.0 - (1.0 + t) ** (-p["alpha"])

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map open-interval uniforms to quantized, strictly positive weights."""
        p = self.p
        if self.family == "constant":
            return np.full_like(u, p["value"])
        if self.family == "exponential":
            w = -np.log1p(-u) / p["rate"]
        elif self.family == "uniform":
            w = p["low"] + (p["high"] - p["low"]) * u
        else:
            w = p["shift"] + p["scale"] * np.expm1(-np.log(u) / p["alpha"])
        w = quantize(w)
        lo = QUANTUM
        if self.family == "uniform":
            lo = max(lo, quantize(np.float64(p["low"])) + QUANTUM)
            w = np.minimum(w, quantize(np.float64(p["high"])) - QUANTUM)
        elif self.family == "shifted_power":
            lo = max(lo, quantize(np.float64(p["shift"])))
        return np.maximum(w, lo)


@dataclass(frozen=True, eq=False)
class Environment:
    """Immutable weighted box.

    ``forward[i, a]`` is the weight of the edge from vertex ``i`` (canonical
    index) to its neighbour in direction ``+e_a``; NaN where that neighbour
    lies outside the box.
    """

    region: BoxRegion
    spec: WeightSpec
    seed: int
    forward: np.ndarray = field(repr=False)
    resolved_ties: int = 0

    @property
    def d(self) -> int:
        return self.region.d

    def edge_array(self) -> np.ndarray:
        """Weights in canonical edge order: (lower endpoint, axis) lexicographic."""
        flat = self.forward.reshape(-1)
        return flat[~np.isnan(flat)]

    def restrict(self, region: BoxRegion) -> "Environment":
        """Sub-environment on ``region``; identical to regenerating it from the seed."""
        if not self.region.contains_region(region):
            raise DomainError(f"{region} is not inside {self.region}")
        if region == self.region:
            return self
        full = self.forward.reshape(self.region.shape + (self.d,))
        sl = tuple(slice(l - L, u - L + 1) for l, u, L in zip(region.lower, region.upper, self.region.lower))
        sub = np.array(full[sl], copy=True)
        for a in range(self.d):
            idx = [slice(None)] * self.d + [a]
            idx[a] = -1
            sub[tuple(idx)] = np.nan
        sub = sub.reshape(-1, self.d)
        sub.setflags(write=False)
        return Environment(region, self.spec, self.seed, sub, self.resolved_ties)


def _generate_forward(region: BoxRegion, spec: WeightSpec, seed: int) -> np.ndarray:
    coords = region.coords()
    n, d = coords.shape
    forward = np.full((n, d), np.nan)
    upper = np.asarray(region.upper)
    for a in range(d):
        present = coords[:, a] < upper[a]
        u = hash_uniform(seed, coords[present], np.full(int(present.sum()), a))
        forward[present, a] = spec.transform(u)
    return forward


def count_exact_ties(weights: np.ndarray) -> int:
    return int(weights.size - np.unique(weights).size)


def _separate_grid_ties(forward: np.ndarray) -> int:
    """Break exact ties created by rounding to the grid, in place.

    Within each group of equal weights the members after the first (in
    canonical edge order) move up by whole quanta.  Returns the number of
    edges moved.
    """
    flat = forward.reshape(-1)
    slots = np.flatnonzero(~np.isnan(flat))
    moved = 0
    for _ in range(64):
        w = flat[slots]
        order = np.argsort(w, kind="stable")
        ws = w[order]
        dup = np.flatnonzero(ws[1:] == ws[:-1]) + 1
        if dup.size == 0:
            return moved
        rank = np.ones(dup.size)
        for i in range(1, dup.size):
            if dup[i] == dup[i - 1] + 1:
                rank[i] = rank[i - 1] + 1
        flat[slots[order[dup]]] += rank * QUANTUM
        moved += int(dup.size)
    raise TieError("could not separate tied weights")


def make_environment(region: BoxRegion, spec: WeightSpec, seed: int, check_ties: bool = True) -> Environment:
    """Sample i.i.d. weights for every edge of ``region``.

    Rounding to the grid occasionally maps two draws to the same value
    (about 1e-3 per 1e5 edges for rate-1 exponentials); such groups are
    separated by whole quanta and counted in ``resolved_ties``.  Any tie
    left after that raises TieError.
    """
    if not isinstance(region, BoxRegion) or not isinstance(spec, WeightSpec):
        raise ConfigError("make_environment needs a BoxRegion and a WeightSpec")
    if not (0 <= int(seed) < 2**64):
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    forward = _generate_forward(region, spec, int(seed))
    moved = _separate_grid_ties(forward) if spec.continuous else 0
    forward.setflags(write=False)
    env = Environment(region, spec, int(seed), forward, moved)
    if check_ties and spec.continuous:
        ties = count_exact_ties(env.edge_array())
        if ties:
            raise TieError(f"{ties} exactly tied weights under continuous law {spec.family} (seed {seed})")
    return env


def _edge_slot(env: Environment, u: Sequence[int], v: Sequence[int]) -> tuple[int, int]:
    u, v = tuple(u), tuple(v)
    if not (env.region.contains(u) and env.region.contains(v)):
        raise DomainError(f"edge {u}-{v} not inside region")
    diff = [b - a for a, b in zip(u, v)]
    if sum(abs(x) for x in diff) != 1:
        raise DomainError(f"{u} and {v} are not lattice neighbours")
    axis = next(i for i, x in enumerate(diff) if x != 0)
    low = u if diff[axis] > 0 else v
    return env.region.index(low), axis


def edge_weight(env: Environment, u: Sequence[int], v: Sequence[int]) -> float:
    i, a = _edge_slot(env, u, v)
    return float(env.forward[i, a])


def incident_weights(env: Environment, v: Sequence[int]) -> list[float]:
    out = []
    for a in range(env.d):
        for step in (-1, 1):
            w = list(v)
            w[a] += step
            if env.region.contains(w):
                out.append(edge_weight(env, v, w))
    return out


def min_incident_weight(env: Environment, v: Sequence[int]) -> float:
    """Minimum over the 2d edges at ``v`` (the variable Y at ``v``)."""
    if not env.region.contains(v):
        raise DomainError(f"{tuple(v)} outside region")
    if env.region.on_boundary(v):
        raise DomainError(f"{tuple(v)} is a boundary vertex; incident edge set incomplete")
    return min(incident_weights(env, v))


def min_incident_array(env: Environment) -> np.ndarray:
    """Y at every interior vertex, in canonical order of the interior vertices."""
    region = env.region
    shape = region.shape
    full = env.forward.reshape(shape + (env.d,))
    inner = tuple(slice(1, n - 1) for n in shape)
    best = None
    for a in range(env.d):
        fw = full[inner + (a,)]
        lo = [slice(1, n - 1) for n in shape]
        lo[a] = slice(0, shape[a] - 2)
        bw = full[tuple(lo) + (a,)]
        m = np.minimum(fw, bw)
        best = m if best is None else np.minimum(best, m)
    return best.reshape(-1)


# -- persistence --------------------------------------------------------------

_HEAD = struct.Struct("<7sHB")


def _header_bytes(env: Environment, cached: bool) -> bytes:
    d = env.d
    params = env.spec.params
    parts = [
        _HEAD.pack(MAGIC, FORMAT_VERSION, d),
        struct.pack(f"<{d}q", *env.region.lower),
        struct.pack(f"<{d}q", *env.region.upper),
        struct.pack("<BB", _FAMILY_ID[env.spec.family], len(params)),
    ]
    for name, value in params:
        raw = name.encode()
        parts.append(struct.pack(f"<B{len(raw)}sd", len(raw), raw, value))
    parts.append(struct.pack("<QB", env.seed, int(cached)))
    return b"".join(parts)


def save_environment(env: Environment, path, cache_weights: bool = True) -> Path:
    """Write ``env`` in the FPPENV1 format (little endian, CRC-protected header)."""
    path = Path(path)
    head = _header_bytes(env, cache_weights)
    blob = head + struct.pack("<I", zlib.crc32(head))
    if cache_weights:
        w = np.ascontiguousarray(env.edge_array(), dtype="<f8")
        blob += struct.pack("<Q", w.size) + w.tobytes() + struct.pack("<I", zlib.crc32(w.tobytes()))
    path.write_bytes(blob)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise EnvironmentFileError("truncated environment file")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out


def load_environment(path) -> Environment:
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic, version, d = r.take("<7sHB")
    if magic != MAGIC:
        raise EnvironmentFileError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EnvironmentFileError(f"unsupported format version {version}")
    lower = r.take(f"<{d}q")
    upper = r.take(f"<{d}q")
    family_id, n_params = r.take("<BB")
    params = []
    for _ in range(n_params):
        (n,) = r.take("<B")
        (name,) = r.take(f"<{n}s")
        (value,) = r.take("<d")
        params.append((name.decode(errors="replace"), value))
    seed, cached = r.take("<QB")
    (crc,) = r.take("<I")
    if zlib.crc32(data[: r.pos - 4]) != crc:
        raise EnvironmentFileError("header checksum mismatch")
    try:
        region = BoxRegion(lower, upper)
        spec = WeightSpec(FAMILIES[family_id], tuple(params))
    except (ConfigError, IndexError) as exc:
        raise EnvironmentFileError(f"corrupted header: {exc}") from exc
    env = make_environment(region, spec, seed, check_ties=False)
    if cached:
        (count,) = r.take("<Q")
        if count != region.n_edges:
            raise EnvironmentFileError(f"weight count {count} != edge count {region.n_edges}")
        raw = data[r.pos : r.pos + 8 * count]
        if len(raw) != 8 * count:
            raise EnvironmentFileError("truncated weight array")
        r.pos += 8 * count
        (wcrc,) = r.take("<I")
        if zlib.crc32(raw) != wcrc:
            raise EnvironmentFileError("weight array checksum mismatch")
        weights = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        forward = np.array(env.forward, copy=True)
        mask = ~np.isnan(forward.reshape(-1))
        flat = forward.reshape(-1)
        flat[mask] = weights
        forward.setflags(write=False)
        env = Environment(region, spec, seed, forward, env.resolved_ties)
    if r.pos != len(data):
        raise EnvironmentFileError("trailing bytes after environment payload")
    return env
