"""Experiment configuration, replica drivers and report emission.

Each experiment kind maps a replica ``(index, seed)`` to a flat record; the
records are aggregated in replica order, so the aggregate section of a
report depends only on the configuration and the master seed, never on the
worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy import stats as sps

from . import busemann as bz
from .competition import (
    coexistence_proxy,
    export_partition,
    export_trace,
    extract_disjoint_geodesics,
    fpp_voronoi,
    simulate_richardson,
)
from .errors import ConfigError, FPPError, ReplicaAssertionError
from .geodesics import tree_end_count
from .lattice import BoxRegion, WeightSpec, derive_seed, make_environment, min_incident_array, save_environment
from .metric import brute_force_passage_times, export_passage_map, geodesic, geodesic_tree, passage_map
from .runner import map_replicas
from .shape import (
    _probe,
    convexity_defect,
    count_sides,
    default_margin,
    direction_grid,
    estimate_shape,
    export_hull,
    export_shape,
    lattice_targets,
    shape_from_records,
    supporting_functional,
)
from .stats import aggregate

SCHEMA_VERSION = 1

KINDS = ("env", "metric-oracle", "shape", "busemann-linearity", "coexistence", "duality", "ends")


class ExperimentConfig(BaseModel):
    """All experiment parameters; validated in full before anything runs."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["env", "metric-oracle", "shape", "busemann-linearity", "coexistence", "duality", "ends"]
    dimension: int = Field(2, ge=2)
    box_radius: int = Field(30, ge=1)
    weights: dict = Field(default_factory=lambda: {"family": "exponential", "rate": 1.0})
    seed: int = Field(0, ge=0, lt=2**64)
    replicas: int = Field(10, ge=0)
    workers: int = Field(1, ge=1)

    # metric-oracle
    oracle_side: int = Field(4, ge=2)
    axiom_sources: int = Field(12, ge=3)
    axiom_triples: int = Field(500, ge=1)

    # shape / duality shape pre-estimate
    directions: int = Field(32, ge=3)
    n: int = Field(100, ge=1)
    margin: Optional[int] = Field(None, ge=1)
    angle_tol: float = Field(0.05, ge=0.0)

    # busemann-linearity
    theta: float = 0.0
    M: int = Field(10, ge=1)
    deltas: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2])
    probe_radius: Optional[int] = Field(None, ge=1)
    probe_stride: int = Field(3, ge=1)

    # coexistence / duality
    k: int = Field(2, ge=1)
    sources: Optional[list[list[int]]] = None
    source_radius: int = Field(5, ge=1)
    rates: Optional[list[float]] = None
    proxy_mode: Literal["boundary", "volume"] = "boundary"
    volume_theta: Optional[float] = Field(None, ge=0.0, le=1.0)
    delta: float = Field(0.1, gt=0.0)
    epsilon: float = Field(0.05, gt=0.0, lt=1.0)
    placement: Literal["circle", "inductive"] = "circle"
    angle_offset: float = 0.0
    shape_directions: int = Field(16, ge=3)
    shape_n: int = Field(20, ge=2)
    shape_replicas: int = Field(8, ge=1)

    # ends
    r: int = Field(20, ge=0)
    R: int = Field(100, ge=1)

    @field_validator("weights")
    @classmethod
    def _weights_valid(cls, v):
        try:
            WeightSpec.from_dict(v)
        except ConfigError as exc:
            raise ValueError(str(exc)) from exc
        return v

    @model_validator(mode="after")
    def _kind_checks(self):
        d = self.dimension
        if self.kind == "metric-oracle" and self.oracle_side**d > 16:
            raise ValueError(f"oracle box must have <= 16 vertices, got {self.oracle_side}^{d}")
        if self.kind == "metric-oracle" and self.axiom_sources > (2 * self.box_radius + 1) ** d:
            raise ValueError("more axiom sources than box vertices")
        if self.kind in ("shape", "busemann-linearity", "duality") and d != 2:
            raise ValueError(f"{self.kind} is implemented for dimension 2")
        if self.kind == "shape" and self.angle_tol >= math.pi / 4:
            raise ValueError("angle_tol must be < pi/4")
        if self.kind == "busemann-linearity":
            pr = self.probe_radius or self.box_radius // 2
            if pr >= self.box_radius:
                raise ValueError("probe_radius must be smaller than box_radius")
            if self.M > pr * math.sqrt(2):
                raise ValueError(f"M = {self.M} exceeds every probe distance")
            if not self.deltas or any(x <= 0 for x in self.deltas):
                raise ValueError("deltas must be a nonempty list of positive numbers")
        if self.kind in ("coexistence", "duality"):
            if self.proxy_mode == "volume" and self.volume_theta is None:
                raise ValueError("proxy_mode 'volume' needs volume_theta")
        if self.kind == "coexistence":
            k = len(self.sources) if self.sources is not None else self.k
            if self.sources is not None:
                if any(len(s) != d for s in self.sources):
                    raise ValueError("every source needs `dimension` coordinates")
                if len({tuple(s) for s in self.sources}) != len(self.sources):
                    raise ValueError("duplicate sources")
                if any(abs(c) > self.box_radius for s in self.sources for c in s):
                    raise ValueError("source outside the box")
            elif self.source_radius > self.box_radius:
                raise ValueError("source_radius exceeds box_radius")
            if self.rates is not None and (len(self.rates) != k or any(x <= 0 for x in self.rates)):
                raise ValueError("rates must be positive, one per source")
        if self.kind == "duality" and d != 2:
            raise ValueError("duality driver is implemented for dimension 2")
        if self.kind == "ends" and not (self.r < self.R <= self.box_radius):
            raise ValueError(f"need r < R <= box_radius, got r={self.r}, R={self.R}, box_radius={self.box_radius}")
        return self

    @property
    def spec(self) -> WeightSpec:
        return WeightSpec.from_dict(self.weights)

    @property
    def region(self) -> BoxRegion:
        return BoxRegion.centered(self.box_radius, self.dimension)

    def canonical(self) -> dict:
        data = self.model_dump()
        data.pop("workers")
        return data

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a YAML (or JSON) key-value config and apply non-None overrides."""
    import yaml

    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values")
    return make_config(data, **overrides)


def make_config(data: dict, **overrides) -> ExperimentConfig:
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    config_hash: str
    configured: int
    discarded: int
    records: list = field(repr=False)
    aggregates: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict, repr=False)  # in-memory objects for export only

    @property
    def completed(self) -> int:
        return len(self.records)

    def to_json(self) -> dict:
        return _clean(
            {
                "schema_version": SCHEMA_VERSION,
                "kind": self.kind,
                "config_hash": self.config_hash,
                "config": self.config,
                "replicas": {"configured": self.configured, "completed": self.completed, "discarded": self.discarded},
                "aggregates": self.aggregates,
                "extras": self.extras,
                "environment": self.environment,
                "wall_clock": self.wall_clock,
            }
        )

    def aggregate_bytes(self) -> bytes:
        """Canonical serialisation of everything except wall-clock timing."""
        data = self.to_json()
        data.pop("wall_clock")
        return json.dumps(data, sort_keys=True).encode()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _fail(msg, index, seed):
    raise ReplicaAssertionError(msg, index=index, seed=seed)


# -- replica drivers ----------------------------------------------------------


def _env_replica(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    spec = cfg.spec
    env = make_environment(cfg.region, spec, seed)
    w = env.edge_array()
    y = min_incident_array(env)
    rec = {
        "index": index,
        "seed": seed,
        "mean_weight": float(w.mean()),
        "mean_min_incident": float(y.mean()) if y.size else 0.0,
        "resolved_ties": env.resolved_ties,
    }
    if spec.continuous:
        rec["ks_statistic"] = float(sps.kstest(w, spec.cdf).statistic)
    return rec


def _metric_replica(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    spec = cfg.spec
    d = cfg.dimension
    oracle = BoxRegion((0,) * d, (cfg.oracle_side - 1,) * d)
    env = make_environment(oracle, spec, seed)
    dist_ok = True
    path_ok = True
    max_diff = 0.0
    ties = 0
    for x in oracle.vertices():
        pm = passage_map(env, x)
        ties += pm.ties
        bf = brute_force_passage_times(env, x)
        for y in oracle.vertices():
            t_bf, p_bf = bf[y]
            t = float(pm.dist[oracle.index(y)])
            max_diff = max(max_diff, abs(t - t_bf))
            dist_ok &= t == t_bf
            if spec.continuous:
                path_ok &= geodesic(pm, y).vertices == p_bf.vertices
    if spec.continuous and not (dist_ok and path_ok):
        _fail(f"Dijkstra disagrees with brute force (max diff {max_diff})", index, seed)

    big = make_environment(cfg.region, spec, derive_seed(seed, 1))
    rng = np.random.default_rng(derive_seed(seed, 2))
    idx = rng.choice(cfg.region.n_vertices, size=cfg.axiom_sources, replace=False)
    dist = np.vstack([passage_map(big, cfg.region.vertex(i)).dist[idx] for i in idx])
    tri = rng.integers(0, cfg.axiom_sources, size=(cfg.axiom_triples, 3))
    sym_gap = float(np.abs(dist - dist.T).max())
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    excess = float((dist[a, b] - (dist[a, c] + dist[c, b])).max())
    symmetric = sym_gap <= 1e-9
    triangle = excess <= 1e-9
    if not (symmetric and triangle):
        _fail(f"metric axioms violated (symmetry gap {sym_gap}, triangle excess {excess})", index, seed)
    return {
        "index": index,
        "seed": seed,
        "oracle_match": bool(dist_ok and path_ok),
        "max_abs_diff": max_diff,
        "symmetric": symmetric,
        "triangle_ok": triangle,
        "triples": int(cfg.axiom_triples),
        "ties": int(ties),
    }


def _shape_setup(cfg: ExperimentConfig):
    targets = lattice_targets(direction_grid(cfg.directions), cfg.n)
    L = int(np.abs(targets).max()) + (cfg.margin or default_margin(cfg.n))
    return targets, BoxRegion.centered(L, 2)


def _shape_replica(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    targets, region = _shape_setup(cfg)
    rec = _probe(cfg.spec, targets, region, index, seed)
    rec["discarded"] = not any(rec["valid"])
    rec["n_valid"] = int(sum(rec["valid"]))
    return rec


def _probe_points(cfg: ExperimentConfig) -> np.ndarray:
    pr = cfg.probe_radius or cfg.box_radius // 2
    ax = np.arange(-pr, pr + 1, cfg.probe_stride)
    pts = np.array([(a, b) for a in ax for b in ax if (a, b) != (0, 0)], dtype=np.int64)
    return pts


def _busemann_replica(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    env = make_environment(cfg.region, cfg.spec, seed)
    region = env.region
    pm0 = passage_map(env, (0, 0))
    ray = bz.ray_toward(env, cfg.theta, pm=pm0)
    v = ray[-1]
    pm_v = passage_map(env, v)
    probes = _probe_points(cfg)
    idx = np.array([region.index(p) for p in probes])
    values = pm_v.dist[region.index((0, 0))] - pm_v.dist[idx]
    rho = bz.fit_gradient(probes, values)
    dev = bz.linearity_deviation_values(probes, values, rho, cfg.M)
    rec = {
        "index": index,
        "seed": seed,
        "gradient_x": rho.gradient[0],
        "gradient_y": rho.gradient[1],
        "gradient_angle": rho.angle,
        "residual_rms": rho.residual_rms,
        "deviation": dev,
        "ray_length": len(ray),
        "ties": int(pm0.ties + pm_v.ties),
    }
    for delta in cfg.deltas:
        rec[f"event_delta_{delta:g}"] = dev < delta
    return rec


def _default_sources(cfg: ExperimentConfig) -> list[tuple[int, ...]]:
    if cfg.sources is not None:
        return [tuple(s) for s in cfg.sources]
    d = cfg.dimension
    out = []
    for i in range(cfg.k):
        a = 2 * math.pi * i / cfg.k
        p = [0] * d
        p[0] = int(round(cfg.source_radius * math.cos(a)))
        p[1] = int(round(cfg.source_radius * math.sin(a)))
        out.append(tuple(p))
    if len(set(out)) != len(out):
        raise ConfigError("source_radius too small for k distinct sources")
    return out


def _competition_record(cfg, part, env, index, seed, check_witness: bool) -> dict:
    boundary = coexistence_proxy(part, "boundary")
    coexist = coexistence_proxy(part, cfg.proxy_mode, cfg.volume_theta)
    witness = False
    if boundary and check_witness:
        try:
            paths = extract_disjoint_geodesics(part, env)
        except FPPError as exc:
            _fail(f"coexistence witness failed: {exc}", index, seed)
        verts = [set(p.vertices) for p in paths]
        if len(paths) != part.k or any(verts[i] & verts[j] for i in range(len(verts)) for j in range(i + 1, len(verts))):
            _fail("witness geodesics are not pairwise disjoint", index, seed)
        witness = True
    rec = {
        "index": index,
        "seed": seed,
        "coexist": coexist,
        "boundary_coexist": boundary,
        "witness_extracted": witness,
        "witness_failure": bool(boundary and check_witness and not witness),
        "ties": int(part.ties),
    }
    for i, s in enumerate(part.shares()):
        rec[f"share_{i}"] = s
    return rec


def _coexistence_replica(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    sources = _default_sources(cfg)
    rates = cfg.rates or [1.0] * len(sources)
    if all(r == 1.0 for r in rates):
        env = make_environment(cfg.region, cfg.spec, seed)
        part = fpp_voronoi(env, sources)
        return _competition_record(cfg, part, env, index, seed, True)
    part, _ = simulate_richardson(cfg.region, sources, rates, seed)
    return _competition_record(cfg, part, None, index, seed, False)


def duality_setup(cfg: ExperimentConfig) -> dict:
    """Shape pre-estimate, supporting functionals and source placement (shared by all replicas)."""
    shape = estimate_shape(
        cfg.spec, cfg.shape_directions, cfg.shape_n, cfg.shape_replicas, derive_seed(cfg.seed, 2**40)
    )
    sides = count_sides(shape, min(cfg.angle_tol, math.pi / 4 - 1e-9))
    funcs = []
    for i in range(cfg.k):
        a = cfg.angle_offset + 2 * math.pi * i / cfg.k
        funcs.append(supporting_functional(shape, np.array([math.cos(a), math.sin(a)])).functional)
    placement = bz.place_coexistence_points(funcs, [cfg.delta] * cfg.k, [cfg.M] * cfg.k, method=cfg.placement)
    for p in placement.points:
        if any(abs(c) >= cfg.box_radius for c in p):
            raise ConfigError(f"placed source {p} does not fit strictly inside the box of radius {cfg.box_radius}")
    return {"shape": shape, "sides": sides, "placement": placement}


def _duality_replica(cfg: ExperimentConfig, sources, index: int, seed: int) -> dict:
    env = make_environment(cfg.region, cfg.spec, seed)
    part = fpp_voronoi(env, sources)
    return _competition_record(cfg, part, env, index, seed, True)


def _ends_replica(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    env = make_environment(cfg.region, cfg.spec, seed)
    tree = geodesic_tree(passage_map(env, (0,) * cfg.dimension))
    rep = tree_end_count(tree, cfg.r, cfg.R)
    return {
        "index": index,
        "seed": seed,
        "count": rep.count,
        "count_ge_4": rep.count >= 4,
        "directions": [list(u) for u in rep.directions],
        "ties": int(tree.pm.ties),
    }


def _scalar_records(records):
    return [{k: v for k, v in r.items() if k not in ("index", "seed", "discarded") and not isinstance(v, (list, dict))} for r in records]


def _histogram(values, bins, lo, hi) -> dict:
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    """Run every replica, enforce per-replica invariants and aggregate in replica order."""
    workers = cfg.workers if workers is None else workers
    start = time.perf_counter()
    extras: dict = {}
    artifacts: dict = {}
    setup = None
    if cfg.kind == "duality" and cfg.replicas > 0:
        setup = duality_setup(cfg)
        fn = partial(_duality_replica, cfg, setup["placement"].points)
    else:
        fn = partial(
            {
                "env": _env_replica,
                "metric-oracle": _metric_replica,
                "shape": _shape_replica,
                "busemann-linearity": _busemann_replica,
                "coexistence": _coexistence_replica,
                "duality": _duality_replica,
                "ends": _ends_replica,
            }[cfg.kind],
            cfg,
        )
    records = map_replicas(fn, cfg.seed, cfg.replicas, workers) if cfg.replicas > 0 else []
    elapsed = time.perf_counter() - start

    kept = [r for r in records if not r.get("discarded", False)]
    discarded = len(records) - len(kept)
    aggregates = aggregate(_scalar_records(kept)) if kept else {}

    if cfg.kind == "shape" and kept:
        targets, _ = _shape_setup(cfg)
        shape = shape_from_records(cfg.spec, targets, kept, cfg.n)
        extras["shape"] = shape_summary(shape, cfg.angle_tol)
        artifacts["shape"] = shape
    if cfg.kind == "busemann-linearity" and kept:
        extras["gradient_angle_histogram"] = _histogram([r["gradient_angle"] for r in kept], 36, 0.0, 2 * math.pi)
    if cfg.kind == "ends" and kept:
        counts = [r["count"] for r in kept]
        values, freq = np.unique(counts, return_counts=True)
        extras["count_distribution"] = {str(int(v)): int(f) for v, f in zip(values, freq)}
        extras["median_count"] = float(np.median(counts))
        extras["comparison"] = {
            "statistic": "fraction of replicas with count >= 4",
            "observed": float(np.mean([c >= 4 for c in counts])),
            "literature_value": 1.0,
            "asserted": False,
        }
    if cfg.kind == "duality" and setup is not None:
        extras["placement"] = setup["placement"].to_json()
        extras["sides"] = {"angle_tol": setup["sides"].angle_tol, "count": setup["sides"].count, "at_least_k": setup["sides"].count >= cfg.k}
        extras["target_frequency"] = 1.0 - cfg.epsilon
        artifacts["setup"] = setup

    spec = cfg.spec
    environment = {
        "weights": spec.to_dict(),
        "continuous": spec.continuous,
        "moment_flags": spec.moment_flags(cfg.dimension),
        "region": {"lower": list(cfg.region.lower), "upper": list(cfg.region.upper)},
    }
    rate = cfg.replicas / elapsed if elapsed > 0 else None
    return ExperimentReport(
        cfg.kind,
        cfg.canonical(),
        cfg.hash(),
        cfg.replicas,
        discarded,
        kept,
        aggregates,
        extras,
        environment,
        {"seconds": elapsed, "replicas_per_second": rate, "workers": workers},
        artifacts,
    )


def shape_summary(shape, angle_tol) -> dict:
    out = {
        "n": shape.n,
        "replicas": shape.replicas,
        "mu": shape.mu.tolist(),
        "stderr": shape.stderr.tolist(),
        "counts": shape.counts.tolist(),
        "pooled_stderr": shape.pooled_stderr(),
        "symmetry_defect": shape.symmetry_defect,
        "symmetry_defect_in_pooled_stderr": shape.symmetry_defect_se,
        "hull": shape.hull.tolist(),
        "partial": shape.partial,
    }
    if len(shape.hull) >= 3:
        out["convexity_defect_in_stderr"] = convexity_defect(shape)
        out["sides"] = {"angle_tol": angle_tol, "count": count_sides(shape, angle_tol).count}
    return out


def write_report(report: ExperimentReport, cfg: ExperimentConfig, out_dir) -> Path:
    """report.json, replicas.jsonl and the per-kind CSV artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_json()
    (out / "report.json").write_text(json.dumps(data, indent=2, sort_keys=True))
    with (out / "replicas.jsonl").open("w") as fh:
        for rec in report.records:
            fh.write(json.dumps(_clean(rec), sort_keys=True) + "\n")
    kind = cfg.kind
    if kind == "env":
        env = make_environment(cfg.region, cfg.spec, cfg.seed)
        save_environment(env, out / "environment.fppenv")
    elif kind == "metric-oracle" and report.records:
        env = make_environment(cfg.region, cfg.spec, derive_seed(report.records[0]["seed"], 1))
        export_passage_map(passage_map(env, (0,) * cfg.dimension), out / "passage_map.csv")
    elif kind == "shape" and "shape" in report.artifacts:
        export_shape(report.artifacts["shape"], out / "shape.csv")
        export_hull(report.artifacts["shape"], out / "hull.csv")
    elif kind == "busemann-linearity" and report.records:
        env = make_environment(cfg.region, cfg.spec, report.records[0]["seed"])
        y = (int(round(cfg.M * math.cos(cfg.theta))), int(round(cfg.M * math.sin(cfg.theta))))
        if cfg.region.contains(y) and y != (0, 0):
            bz.export_series(bz.busemann_series(env, (0, 0), y, cfg.theta), out / "series.csv")
    elif kind == "coexistence" and report.records:
        seed = report.records[0]["seed"]
        sources = _default_sources(cfg)
        rates = cfg.rates or [1.0] * len(sources)
        part, trace = simulate_richardson(cfg.region, sources, rates, seed)
        export_partition(part, out / "partition.csv")
        export_trace(trace, cfg.region, out / "trace.csv")
    elif kind == "duality" and "setup" in report.artifacts:
        setup = report.artifacts["setup"]
        setup["placement"].save(out / "placement.json")
        if report.records:
            env = make_environment(cfg.region, cfg.spec, report.records[0]["seed"])
            export_partition(fpp_voronoi(env, setup["placement"].points), out / "partition.csv")
    return out / "report.json"
