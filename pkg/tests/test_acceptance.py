"""Acceptance criteria, each at its stated scale and tolerance.

Every test prints one line ``AC<n> PASS|FAIL|RECORDED <details>`` (visible
without ``-s``) and then asserts.  Run just this module with

    pytest tests/test_acceptance.py -v
"""

import itertools
import math
import time

import numpy as np
import pytest

from fpplab.busemann import busemann_series, ray_toward
from fpplab.competition import clock_environment, fpp_voronoi, simulate_richardson
from fpplab.experiments import KINDS, make_config, run_experiment
from fpplab.lattice import BoxRegion, WeightSpec, derive_seed, make_environment
from fpplab.metric import brute_force_passage_times, geodesic, passage_map, passage_time
from fpplab.shape import count_sides, estimate_shape, lattice_targets, direction_grid
from fpplab.stats import wilson_interval

EXP = WeightSpec.exponential(1.0)


@pytest.fixture
def emit(capsys):
    def _emit(tag, ok, detail):
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        with capsys.disabled():
            print(f"\n{tag} {status} {detail}")

    return _emit


def test_ac1_oracle_equivalence(emit):
    region = BoxRegion((0, 0), (3, 3))
    start = time.perf_counter()
    mismatches = 0
    pairs = 0
    for i in range(100):
        env = make_environment(region, EXP, derive_seed(1, i))
        for x in region.vertices():
            pm = passage_map(env, x)
            bf = brute_force_passage_times(env, x)
            for y in region.vertices():
                t, path = bf[y]
                pairs += 1
                if passage_time(pm, y) != t or geodesic(pm, y).vertices != path.vertices:
                    mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    emit("AC1", ok, f"100 envs, {pairs} ordered pairs, {mismatches} mismatches, {elapsed:.1f}s (< 60s)")
    assert ok


def test_ac2_metric_axioms(emit):
    cfg = make_config(
        {"kind": "metric-oracle", "box_radius": 15, "replicas": 20, "axiom_sources": 12, "axiom_triples": 500, "seed": 2}
    )
    rep = run_experiment(cfg)
    agg = rep.aggregates
    triples = int(agg["triples"]["mean"] * agg["triples"]["n"])
    sym = agg["symmetric"]["successes"] == 20
    tri = agg["triangle_ok"]["successes"] == 20
    ties = agg["ties"]["mean"] == 0.0
    ok = sym and tri and ties and triples == 10_000 and rep.completed == 20
    emit("AC2", ok, f"20 envs, {triples} triples, symmetry {sym}, triangle {tri}, passage-time ties {agg['ties']['mean']}")
    assert ok


def test_ac3_busemann_algebra(emit):
    rng = np.random.default_rng(3)
    configs = 0
    exact = True
    bounded = True
    third = True
    third_checked = 0
    for e in range(10):
        env = make_environment(BoxRegion.centered(20), EXP, derive_seed(3, e))
        ray = ray_toward(env, rng.uniform(0, 2 * math.pi))
        pts = [tuple(int(c) for c in rng.integers(-12, 13, size=2)) for _ in range(12)]
        pts = list(dict.fromkeys(pts))
        pms = {p: passage_map(env, p) for p in pts}
        for _ in range(100):
            x, y, z = (pts[i] for i in rng.choice(len(pts), 3, replace=False))
            k = int(rng.integers(0, len(ray)))
            bxy = busemann_series(env, x, y, ray, pms[x], pms[y]).values[k]
            byx = busemann_series(env, y, x, ray, pms[y], pms[x]).values[k]
            byz = busemann_series(env, y, z, ray, pms[y], pms[z]).values[k]
            bxz = busemann_series(env, x, z, ray, pms[x], pms[z]).values[k]
            exact &= (bxy + byx == 0.0) and (bxy + byz == bxz)
            bounded &= abs(bxy) <= passage_time(pms[x], y) + 1e-9
            configs += 1
        # third property: x on the geodesic from y to v_k
        for k in (len(ray) // 3, len(ray) - 1):
            pm_v = passage_map(env, ray[k])
            for y in pts[:4]:
                path = geodesic(pm_v, y).vertices[::-1]
                for x in path[1:-1:2]:
                    b = busemann_series(env, y, x, ray[: k + 1], pms[y]).values[k]
                    third &= b == passage_time(pms[y], x)
                    third_checked += 1
    ok = exact and bounded and third and configs >= 1000
    emit("AC3", ok, f"{configs} (x,y,z,k) configs exact={exact} bounded={bounded}; third property {third_checked} checks ok={third}")
    assert ok


def test_ac4_richardson_coupling(emit):
    region = BoxRegion.centered(15)
    start = time.perf_counter()
    equal = 0
    for i in range(100):
        seed = derive_seed(4, i)
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        sources = [region.vertex(int(j)) for j in rng.choice(region.n_vertices, k, replace=False)]
        p_rich, _ = simulate_richardson(region, sources, [1.0] * k, seed)
        p_vor = fpp_voronoi(clock_environment(region, seed), sources)
        equal += bool(np.array_equal(p_rich.owner, p_vor.owner))
    elapsed = time.perf_counter() - start
    ok = equal == 100 and elapsed < 120
    emit("AC4", ok, f"31x31 box, {equal}/100 seeds vertex-for-vertex equal, {elapsed:.1f}s (< 120s)")
    assert ok


DUALITY = {"kind": "duality", "k": 2, "box_radius": 30, "M": 10, "delta": 0.1, "seed": 6}


@pytest.fixture(scope="module")
def duality_report():
    start = time.perf_counter()
    rep = run_experiment(make_config(DUALITY, replicas=500))
    return rep, time.perf_counter() - start


@pytest.fixture(scope="module")
def coexistence_report():
    cfg = make_config({"kind": "coexistence", "k": 3, "box_radius": 20, "source_radius": 8, "replicas": 300, "seed": 5})
    return run_experiment(cfg)


def test_ac5_inclusion_witness(emit, duality_report, coexistence_report):
    # a failed extraction raises ReplicaAssertionError, so completing is the check;
    # the counts below confirm every proxy-positive replica produced witnesses
    lines = []
    ok = True
    for name, rep in (("duality k=2", duality_report[0]), ("competition k=3", coexistence_report)):
        agg = rep.aggregates
        held = agg["boundary_coexist"]["successes"]
        extracted = agg["witness_extracted"]["successes"]
        failures = agg["witness_failure"]["successes"]
        ok &= held == extracted and failures == 0 and rep.completed == rep.configured
        lines.append(f"{name}: proxy held {held}/{rep.completed}, witnesses {extracted}, failures {failures}")
    emit("AC5", ok, "; ".join(lines))
    assert ok


def test_ac6_coexistence_positivity(emit, duality_report):
    rep, elapsed = duality_report
    pts = rep.extras["placement"]["points"]
    sep = min(math.dist(a, b) for a, b in itertools.combinations(pts, 2))
    agg = rep.aggregates["boundary_coexist"]
    lo, hi = agg["wilson95"]
    assert (lo, hi) == pytest.approx(wilson_interval(agg["successes"], agg["n"]))
    sides = rep.extras["sides"]
    ok = rep.completed == 500 and sep >= 20 and lo > 0 and elapsed < 600
    emit(
        "AC6",
        ok,
        f"61x61 box, sources {pts} (separation {sep:.1f}), boundary coexistence {agg['successes']}/{agg['n']} "
        f"= {agg['proportion']:.3f}, Wilson95 [{lo:.3f}, {hi:.3f}], {elapsed:.1f}s (< 600s); "
        f"estimated sides {sides['count']} >= k: {sides['at_least_k']}, target frequency {rep.extras['target_frequency']}",
    )
    assert ok


@pytest.mark.filterwarnings("ignore:passage map")
def test_ac7_shape(emit):
    start = time.perf_counter()
    oracle_ok = True
    for c in (1.0, 2.0):
        shape = estimate_shape(WeightSpec.constant(c), 32, 40, 2, seed=0)
        t = lattice_targets(direction_grid(32), 40).astype(float)
        expected = c * np.abs(t).sum(axis=1) / np.linalg.norm(t, axis=1)
        oracle_ok &= bool(np.array_equal(shape.mu, expected))
        oracle_ok &= np.all(shape.stderr == 0.0)
        oracle_ok &= len(shape.hull) == 4 and count_sides(shape, 0.1).count == 4
        verts = sorted(map(tuple, np.round(shape.hull * c, 12)))
        oracle_ok &= verts == sorted([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)])
    shape = estimate_shape(EXP, 32, 100, 50, seed=7)
    elapsed = time.perf_counter() - start
    defect = shape.symmetry_defect_se
    ok = oracle_ok and defect < 3 and not shape.partial and elapsed < 900
    emit(
        "AC7",
        ok,
        f"constant oracle exact={oracle_ok}; exponential 32 dirs n=100 50 replicas: symmetry defect "
        f"{defect:.2f} pooled stderr (< 3), relative {shape.symmetry_defect:.4f}, {elapsed:.1f}s (< 900s)",
    )
    assert ok


DETERMINISM = {
    "env": {"box_radius": 20},
    "metric-oracle": {"box_radius": 8},
    "shape": {"directions": 16, "n": 30},
    "busemann-linearity": {"box_radius": 30, "M": 10},
    "coexistence": {"box_radius": 20, "k": 3},
    "duality": {"box_radius": 30, "M": 10},
    "ends": {"box_radius": 40, "r": 8, "R": 40},
}


def test_ac8_determinism(emit):
    assert set(DETERMINISM) == set(KINDS)
    same = {}
    for kind, extra in DETERMINISM.items():
        cfg = make_config({"kind": kind, **extra, "replicas": 12, "seed": 8})
        a = run_experiment(cfg, workers=1).aggregate_bytes()
        b = run_experiment(cfg, workers=4).aggregate_bytes()
        same[kind] = a == b
    ok = all(same.values())
    emit("AC8", ok, "workers 1 vs 4 byte-identical: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok


def test_ac9_ends_recorded(emit):
    cfg = make_config({"kind": "ends", "box_radius": 100, "r": 20, "R": 100, "replicas": 200, "seed": 9})
    rep = run_experiment(cfg)
    comp = rep.extras["comparison"]
    emit(
        "AC9",
        "RECORDED",
        f"(r, R) = (20, 100), 200 replicas: distribution {rep.extras['count_distribution']}, "
        f"median {rep.extras['median_count']}, fraction >= 4 = {comp['observed']:.3f} "
        f"(reference value {comp['literature_value']}; not asserted)",
    )
    assert rep.completed == 200
