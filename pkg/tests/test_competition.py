import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpplab.competition import (
    clock_environment,
    coexistence_proxy,
    export_partition,
    export_trace,
    extract_disjoint_geodesics,
    fpp_voronoi,
    simulate_richardson,
)
from fpplab.errors import ConfigError, DomainError
from fpplab.lattice import BoxRegion, WeightSpec, derive_seed, make_environment
from fpplab.metric import brute_force_passage_times
from fpplab.stats import Summary

EXP = WeightSpec.exponential(1.0)
ORACLE = BoxRegion((0, 0), (3, 3))


def test_single_source_owns_everything():
    env = make_environment(BoxRegion.centered(6), EXP, 1)
    p = fpp_voronoi(env, [(2, -1)])
    assert np.all(p.owner == 0)
    assert p.cell_sizes == (env.region.n_vertices,)
    assert coexistence_proxy(p, "boundary")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 5))
def test_partition_sizes_and_connectivity(seed, k):
    region = BoxRegion.centered(8)
    rng = np.random.default_rng(seed)
    sources = [region.vertex(int(i)) for i in rng.choice(region.n_vertices, k, replace=False)]
    p = fpp_voronoi(make_environment(region, EXP, seed), sources)
    assert sum(p.cell_sizes) == region.n_vertices
    assert p.ties == 0
    for i, x in enumerate(sources):
        assert p.owner_of(x) == i


@pytest.mark.parametrize("seed", range(25))
def test_owners_match_brute_force(seed):
    env = make_environment(ORACLE, EXP, seed)
    rng = np.random.default_rng(seed)
    verts = list(ORACLE.vertices())
    sources = [verts[i] for i in rng.choice(16, 2, replace=False)]
    p = fpp_voronoi(env, sources)
    bf = [brute_force_passage_times(env, x) for x in sources]
    for v in verts:
        times = [b[v][0] for b in bf]
        assert p.owner_of(v) == int(np.argmin(times))


def test_bad_sources():
    env = make_environment(BoxRegion.centered(3), EXP, 0)
    with pytest.raises(ConfigError):
        fpp_voronoi(env, [(0, 0), (0, 0)])
    with pytest.raises(DomainError):
        fpp_voronoi(env, [(0, 9)])
    with pytest.raises(ConfigError):
        fpp_voronoi(env, [])


@pytest.mark.parametrize("seed", range(10))
def test_richardson_rate_one_equals_voronoi(seed):
    region = BoxRegion.centered(12)
    sources = [(-4, 0), (4, 1), (0, -6)]
    p_rich, trace = simulate_richardson(region, sources, [1.0, 1.0, 1.0], seed)
    p_vor = fpp_voronoi(clock_environment(region, seed), sources)
    assert np.array_equal(p_rich.owner, p_vor.owner)
    assert len(trace) == region.n_vertices - len(sources)
    assert np.all(np.diff(trace.times) >= 0)


def test_richardson_single_type_covers_region():
    region = BoxRegion.centered(7)
    p, trace = simulate_richardson(region, [(1, 1)], [3.5], 2)
    assert np.all(p.owner == 0)
    assert sorted(trace.vertices.tolist() + [region.index((1, 1))]) == list(range(region.n_vertices))


def test_richardson_rate_scaling():
    # a single type at rate lam colours vertices at times T/lam
    region = BoxRegion.centered(6)
    _, t1 = simulate_richardson(region, [(0, 0)], [1.0], 5)
    _, t4 = simulate_richardson(region, [(0, 0)], [4.0], 5)
    assert np.array_equal(t1.vertices, t4.vertices)
    assert np.allclose(t1.times / 4.0, t4.times, rtol=1e-12)


def test_richardson_rejects_bad_rates():
    region = BoxRegion.centered(3)
    with pytest.raises(ConfigError):
        simulate_richardson(region, [(0, 0), (1, 0)], [1.0], 0)
    with pytest.raises(ConfigError):
        simulate_richardson(region, [(0, 0)], [0.0], 0)


@pytest.mark.slow
def test_fast_type_dominates():
    region = BoxRegion.centered(25)
    shares = Summary()
    for i in range(100):
        p, _ = simulate_richardson(region, [(0, 0), (1, 0)], [1.0, 1000.0], derive_seed(3, i))
        shares = shares.push(p.shares()[1])
    assert shares.mean > 0.9
    assert shares.mean - 1.96 * shares.stderr > 0.9


def test_proxy_degenerate_cases():
    line = BoxRegion((0, 0), (4, 0))
    env = make_environment(line, EXP, 0)
    every = list(line.vertices())
    assert coexistence_proxy(fpp_voronoi(env, every), "boundary")
    square = BoxRegion((0, 0), (2, 2))
    env = make_environment(square, EXP, 0)
    assert not coexistence_proxy(fpp_voronoi(env, list(square.vertices())), "boundary")
    p = fpp_voronoi(env, [(1, 1)])
    assert coexistence_proxy(p, "boundary")
    assert coexistence_proxy(p, "volume", 1.0)


def test_proxy_volume_mode():
    env = make_environment(BoxRegion.centered(10), EXP, 4)
    p = fpp_voronoi(env, [(-5, 0), (5, 0)])
    smallest = min(p.cell_sizes) / env.region.n_vertices
    assert coexistence_proxy(p, "volume", smallest)
    assert not coexistence_proxy(p, "volume", smallest + 1e-9)
    with pytest.raises(ConfigError):
        coexistence_proxy(p, "volume", None)
    with pytest.raises(ConfigError):
        coexistence_proxy(p, "volume", 1.5)
    with pytest.raises(ConfigError):
        coexistence_proxy(p, "area")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32))
def test_proxy_label_exchangeable(seed):
    env = make_environment(BoxRegion.centered(10), EXP, seed)
    a = fpp_voronoi(env, [(-4, 0), (4, 0)])
    b = fpp_voronoi(env, [(4, 0), (-4, 0)])
    assert coexistence_proxy(a) == coexistence_proxy(b)
    assert np.array_equal(a.owner, 1 - b.owner)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_witnesses_disjoint_and_in_cells(seed):
    region = BoxRegion.centered(15)
    env = make_environment(region, EXP, seed)
    p = fpp_voronoi(env, [(-6, -6), (6, 0), (-3, 8)])
    if not coexistence_proxy(p):
        with pytest.raises(ConfigError):
            extract_disjoint_geodesics(p, env)
        return
    paths = extract_disjoint_geodesics(p, env)
    assert len(paths) == 3
    seen = set()
    for i, path in enumerate(paths):
        assert path.source == p.sources[i]
        assert region.on_boundary(path.target)
        assert all(p.owner_of(v) == i for v in path.vertices)
        assert not seen & set(path.vertices)
        seen |= set(path.vertices)


def test_witness_single_source():
    env = make_environment(BoxRegion.centered(5), EXP, 0)
    p = fpp_voronoi(env, [(0, 0)])
    (path,) = extract_disjoint_geodesics(p, env)
    assert path.source == (0, 0) and env.region.on_boundary(path.target)


def test_witness_oracle_box():
    checked = 0
    for seed in range(30):
        env = make_environment(ORACLE, EXP, seed)
        p = fpp_voronoi(env, [(1, 1), (2, 2)])
        if not coexistence_proxy(p):
            continue
        for i, path in enumerate(extract_disjoint_geodesics(p, env)):
            t, bf = brute_force_passage_times(env, p.sources[i])[path.target]
            assert path.vertices == bf.vertices and path.weight == t
            assert all(p.owner_of(v) == i for v in path.vertices)
        checked += 1
    assert checked > 0


def test_exports(tmp_path):
    region = BoxRegion((0, 0), (2, 1))
    p, trace = simulate_richardson(region, [(0, 0), (2, 1)], [1.0, 2.0], 0)
    rows = export_partition(p, tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "v0,v1,owner" and len(rows) == 7
    rows = export_trace(trace, region, tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "time,v0,v1,type" and len(rows) == 5
    assert all(math.isfinite(float(r.split(",")[0])) for r in rows[1:])
