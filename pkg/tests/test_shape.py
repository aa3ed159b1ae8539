import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpplab.errors import ConfigError, DomainError
from fpplab.lattice import WeightSpec
from fpplab.shape import (
    convex_hull_2d,
    convexity_defect,
    count_sides,
    direction_grid,
    estimate_shape,
    estimate_time_constant,
    export_hull,
    export_shape,
    hull_radius,
    lattice_symmetries,
    lattice_targets,
    supporting_functional,
)

L1_BALL = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def disc(m):
    a = 2 * math.pi * np.arange(m) / m
    return np.stack([np.cos(a), np.sin(a)], axis=1)


def test_symmetry_group_sizes():
    assert len(lattice_symmetries(2)) == 8
    assert len(lattice_symmetries(3)) == 48
    for m in lattice_symmetries(2):
        assert abs(round(np.linalg.det(m))) == 1


def test_targets_round_and_reject_origin():
    t = lattice_targets(direction_grid(8), 10)
    assert t[0].tolist() == [10, 0] and t[2].tolist() == [0, 10] and t[1].tolist() == [7, 7]
    with pytest.raises(ConfigError):
        lattice_targets(direction_grid(8), 0)
    with pytest.raises(ConfigError):
        direction_grid(2)


@pytest.mark.filterwarnings("ignore:passage map")
@pytest.mark.parametrize("c", [1.0, 2.5])
def test_constant_time_constant_is_l1(c):
    spec = WeightSpec.constant(c)
    for z in [(1, 0), (2, 1), (-1, 3)]:
        est = estimate_time_constant(spec, z, [5, 10, 20], 3, seed=0)
        assert est.mu == c * (abs(z[0]) + abs(z[1]))
        assert est.stderr == 0.0
        assert est.trend == (est.mu,) * 3
    a = estimate_time_constant(spec, (2, 1), [10], 1, seed=0).mu
    b = estimate_time_constant(spec, (4, 2), [10], 1, seed=0).mu
    assert b / 2 == a


def test_time_constant_config_errors():
    spec = WeightSpec.exponential(1.0)
    with pytest.raises(ConfigError):
        estimate_time_constant(spec, (1, 0), [10, 5], 2, 0)
    with pytest.raises(ConfigError):
        estimate_time_constant(spec, (0, 0), [10], 2, 0)
    with pytest.raises(ConfigError):
        estimate_time_constant(spec, (1, 0), [10], 0, 0)


@pytest.mark.slow
def test_time_constant_self_consistent_across_seeds():
    spec = WeightSpec.exponential(1.0)
    a = estimate_time_constant(spec, (1, 0), [50, 100, 200], 100, seed=11)
    b = estimate_time_constant(spec, (1, 0), [50, 100, 200], 100, seed=12)
    assert abs(a.mu - b.mu) < 3 * math.hypot(a.stderr, b.stderr)
    assert a.accepted + a.discarded == 100
    # passage times per unit length decrease towards mu (subadditivity)
    assert a.trend[0] > a.mu


@pytest.mark.filterwarnings("ignore:passage map")
def test_constant_shape_is_l1_ball():
    shape = estimate_shape(WeightSpec.constant(1.0), 16, 12, 2, seed=0)
    assert not shape.partial
    assert shape.symmetry_defect == 0.0
    assert len(shape.hull) == 4
    assert np.allclose(sorted(map(tuple, shape.hull)), sorted(map(tuple, L1_BALL)), atol=1e-12, rtol=0)
    for tol in (0.0, 0.1, 0.5, math.pi / 4 - 1e-6):
        assert count_sides(shape, tol).count == 4
    assert convexity_defect(shape) == 0.0


def test_exponential_shape_small_scale():
    shape = estimate_shape(WeightSpec.exponential(1.0), 16, 30, 20, seed=4)
    assert shape.counts.min() > 0
    assert shape.symmetry_defect_se < 3
    assert convexity_defect(shape) < 3
    # mu is about 0.4 for rate-1 exponentials, so radii 1/mu sit near 2.3
    r = np.linalg.norm(shape.points, axis=1)
    assert np.all((r > 1.0) & (r < 4.0))


def test_count_sides_disc():
    pts = disc(64)
    step = 2 * math.pi / 64
    assert count_sides(pts, 0.5 * step).count == 64
    counts = [count_sides(pts, t).count for t in np.linspace(0, math.pi / 4 - 1e-6, 40)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] < 64
    with pytest.raises(ConfigError):
        count_sides(pts, math.pi / 4)
    with pytest.raises(DomainError):
        count_sides(pts[:2], 0.1)


def test_supporting_functional_l1():
    rep = supporting_functional(L1_BALL, np.array([1.0, 0.0]))
    assert rep.functional.gradient == (1.0, 0.0)
    assert rep.unique_touch and rep.touch_points == ((1.0, 0.0),)
    diag = supporting_functional(L1_BALL, np.array([1.0, 1.0]) / math.sqrt(2))
    assert np.allclose(diag.functional.gradient, (1.0, 1.0))
    assert not diag.unique_touch
    assert len(diag.touch_points) == 2
    with pytest.raises(ConfigError):
        supporting_functional(L1_BALL, np.array([1.0, 1.0]))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.integers(0, 2**32))
def test_supporting_functional_verifier(angle, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 2)) + 0.0
    pts = np.vstack([pts, disc(8) * 0.5])  # keep the origin inside
    hull = convex_hull_2d(pts)
    rep = supporting_functional(hull, np.array([math.cos(angle), math.sin(angle)]))
    vals = hull @ np.asarray(rep.functional.gradient)
    assert vals.max() <= 1 + 1e-12
    assert abs(vals.max() - 1) <= 1e-12
    assert rep.touch_points


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=40))
def test_hull_contains_all_points(pts):
    pts = np.asarray(pts)
    hull = convex_hull_2d(pts)
    if len(hull) < 3:
        return
    rows = {tuple(p) for p in pts}
    assert all(tuple(h) in rows for h in hull)
    k = len(hull)
    for i in range(k):
        a, b = hull[i], hull[(i + 1) % k]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        assert np.all(cross >= -1e-9 * (1 + np.abs(pts).max()) ** 2)


def test_hull_radius_square():
    assert hull_radius(L1_BALL, np.array([1.0, 0.0])) == pytest.approx(1.0)
    u = np.array([1.0, 1.0]) / math.sqrt(2)
    assert hull_radius(L1_BALL, u) == pytest.approx(1 / math.sqrt(2))


def test_exports(tmp_path):
    shape = estimate_shape(WeightSpec.exponential(1.0), 8, 10, 3, seed=1)
    rows = export_shape(shape, tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "angle,mu,stderr,n,replicas" and len(rows) == 9
    rows = export_hull(shape, tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "x,y" and len(rows) == len(shape.hull) + 1
