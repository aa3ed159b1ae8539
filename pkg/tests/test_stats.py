import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from statsmodels.stats.proportion import proportion_confint

from fpplab.errors import ConfigError
from fpplab.stats import Proportion, Summary, aggregate, merge_accumulators, summarize, wilson_interval


def test_wilson_all_true_ten():
    lo, hi = wilson_interval(10, 10)
    assert hi == pytest.approx(1.0, abs=1e-12)
    assert lo == pytest.approx(0.7225, abs=5e-4)
    assert aggregate([{"ok": True}] * 10)["ok"]["proportion"] == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 500), st.data())
def test_wilson_matches_statsmodels(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    ref = proportion_confint(k, n, alpha=0.05, method="wilson")
    assert lo == pytest.approx(ref[0], abs=1e-9)
    assert hi == pytest.approx(ref[1], abs=1e-9)


def test_single_record():
    agg = aggregate([{"x": 2.5, "ok": False}])
    assert agg["x"]["mean"] == 2.5
    assert agg["x"]["stderr"] is None and agg["x"]["stderr_defined"] is False
    assert agg["ok"]["successes"] == 0


def test_summary_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(3, 2, size=257)
    s = Summary.of(x)
    assert s.mean == pytest.approx(x.mean(), rel=1e-12)
    assert s.variance == pytest.approx(x.var(ddof=1), rel=1e-10)
    assert s.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(x.size), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=0, max_size=40), st.integers(0, 40), st.integers(0, 2**16))
def test_merge_commutative_on_splits(values, cut, seed):
    recs = [{"x": v, "b": v > 0} for v in values]
    random.Random(seed).shuffle(recs)
    cut = min(cut, len(recs))
    a, b = summarize(recs[:cut]), summarize(recs[cut:])
    ab = {k: v.to_dict() for k, v in merge_accumulators(a, b).items()}
    ba = {k: v.to_dict() for k, v in merge_accumulators(b, a).items()}
    assert ab == ba
    if recs:
        whole = aggregate(recs)
        assert ab["x"]["n"] == whole["x"]["n"]
        assert ab["x"]["mean"] == pytest.approx(whole["x"]["mean"], abs=1e-9)
        assert ab["b"] == whole["b"]


def test_mixed_schemas_rejected():
    with pytest.raises(ConfigError):
        aggregate([{"x": 1.0}, {"y": 1.0}])
    with pytest.raises(ConfigError):
        aggregate([{"x": 1.0}, {"x": True}])
    with pytest.raises(ConfigError):
        merge_accumulators(summarize([{"x": 1.0}]), summarize([{"x": True}]))


def test_non_numeric_fields_ignored_and_empty():
    assert aggregate([]) == {}
    agg = aggregate([{"x": 1, "tag": "a", "v": [1, 2]}, {"x": 3, "tag": "b", "v": []}])
    assert set(agg) == {"x"}
    assert Proportion().to_dict()["proportion"] is None
