"""Order-independent summaries: running moments, proportions with Wilson intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Real
from typing import Iterable, Mapping

from .errors import ConfigError

Z95 = 1.959963984540054


@dataclass(frozen=True)
class Summary:
    """(count, mean, M2) with Chan et al. pairwise merge."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values: Iterable[float]) -> "Summary":
        s = cls()
        for v in values:
            s = s.push(v)
        return s

    def push(self, x: float) -> "Summary":
        return self.merge(Summary(1, float(x), 0.0))

    def merge(self, other: "Summary") -> "Summary":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = (self.n * self.mean + other.n * other.mean) / n
        m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        return Summary(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else math.nan

    def to_dict(self) -> dict:
        se = self.stderr
        return {
            "n": self.n,
            "mean": self.mean if self.n else None,
            "stderr": None if math.isnan(se) else se,
            "stderr_defined": not math.isnan(se),
        }


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass(frozen=True)
class Proportion:
    successes: int = 0
    n: int = 0

    def merge(self, other: "Proportion") -> "Proportion":
        return Proportion(self.successes + other.successes, self.n + other.n)

    def to_dict(self) -> dict:
        lo, hi = wilson_interval(self.successes, self.n)
        return {
            "n": self.n,
            "successes": self.successes,
            "proportion": self.successes / self.n if self.n else None,
            "wilson95": [lo, hi],
        }


def _kind(value):
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, Real):
        return "number"
    return None


def summarize(records: Iterable[Mapping]) -> dict:
    """Per-field accumulators for a homogeneous list of flat records.

    Booleans become proportions, numbers running moments; other fields are
    ignored.  Records with differing key sets or field types are rejected.
    """
    acc: dict = {}
    schema = None
    for rec in records:
        kinds = {k: _kind(v) for k, v in rec.items() if _kind(v) is not None}
        if schema is None:
            schema = kinds
        elif kinds != schema:
            raise ConfigError(f"mixed record schemas: {sorted(schema.items())} vs {sorted(kinds.items())}")
        for k, kind in kinds.items():
            v = rec[k]
            if kind == "bool":
                acc[k] = acc.get(k, Proportion()).merge(Proportion(int(v), 1))
            else:
                acc[k] = acc.get(k, Summary()).push(float(v))
    return acc


def merge_accumulators(a: Mapping, b: Mapping) -> dict:
    if a and b and {k: type(v) for k, v in a.items()} != {k: type(v) for k, v in b.items()}:
        raise ConfigError("mixed record schemas")
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k].merge(v) if k in out else v
    return out


def aggregate(records: Iterable[Mapping]) -> dict:
    """Proportions with Wilson intervals and means with standard errors, keyed by field."""
    return {k: v.to_dict() for k, v in sorted(summarize(records).items())}
