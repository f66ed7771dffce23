"""Relevance scoring of interest points from per-characteristic match-probability tables."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .scalespace import InterestPoint

CHARACTERISTICS = ("sigma", "p", "d", "rho", "p_ss")
FORMAT_HEADER = "relevance v1"


@dataclass(frozen=True)
class RelevanceTable:
    edges: np.ndarray  # nbins + 1 strictly increasing
    values: np.ndarray  # nbins, each in [0, 1]

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if edges.ndim != 1 or values.ndim != 1 or len(edges) != len(values) + 1:
            raise ValueError("a table needs len(values) + 1 edges")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any((values < 0) | (values > 1)) or not np.all(np.isfinite(values)):
            raise ValueError("table values must lie in [0, 1]")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    def bin_index(self, v):
        idx = np.searchsorted(self.edges, v, side="right") - 1
        return np.clip(idx, 0, len(self.values) - 1)

    def lookup(self, v):
        return self.values[self.bin_index(v)]


@dataclass(frozen=True)
class RelevanceModel:
    tables: tuple[RelevanceTable, ...]

    def __post_init__(self):
        if len(self.tables) != len(CHARACTERISTICS):
            raise ValueError(f"expected {len(CHARACTERISTICS)} tables")

    @classmethod
    def uniform(cls, value: float = 1.0) -> "RelevanceModel":
        t = RelevanceTable(np.array([0.0, 1.0]), np.array([value]))
        return cls(tuple(t for _ in CHARACTERISTICS))

    def to_text(self) -> str:
        lines = [FORMAT_HEADER]
        for name, t in zip(CHARACTERISTICS, self.tables):
            e = " ".join(repr(float(x)) for x in t.edges)
            v = " ".join(repr(float(x)) for x in t.values)
            lines.append(f"{name} bins: {e} ; values: {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RelevanceModel":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != FORMAT_HEADER:
            raise ValueError("missing relevance table header")
        found = {}
        for ln in lines[1:]:
            name, _, rest = ln.partition(" bins:")
            bins, _, values = rest.partition("; values:")
            found[name.strip()] = RelevanceTable(
                np.array([float(x) for x in bins.split()]),
                np.array([float(x) for x in values.split()]),
            )
        missing = [c for c in CHARACTERISTICS if c not in found]
        if missing:
            raise ValueError(f"relevance tables missing: {missing}")
        return cls(tuple(found[c] for c in CHARACTERISTICS))


def feature_stats(pt: InterestPoint) -> tuple[float, ...]:
    return (pt.sigma, pt.p, pt.d, pt.rho, pt.p_ss)


def relevance(stats, model: RelevanceModel) -> float:
    """Product of the five table lookups for (sigma, p, d, rho, p_ss)."""
    if isinstance(stats, InterestPoint):
        stats = feature_stats(stats)
    score = 1.0
    for v, t in zip(stats, model.tables):
        score *= float(t.lookup(v))
    return score


def relevance_scores(points, model: RelevanceModel) -> np.ndarray:
    if not points:
        return np.zeros(0)
    stats = np.array([feature_stats(q) for q in points])
    score = np.ones(len(points))
    for j, t in enumerate(model.tables):
        score = score * t.lookup(stats[:, j])
    return score


def select_top(points: list[InterestPoint], model: RelevanceModel, n: int = 300) -> list[InterestPoint]:
    """Highest-relevance points; ties by |p| descending, then (y, x) ascending."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = relevance_scores(points, model)
    order = sorted(
        range(len(points)),
        key=lambda i: (-scores[i], -abs(points[i].p), points[i].y, points[i].x),
    )
    return [points[i] for i in order[:n]]


def train_relevance_tables(
    stats,
    matched,
    nbins: int = 16,
    min_count: int = 10,
) -> RelevanceModel:
    """Estimate P(match | characteristic in bin) per characteristic.

    ``stats`` is an (n, 5) array (or list of InterestPoint), ``matched`` a
    boolean vector. Bins with fewer than ``min_count`` samples take the
    global match rate.
    """
    if len(stats) == 0:
        raise ValueError("empty training corpus")
    if isinstance(stats[0], InterestPoint):
        stats = [feature_stats(q) for q in stats]
    X = np.asarray(stats, dtype=np.float64)
    c = np.asarray(matched, dtype=bool)
    if X.shape != (len(c), len(CHARACTERISTICS)):
        raise ValueError(f"stats shape {X.shape} does not match {len(c)} labels")
    global_rate = float(c.mean())
    tables = []
    for j in range(X.shape[1]):
        col = X[:, j]
        lo, hi = float(col.min()), float(col.max())
        if not hi > lo:
            hi = lo + max(1.0, abs(lo)) * 1e-6
        edges = np.linspace(lo, hi, nbins + 1)
        table = RelevanceTable(edges, np.zeros(nbins))
        idx = table.bin_index(col)
        counts = np.bincount(idx, minlength=nbins)
        hits = np.bincount(idx, weights=c.astype(np.float64), minlength=nbins)
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(counts >= min_count, hits / np.maximum(counts, 1), global_rate)
        tables.append(RelevanceTable(edges, values))
    if math.isclose(global_rate, 0.0):
        warnings.warn("no matched features in relevance training data", stacklevel=2)
    return RelevanceModel(tuple(tables))
