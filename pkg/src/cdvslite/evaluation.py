"""Pair matching, retrieval, and the mAP / ROC metrics with CSV export."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .compress import distance_matrix
from .parallel import par_for_items
from .pipeline import EncodedImage
from .scfv import ModelMismatch, scfv_similarity

RATIO_TEST = 0.85
RERANK_DEPTH = 50
# keeps the global tie-break strictly below one local match
_GLOBAL_TIEBREAK = 0.999


@dataclass(frozen=True)
class MatchResult:
    global_similarity: float
    local_match_count: int
    n_features_a: int
    n_features_b: int


@dataclass(frozen=True)
class RankedList:
    query_id: str
    items: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.items]


def _check_compatible(a: EncodedImage, b: EncodedImage) -> None:
    if a.model_id != b.model_id:
        raise ModelMismatch("descriptors were encoded with different model bundles")
    if a.mode != b.mode:
        raise ModelMismatch(f"mode {a.mode} cannot be matched against mode {b.mode}")


def _symbols(enc: EncodedImage) -> np.ndarray:
    if not enc.codes:
        return np.zeros((0, 0), dtype=np.int8)
    return np.stack([c.symbols for c in enc.codes])


def _nearest(D: np.ndarray, loc_a: np.ndarray, loc_b: np.ndarray) -> np.ndarray:
    """Row-wise nearest column; equal distances go to the closer keypoint, then the lower index."""
    best = D.min(axis=1, keepdims=True)
    tied = D == best
    geo = np.hypot(loc_a[:, None, 0] - loc_b[None, :, 0], loc_a[:, None, 1] - loc_b[None, :, 1])
    geo = np.where(tied, geo, np.inf)
    return np.argmin(geo, axis=1)


def local_matches(a: EncodedImage, b: EncodedImage, ratio: float = RATIO_TEST) -> list[tuple[int, int]]:
    """Mutual nearest neighbours under ternary distance that pass the ratio test.

    An exact code match (distance 0) always passes the ratio test.
    """
    A, B = _symbols(a), _symbols(b)
    if len(A) == 0 or len(B) == 0:
        return []
    D = distance_matrix(A, B)
    la = np.array([(c.x_q, c.y_q) for c in a.codes], dtype=np.float64)
    lb = np.array([(c.x_q, c.y_q) for c in b.codes], dtype=np.float64)
    ab = _nearest(D, la, lb)
    ba = _nearest(D.T, lb, la)
    out = []
    for i, j in enumerate(ab):
        if ba[j] != i:
            continue
        best = D[i, j]
        if best == 0:
            out.append((i, int(j)))
            continue
        if D.shape[1] < 2:
            continue
        second = np.partition(D[i], 1)[1]
        if best < ratio * second:
            out.append((i, int(j)))
    return out


def match_pair(a: EncodedImage, b: EncodedImage, ratio: float = RATIO_TEST) -> MatchResult:
    _check_compatible(a, b)
    g = scfv_similarity(a.scfv, b.scfv)
    return MatchResult(g, len(local_matches(a, b, ratio)), len(a.codes), len(b.codes))


def _ranked(query_id: str, scored: list[tuple[str, float]]) -> RankedList:
    scored.sort(key=lambda t: (-t[1], t[0]))
    return RankedList(query_id, tuple(scored))


def retrieve(
    query: EncodedImage,
    index: Mapping[str, EncodedImage],
    top_r: int | None = None,
    query_id: str = "query",
    depth: int = RERANK_DEPTH,
    ratio: float = RATIO_TEST,
) -> RankedList:
    """Rank by global similarity, then re-rank the top ``depth`` by local match count.

    Re-ranked candidates score ``local + 0.999 * (g + 1) / 2`` and the rest ``g - 2``,
    so candidates always stay above the remainder.
    """
    if not index:
        raise ValueError("retrieval index is empty")
    for enc in index.values():
        _check_compatible(query, enc)
    glob = [(k, scfv_similarity(query.scfv, enc.scfv)) for k, enc in index.items()]
    glob.sort(key=lambda t: (-t[1], t[0]))
    scored = []
    for rank, (k, g) in enumerate(glob):
        if rank < depth:
            n = len(local_matches(query, index[k], ratio))
            scored.append((k, n + _GLOBAL_TIEBREAK * (g + 1.0) / 2.0))
        else:
            scored.append((k, g - 2.0))
    ranked = _ranked(query_id, scored)
    if top_r is not None:
        ranked = RankedList(ranked.query_id, ranked.items[:top_r])
    return ranked


def retrieve_all(
    queries: Mapping[str, EncodedImage],
    index: Mapping[str, EncodedImage],
    top_r: int | None = None,
    depth: int = RERANK_DEPTH,
    workers: int | None = None,
) -> list[RankedList]:
    keys = sorted(queries)
    return par_for_items(keys, lambda q: retrieve(queries[q], index, top_r, q, depth), workers)


def average_precision(ranked_ids: Sequence[str], relevant: set) -> float:
    """Mean of precision@k over the ranks k holding relevant items; unretrieved ones count 0."""
    hits = 0
    total = 0.0
    for k, item in enumerate(ranked_ids, start=1):
        if item in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)


def compute_map(ranked: Sequence[RankedList], relevance: Mapping[str, set]) -> float:
    aps = []
    for r in ranked:
        rel = set(relevance.get(r.query_id, ()))
        if not rel:
            warnings.warn(f"query {r.query_id!r} has no relevant items; excluded from mAP", stacklevel=2)
            continue
        aps.append(average_precision(r.ids, rel))
    if not aps:
        raise ValueError("no query has relevant items")
    return float(np.mean(aps))


def top_match_accuracy(ranked: Sequence[RankedList], relevance: Mapping[str, set]) -> float:
    """Fraction of queries whose rank-1 item is relevant."""
    hits = [bool(r.items) and r.items[0][0] in relevance.get(r.query_id, ()) for r in ranked]
    return float(np.mean(hits)) if hits else 0.0


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def tpr_at_fpr(self, target: float = 0.01) -> float:
        return tpr_at_fpr(self, target)


def compute_roc(scores, labels, thresholds=None) -> RocCurve:
    """Operating points for "positive when score >= threshold".

    The default sweep is +inf followed by the distinct scores in descending
    order, so the curve starts at (0, 0) and ends at (1, 1).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    y = y.astype(bool)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise ValueError("ROC needs at least one positive and one negative pair")
    if thresholds is None:
        thresholds = np.concatenate([[np.inf], np.unique(s)[::-1]])
    else:
        thresholds = np.sort(np.asarray(thresholds, dtype=np.float64))[::-1]
    pos = s[y]
    neg = s[~y]
    tp = np.array([(pos >= t).sum() for t in thresholds])
    fp = np.array([(neg >= t).sum() for t in thresholds])
    return RocCurve(thresholds, fp / N, tp / P)


def tpr_at_fpr(curve: RocCurve, target: float = 0.01) -> float:
    """TPR at a given FPR, linearly interpolated between the bracketing operating points.

    Where several points share one FPR the highest TPR among them is used.
    """
    fpr, tpr = curve.fpr, curve.tpr
    xs = np.unique(fpr)
    ys = np.array([tpr[fpr == x].max() for x in xs])
    if target <= xs[0]:
        return float(ys[0])
    if target >= xs[-1]:
        return float(ys[-1])
    return float(np.interp(target, xs, ys))


# ---- CSV I/O ----


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def export_csv(path, header: Sequence[str], rows) -> None:
    """Write a header row and data rows; floats use their shortest round-trip form."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} has no header row")
    return rows[0], rows[1:]


def read_table(path) -> dict[str, list]:
    """Columns of a CSV file; values that parse as numbers become floats."""
    header, rows = read_csv(path)

    def conv(v):
        try:
            return float(v)
        except ValueError:
            return v

    return {h: [conv(r[i]) for r in rows] for i, h in enumerate(header)}


def export_roc(path, curve: RocCurve) -> None:
    export_csv(path, ("threshold", "fpr", "tpr"), zip(curve.thresholds, curve.fpr, curve.tpr))


def export_rankings(path, ranked: Sequence[RankedList]) -> None:
    rows = [(r.query_id, k, item, score) for r in ranked for k, (item, score) in enumerate(r.items, start=1)]
    export_csv(path, ("query_id", "rank", "item_id", "score"), rows)


def export_map_table(path, entries: Sequence[tuple[str, float, float]]) -> None:
    """Rows of (mode, mAP, top-match accuracy)."""
    export_csv(path, ("mode", "map", "top_match"), entries)


def read_ground_truth(path) -> dict[str, set[str]]:
    """``query_id,relevant_id`` rows; a header row is skipped if present."""
    header, rows = read_csv(path)
    if header != ["query_id", "relevant_id"]:
        rows = [header] + rows
    gt: dict[str, set[str]] = {}
    for r in rows:
        if len(r) != 2:
            raise ValueError(f"ground-truth row needs 2 fields: {r}")
        gt.setdefault(r[0], set()).add(r[1])
    return gt


def read_pairs(path) -> list[tuple[str, str, int]]:
    """``id_a,id_b,label`` rows; a header row is skipped if present."""
    header, rows = read_csv(path)
    if header != ["id_a", "id_b", "label"]:
        rows = [header] + rows
    out = []
    for r in rows:
        if len(r) != 3 or r[2] not in ("0", "1"):
            raise ValueError(f"pair row needs id_a,id_b,label with label 0/1: {r}")
        out.append((r[0], r[1], int(r[2])))
    return out

