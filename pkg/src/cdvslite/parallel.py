"""Deterministic data-parallel execution: image tiles with halos, per-item maps and stage timers.

Every kernel and work function handed to this module must be pure over
immutable inputs. Results are always merged in ascending tile / item index
order, so outputs do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

WORKERS_ENV = "CDVSLITE_WORKERS"
PIPELINE_STAGES = ("detection", "selection", "description", "compression", "aggregation")


class ContractViolation(RuntimeError):
    """A tile kernel produced output that does not match its tile region."""


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
        return max(1, n)
    return max(1, os.cpu_count() or 1)


def _resolve_workers(workers: int | None) -> int:
    return default_workers() if workers is None else max(1, int(workers))


@dataclass(frozen=True)
class Tile:
    index: int
    x0: int
    y0: int
    w: int
    h: int


@dataclass(frozen=True)
class TileGrid:
    """Row-major partition of a ``height x width`` raster into disjoint tiles."""

    height: int
    width: int
    tile_size: int = 32
    halo: int = 0
    tiles: tuple[Tile, ...] = field(default=(), compare=False)

    @classmethod
    def build(cls, height: int, width: int, tile_size: int = 32, halo: int = 0) -> "TileGrid":
        if tile_size < 1:
            raise ValueError("tile_size must be positive")
        if halo < 0:
            raise ValueError("halo must be non-negative")
        tiles = []
        for y0 in range(0, height, tile_size):
            for x0 in range(0, width, tile_size):
                tiles.append(
                    Tile(len(tiles), x0, y0, min(tile_size, width - x0), min(tile_size, height - y0))
                )
        return cls(height, width, tile_size, halo, tuple(tiles))

    def with_halo(self, halo: int) -> "TileGrid":
        return TileGrid.build(self.height, self.width, self.tile_size, halo)

    def coverage(self) -> np.ndarray:
        """Count of tiles covering each pixel; all ones for a valid grid."""
        cov = np.zeros((self.height, self.width), dtype=np.int32)
        for t in self.tiles:
            cov[t.y0 : t.y0 + t.h, t.x0 : t.x0 + t.w] += 1
        return cov


def _run_ordered(fn: Callable[[Any], Any], items: Sequence[Any], workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        # map() yields in submission order and re-raises the lowest-index failure first
        return list(pool.map(fn, items))


def par_for_items(items: Iterable[Any], work: Callable[[Any], Any], workers: int | None = None) -> list:
    """Apply ``work`` to every item; output order equals input order."""
    items = list(items)
    return _run_ordered(work, items, _resolve_workers(workers))


def pad_mirror(data: np.ndarray, halo: int) -> np.ndarray:
    """Mirror-pad the last two axes (edge sample not repeated)."""
    if halo == 0:
        return data
    pad = [(0, 0)] * (data.ndim - 2) + [(halo, halo), (halo, halo)]
    return np.pad(data, pad, mode="reflect")


def tile_windows(data: np.ndarray, grid: TileGrid) -> tuple[np.ndarray, list[tuple[Tile, np.ndarray]]]:
    """Mirror-padded raster and the read-only (tile + halo) window of every tile."""
    padded = pad_mirror(data, grid.halo)
    padded.setflags(write=False)
    hl = grid.halo
    windows = []
    for t in grid.tiles:
        win = padded[..., t.y0 : t.y0 + t.h + 2 * hl, t.x0 : t.x0 + t.w + 2 * hl]
        windows.append((t, win))
    return padded, windows


def tile_apply(
    data: np.ndarray,
    grid: TileGrid,
    kernel: Callable[[np.ndarray, Tile], Any],
    workers: int | None = None,
) -> list:
    """Run ``kernel(window, tile)`` on every tile and return the per-tile results in tile order.

    ``window`` is the tile region extended by ``grid.halo`` pixels on each side,
    taken from the mirror-padded raster, so kernels never see the image border.
    """
    if data.shape[-2:] != (grid.height, grid.width):
        raise ValueError(f"grid {grid.height}x{grid.width} does not match data {data.shape[-2:]}")
    _, windows = tile_windows(data, grid)
    return _run_ordered(lambda tw: kernel(tw[1], tw[0]), windows, _resolve_workers(workers))


def tile_map(
    data: np.ndarray,
    grid: TileGrid,
    kernel: Callable[[np.ndarray, Tile], np.ndarray],
    workers: int | None = None,
) -> np.ndarray:
    """Stitch per-tile kernel outputs into a full raster.

    The kernel must return an array whose trailing two axes equal the tile's
    ``(h, w)``; leading axes are free but must agree across tiles.
    """
    parts = tile_apply(data, grid, kernel, workers)
    out = None
    for t, part in zip(grid.tiles, parts):
        part = np.asarray(part)
        if part.shape[-2:] != (t.h, t.w):
            raise ContractViolation(
                f"tile {t.index}: kernel returned {part.shape[-2:]}, expected {(t.h, t.w)}"
            )
        if out is None:
            out = np.empty(part.shape[:-2] + (grid.height, grid.width), dtype=part.dtype)
        elif part.shape[:-2] != out.shape[:-2]:
            raise ContractViolation(f"tile {t.index}: inconsistent leading shape {part.shape[:-2]}")
        out[..., t.y0 : t.y0 + t.h, t.x0 : t.x0 + t.w] = part
    return out


@dataclass
class StageTimings:
    """Accumulated wall time per stage label."""

    calls: dict[str, int] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, label: str, elapsed: float, calls: int = 1) -> None:
        # stages may be timed from worker threads
        with self._lock:
            self.calls[label] = self.calls.get(label, 0) + calls
            self.seconds[label] = self.seconds.get(label, 0.0) + elapsed

    def merge(self, other: "StageTimings") -> None:
        for label in other.calls:
            self.add(label, other.seconds[label], other.calls[label])

    @contextmanager
    def stage(self, label: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(label, time.perf_counter() - start)

    def total_ms(self, label: str) -> float:
        return self.seconds.get(label, 0.0) * 1000.0

    def labels(self) -> list[str]:
        known = [s for s in PIPELINE_STAGES if s in self.calls]
        return known + sorted(s for s in self.calls if s not in PIPELINE_STAGES)

    def percentages(self, labels: Sequence[str] | None = None) -> dict[str, float]:
        labels = list(labels) if labels is not None else self.labels()
        total = sum(self.seconds.get(s, 0.0) for s in labels)
        if total <= 0.0:
            return {s: 100.0 / len(labels) for s in labels} if labels else {}
        return {s: 100.0 * self.seconds.get(s, 0.0) / total for s in labels}

    def to_csv(self, labels: Sequence[str] | None = None) -> str:
        labels = list(labels) if labels is not None else self.labels()
        pct = self.percentages(labels)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["stage", "calls", "total_ms", "percent"])
        for s in labels:
            writer.writerow([s, self.calls.get(s, 0), f"{self.total_ms(s):.3f}", f"{pct[s]:.3f}"])
        return buf.getvalue()


def time_stage(label: str, computation: Callable[[], Any], timings: StageTimings | None = None):
    """Run ``computation`` and record its wall time under ``label``.

    Returns ``(result, timings)``; pass the same ``timings`` object to accumulate.
    """
    timings = timings if timings is not None else StageTimings()
    with timings.stage(label):
        result = computation()
    return result, timings
