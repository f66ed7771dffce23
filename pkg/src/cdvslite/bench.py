"""Timing helpers: per-stage profile, detection worker scaling, naive vs matrix aggregation."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import scalespace
from .bundle import ModelBundle
from .imaging import GrayImage
from .parallel import StageTimings
from .pipeline import encode_image
from .scfv import GMMModel, fisher_gradients


@dataclass(frozen=True)
class SpeedComparison:
    label: str
    baseline_s: float
    candidate_s: float

    @property
    def speedup(self) -> float:
        return self.baseline_s / self.candidate_s if self.candidate_s > 0 else float("inf")


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def stage_profile(
    images: list[GrayImage],
    bundle: ModelBundle,
    mode: str = "4K",
    workers: int | None = None,
    tile_size: int | None = 32,
) -> StageTimings:
    timings = StageTimings()
    for img in images:
        encode_image(img, bundle, mode, tile_size=tile_size, workers=workers, timings=timings)
    return timings


def detection_scaling(
    img: GrayImage,
    workers: int = 4,
    tile_size: int = 64,
    repeats: int = 3,
    cfg: scalespace.ScaleSpaceConfig | None = None,
) -> SpeedComparison:
    cfg = cfg or scalespace.ScaleSpaceConfig()
    t1 = _best_of(lambda: scalespace.detect(img, cfg, tile_size=tile_size, workers=1), repeats)
    tn = _best_of(lambda: scalespace.detect(img, cfg, tile_size=tile_size, workers=workers), repeats)
    return SpeedComparison(f"detection 1 vs {workers} workers", t1, tn)


def random_gmm(n_components: int, dim: int, rng: np.random.Generator) -> GMMModel:
    w = rng.uniform(0.5, 1.5, n_components)
    return GMMModel(w / w.sum(), rng.normal(0, 1, (n_components, dim)), rng.uniform(0.5, 1.5, (n_components, dim)))


def aggregation_comparison(
    n: int = 300, n_components: int = 512, dim: int = 32, seed: int = 0, repeats: int = 3
) -> SpeedComparison:
    rng = np.random.default_rng(seed)
    gmm = random_gmm(n_components, dim, rng)
    X = rng.normal(0, 1, (n, dim))
    tn = _best_of(lambda: fisher_gradients(X, gmm, "naive"), repeats)
    tm = _best_of(lambda: fisher_gradients(X, gmm, "matrix"), repeats)
    return SpeedComparison(f"aggregation naive vs matrix (n={n}, N={n_components})", tn, tm)
