"""Dominant orientation assignment and 4x4x8 gradient-histogram description.

Coordinates passed to the functions here are in the pixel units of the image
they receive (the Gaussian image of the point's octave), not original-image
units; :func:`octave_frame` does the conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import GrayImage
from .parallel import par_for_items
from .scalespace import InterestPoint, Octave

ORI_BINS = 36
ORI_RADIUS = 3.96  # neighbourhood radius, in units of sigma
ORI_WINDOW = 1.5  # Gaussian window, in units of sigma
ORI_PEAK_RATIO = 0.8
CELL_SIDE = 3.0  # cell side, in units of sigma
GRID = 4
HIST_BINS = 8
DESC_DIM = GRID * GRID * HIST_BINS
CLAMP = 0.2
SUBPATCH = 16
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class OrientedPoint:
    point: InterestPoint
    theta: float


@dataclass(frozen=True)
class RawDescriptor:
    values: np.ndarray
    point: OrientedPoint


def octave_frame(pt: InterestPoint, octaves: list[Octave]) -> tuple[np.ndarray, float, float, float]:
    """Gaussian image nearest the point's scale and the point in that image's units."""
    octv = octaves[pt.octave]
    f = pt.octave_scale
    sigma = pt.sigma / f
    # detection scale including inherited blur selects the level
    s_eff = math.hypot(sigma, octv.base_blur)
    k = int(np.argmin([abs(s - s_eff) for s in octv.sigmas]))
    return octv.scale_images[k], pt.x / f, pt.y / f, sigma


def _gradients(img: np.ndarray, x0: int, x1: int, y0: int, y1: int):
    """Central-difference gradients on rows y0..y1-1, cols x0..x1-1 (clipped to the valid interior)."""
    H, W = img.shape
    ys = np.arange(y0, y1)
    xs = np.arange(x0, x1)
    ys = ys[(ys >= 1) & (ys <= H - 2)]
    xs = xs[(xs >= 1) & (xs <= W - 2)]
    if len(ys) == 0 or len(xs) == 0:
        e = np.zeros((0, 0))
        return ys, xs, e, e
    a, b = ys[0], ys[-1] + 1
    c, d = xs[0], xs[-1] + 1
    gx = 0.5 * (img[a:b, c + 1 : d + 1] - img[a:b, c - 1 : d - 1])
    gy = 0.5 * (img[a + 1 : b + 1, c:d] - img[a - 1 : b - 1, c:d])
    return ys, xs, gx, gy


def orientation_histogram(img: np.ndarray, x: float, y: float, sigma: float) -> np.ndarray:
    radius = ORI_RADIUS * sigma
    r = int(math.ceil(radius))
    cx, cy = int(round(x)), int(round(y))
    ys, xs, gx, gy = _gradients(img, cx - r, cx + r + 1, cy - r, cy + r + 1)
    hist = np.zeros(ORI_BINS)
    if gx.size == 0:
        return hist
    dx = xs[None, :] - x
    dy = ys[:, None] - y
    d2 = dx * dx + dy * dy
    inside = d2 < radius * radius
    sw = ORI_WINDOW * sigma
    weight = np.hypot(gx, gy) * np.exp(-d2 / (2.0 * sw * sw))
    ang = np.mod(np.arctan2(gy, gx), TWO_PI)
    # bins centred on multiples of 10 degrees
    b = np.mod(np.rint(ang * (ORI_BINS / TWO_PI)).astype(np.intp), ORI_BINS)
    hist += np.bincount(b[inside], weights=weight[inside], minlength=ORI_BINS)
    return hist


def peaks_from_histogram(hist: np.ndarray, ratio: float = ORI_PEAK_RATIO) -> list[float]:
    top = hist.max() if hist.size else 0.0
    if not top > 0.0:
        return [0.0]
    n = len(hist)
    thetas = []
    for b in range(n):
        c, left, right = hist[b], hist[(b - 1) % n], hist[(b + 1) % n]
        if c > ratio * top and c > left and c >= right:
            denom = left - 2.0 * c + right
            off = 0.5 * (left - right) / denom if denom != 0 else 0.0
            thetas.append(float(np.mod((b + off) * TWO_PI / n, TWO_PI)))
    return thetas or [0.0]


def dominant_orientations(img, x: float, y: float, sigma: float) -> list[float]:
    """Orientations (radians in [0, 2pi)) of histogram peaks above 0.8 of the highest."""
    data = img.data if isinstance(img, GrayImage) else np.asarray(img)
    return peaks_from_histogram(orientation_histogram(data, x, y, sigma))


def _window_box(x: float, y: float, sigma: float) -> tuple[int, int, int, int]:
    half = 0.5 * GRID * CELL_SIDE * sigma * math.sqrt(2.0)
    r = int(math.ceil(half)) + 1
    cx, cy = int(round(x)), int(round(y))
    return cx - r, cx + r + 1, cy - r, cy + r + 1


def subpatches(x: float, y: float, sigma: float, size: int = SUBPATCH) -> list[tuple[int, int, int, int]]:
    """Non-overlapping ``size``-square pieces of the sampling box, row-major."""
    x0, x1, y0, y1 = _window_box(x, y, sigma)
    return [
        (sx, min(sx + size, x1), sy, min(sy + size, y1))
        for sy in range(y0, y1, size)
        for sx in range(x0, x1, size)
    ]


def subpatch_histogram(
    img: np.ndarray, x: float, y: float, sigma: float, theta: float, box: tuple[int, int, int, int]
) -> np.ndarray:
    """Trilinear-weighted (cell_y, cell_x, orientation) histogram of one sub-patch."""
    ys, xs, gx, gy = _gradients(img, *box)
    hist = np.zeros(DESC_DIM)
    if gx.size == 0:
        return hist
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cell = CELL_SIDE * sigma
    dx = np.broadcast_to(xs[None, :] - x, gx.shape)
    dy = np.broadcast_to(ys[:, None] - y, gx.shape)
    u = (cos_t * dx + sin_t * dy) / cell
    v = (-sin_t * dx + cos_t * dy) / cell
    # continuous cell coordinates with cell centres at 0..GRID-1
    cu = u + 0.5 * GRID - 0.5
    cv = v + 0.5 * GRID - 0.5
    keep = (cu > -1.0) & (cu < GRID) & (cv > -1.0) & (cv < GRID)
    if not keep.any():
        return hist
    mag = np.hypot(gx, gy)[keep]
    # Gaussian falloff with sigma equal to half the window width
    w = mag * np.exp(-(u[keep] ** 2 + v[keep] ** 2) / (2.0 * (0.5 * GRID) ** 2))
    ang = np.mod(np.arctan2(gy[keep], gx[keep]) - theta, TWO_PI) * (HIST_BINS / TWO_PI)
    cu, cv = cu[keep], cv[keep]
    iu, iv, io = np.floor(cu), np.floor(cv), np.floor(ang)
    fu, fv, fo = cu - iu, cv - iv, ang - io
    iu, iv, io = iu.astype(np.intp), iv.astype(np.intp), io.astype(np.intp)
    for du, wu in ((0, 1.0 - fu), (1, fu)):
        cx_ = iu + du
        okx = (cx_ >= 0) & (cx_ < GRID)
        for dv, wv in ((0, 1.0 - fv), (1, fv)):
            cy_ = iv + dv
            ok = okx & (cy_ >= 0) & (cy_ < GRID)
            for do, wo in ((0, 1.0 - fo), (1, fo)):
                ob = (io + do) % HIST_BINS
                idx = (cy_ * GRID + cx_) * HIST_BINS + ob
                hist += np.bincount(idx[ok], weights=(w * wu * wv * wo)[ok], minlength=DESC_DIM)
    return hist


def clamp_stage(hist: np.ndarray) -> np.ndarray:
    """L2 normalization followed by clamping at 0.2 (before renormalization)."""
    n = np.linalg.norm(hist)
    if not n > 0.0:
        return np.zeros_like(hist)
    return np.minimum(hist / n, CLAMP)


def normalize_descriptor(hist: np.ndarray) -> np.ndarray:
    v = clamp_stage(hist)
    n = np.linalg.norm(v)
    return v / n if n > 0.0 else v


def _merge(parts) -> np.ndarray:
    hist = np.zeros(DESC_DIM)
    for part in parts:
        hist = hist + part
    return hist


def describe_values(img, x: float, y: float, sigma: float, theta: float) -> np.ndarray:
    data = img.data if isinstance(img, GrayImage) else np.asarray(img)
    parts = [subpatch_histogram(data, x, y, sigma, theta, b) for b in subpatches(x, y, sigma)]
    return normalize_descriptor(_merge(parts))


def describe(img, opt: OrientedPoint, frame: tuple[float, float, float] | None = None) -> RawDescriptor:
    """128-D descriptor of ``opt``; ``frame`` = (x, y, sigma) in ``img`` units, default from the point."""
    x, y, s = frame if frame is not None else (opt.point.x, opt.point.y, opt.point.sigma)
    return RawDescriptor(describe_values(img, x, y, s, opt.theta), opt)


def orient_points(points: list[InterestPoint], octaves: list[Octave], workers: int | None = None) -> list[OrientedPoint]:
    def work(pt):
        img, x, y, s = octave_frame(pt, octaves)
        return [OrientedPoint(pt, th) for th in dominant_orientations(img, x, y, s)]

    return [op for group in par_for_items(points, work, workers) for op in group]


def describe_batch(
    octaves: list[Octave], points: list[OrientedPoint], workers: int | None = None
) -> list[RawDescriptor]:
    """Describe many points as (point, sub-patch) work items.

    Sub-patch histograms are merged per point in sub-patch index order, which
    makes the result bit-identical to calling :func:`describe` point by point.
    """
    jobs = []
    frames = []
    for i, opt in enumerate(points):
        img, x, y, s = octave_frame(opt.point, octaves)
        frames.append((img, x, y, s))
        for box in subpatches(x, y, s):
            jobs.append((i, box))

    def work(job):
        i, box = job
        img, x, y, s = frames[i]
        return subpatch_histogram(img, x, y, s, points[i].theta, box)

    hists = par_for_items(jobs, work, workers)
    grouped: list[list[np.ndarray]] = [[] for _ in points]
    for (i, _), h in zip(jobs, hists):
        grouped[i].append(h)
    return [RawDescriptor(normalize_descriptor(_merge(g)), opt) for g, opt in zip(grouped, points)]


def describe_sequential(octaves: list[Octave], points: list[OrientedPoint]) -> list[RawDescriptor]:
    out = []
    for opt in points:
        img, x, y, s = octave_frame(opt.point, octaves)
        out.append(describe(img, opt, (x, y, s)))
    return out
