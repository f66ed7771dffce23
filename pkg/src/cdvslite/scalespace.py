"""LoG scale space and cubic-in-scale (ALP) interest point detection.

Per octave: Gaussian images at K scales, scale-normalized Laplacians, a cubic
polynomial in sigma fitted exactly through the K responses at every pixel,
analytic scale extrema, an 8-neighbour spatial test, sub-pixel refinement, and
cross-octave duplicate removal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .imaging import GrayImage, downsample_half
from .parallel import Tile, TileGrid, tile_apply, tile_map


class SingularScalesError(ValueError):
    pass


def _default_sigmas() -> tuple[float, ...]:
    return tuple(1.4 * 2.0 ** (k / 4.0) for k in range(4))


@dataclass(frozen=True)
class ScaleSpaceConfig:
    num_octaves: int = 4
    sigmas: tuple[float, ...] = field(default_factory=_default_sigmas)
    response_threshold: float = 0.02
    edge_ratio: float = 10.0
    max_offset: float = 0.6
    dedup_distance: float = 2.0
    dedup_sigma_ratio: float = 1.3

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        object.__setattr__(self, "sigmas", s)
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("sigmas must be strictly increasing")

    @property
    def edge_threshold(self) -> float:
        r = self.edge_ratio
        return (r + 1.0) ** 2 / r

    @property
    def border(self) -> int:
        return kernel_radius(self.sigmas[-1])

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(repr(x) for x in v)
            else:
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScaleSpaceConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            if key == "sigmas":
                kwargs[key] = tuple(float(v) for v in value.split())
            elif key == "num_octaves":
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)


@dataclass(frozen=True)
class InterestPoint:
    """Detected point. ``x``, ``y`` and ``sigma`` are in original-image units."""

    x: float
    y: float
    sigma: float
    octave: int
    p: float
    rho: float = 0.0
    p_ss: float = 0.0
    d: float = 0.0

    @property
    def octave_scale(self) -> float:
        return float(2 ** self.octave)


@dataclass
class Octave:
    index: int
    base: GrayImage
    sigmas: tuple[float, ...]
    scale_images: np.ndarray  # (K, h, w) Gaussian images
    log_images: np.ndarray  # (K, h, w) scale-normalized LoG images
    base_blur: float = 0.0  # blur already present in ``base``, octave pixel units

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape


@dataclass(frozen=True)
class Candidate:
    """Octave-local extremum: integer pixel plus the analytic extremal scale."""

    col: int
    row: int
    sigma: float
    p: float


def kernel_radius(sigma: float) -> int:
    return int(math.ceil(3.0 * sigma))


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    r = kernel_radius(sigma)
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def _correlate_valid(src: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    # fixed left-to-right accumulation order: identical per pixel whatever the array extent
    n = src.shape[axis] - len(kernel) + 1
    out = None
    for j, w in enumerate(kernel):
        sl = [slice(None)] * src.ndim
        sl[axis] = slice(j, j + n)
        term = w * src[tuple(sl)]
        out = term if out is None else out + term
    return out


def _laplacian_valid(g: np.ndarray) -> np.ndarray:
    c = g[1:-1, 1:-1]
    return g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4.0 * c


def _octave_kernel(sigmas, kernels, halo):
    def kernel(win: np.ndarray, tile: Tile) -> np.ndarray:
        h, w = tile.h, tile.w
        out = np.empty((2 * len(sigmas), h, w))
        for k, (s, g) in enumerate(zip(sigmas, kernels)):
            r = (len(g) - 1) // 2
            # Gaussian on the tile plus a 1-pixel ring so the Laplacian is defined on the tile
            lo = halo - 1 - r
            rows = win[lo : lo + h + 2 + 2 * r, lo : lo + w + 2 + 2 * r]
            t = _correlate_valid(rows, g, axis=0)
            gk = _correlate_valid(t, g, axis=1)
            out[k] = gk[1:-1, 1:-1]
            out[len(sigmas) + k] = (s * s) * _laplacian_valid(gk)
        return out

    return kernel


def build_octave(
    base: GrayImage,
    cfg: ScaleSpaceConfig | None = None,
    index: int = 0,
    tile_size: int | None = None,
    workers: int | None = None,
) -> Octave:
    """Gaussian and scale-normalized LoG images for one octave.

    ``tile_size=None`` filters the octave as a single tile.
    """
    cfg = cfg or ScaleSpaceConfig()
    kernels = [gaussian_kernel1d(s) for s in cfg.sigmas]
    halo = max(kernel_radius(s) for s in cfg.sigmas) + 1
    h, w = base.shape
    grid = TileGrid.build(h, w, tile_size or max(h, w), halo)
    stack = tile_map(base.data, grid, _octave_kernel(cfg.sigmas, kernels, halo), workers)
    K = len(cfg.sigmas)
    return Octave(index, base, cfg.sigmas, stack[:K], stack[K:])


def compute_beta(sigmas) -> np.ndarray:
    """Inverse Vandermonde matrix mapping the K LoG responses to cubic coefficients.

    ``alpha[i] = sum_k beta[i, k] * L_k`` gives ``p(sigma_k) = L_k`` exactly.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    if s.shape != (4,):
        raise ValueError("the cubic fit needs exactly 4 scales")
    if len(np.unique(s)) != len(s):
        raise SingularScalesError(f"duplicate scales in {tuple(s)}")
    V = np.vander(s, 4, increasing=True)
    return np.linalg.inv(V)


def poly_coefficients(log_images: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-pixel cubic coefficients, shape (4, h, w)."""
    alpha = np.zeros((4,) + log_images.shape[1:])
    for i in range(4):
        acc = beta[i, 0] * log_images[0]
        for k in range(1, log_images.shape[0]):
            acc = acc + beta[i, k] * log_images[k]
        alpha[i] = acc
    return alpha


def poly_eval(alpha: np.ndarray, sigma) -> np.ndarray:
    return alpha[0] + sigma * (alpha[1] + sigma * (alpha[2] + sigma * alpha[3]))


def poly_dsigma2(alpha: np.ndarray, sigma) -> np.ndarray:
    return 2.0 * alpha[2] + 6.0 * alpha[3] * sigma


def scale_roots(alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both roots of dp/dsigma = a1 + 2 a2 s + 3 a3 s^2; NaN where absent."""
    a1, a2, a3 = alpha[1], alpha[2], alpha[3]
    qa, qb, qc = 3.0 * a3, 2.0 * a2, a1
    disc = qb * qb - 4.0 * qa * qc
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        # numerically stable pair of roots
        q = -0.5 * (qb + np.copysign(sq, qb))
        r1 = np.where(qa != 0, q / qa, np.where(qb != 0, -qc / qb, np.nan))
        r2 = np.where(qa != 0, np.where(q != 0, qc / q, np.nan), np.nan)
    return r1, r2


_NEIGHBOURS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def _extrema_kernel(cfg: ScaleSpaceConfig, height: int, width: int):
    s_lo, s_hi = cfg.sigmas[0], cfg.sigmas[-1]
    border = cfg.border
    thr = cfg.response_threshold

    def kernel(win: np.ndarray, tile: Tile) -> list[Candidate]:
        h, w = tile.h, tile.w
        centre = win[:, 1 : 1 + h, 1 : 1 + w]
        rows = np.arange(tile.y0, tile.y0 + h)[:, None]
        cols = np.arange(tile.x0, tile.x0 + w)[None, :]
        inside = (
            (rows >= border) & (rows < height - border) & (cols >= border) & (cols < width - border)
        )
        found = []
        for root in scale_roots(centre):
            ok = inside & np.isfinite(root) & (root >= s_lo) & (root <= s_hi)
            if not ok.any():
                continue
            r = np.where(ok, root, s_lo)
            p = poly_eval(centre, r)
            ok &= np.abs(p) >= thr
            pss = poly_dsigma2(centre, r)
            is_max = ok & (pss < 0)
            is_min = ok & (pss > 0)
            for dy, dx in _NEIGHBOURS:
                nb = win[:, 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
                pn = poly_eval(nb, r)
                is_max &= p > pn
                is_min &= p < pn
            ys, xs = np.nonzero(is_max | is_min)
            for y, x in zip(ys, xs):
                found.append(Candidate(int(tile.x0 + x), int(tile.y0 + y), float(r[y, x]), float(p[y, x])))
        return found

    return kernel


def detect_extrema(
    octave: Octave,
    cfg: ScaleSpaceConfig | None = None,
    tile_size: int | None = None,
    workers: int | None = None,
    alpha: np.ndarray | None = None,
) -> list[Candidate]:
    """Analytic scale extrema that are strict 8-neighbour extrema at their own scale.

    Sorted by (row, col, sigma) so the result does not depend on tiling.
    """
    cfg = cfg or ScaleSpaceConfig()
    if alpha is None:
        alpha = poly_coefficients(octave.log_images, compute_beta(cfg.sigmas))
    h, w = octave.shape
    grid = TileGrid.build(h, w, tile_size or max(h, w), halo=1)
    parts = tile_apply(alpha, grid, _extrema_kernel(cfg, h, w), workers)
    cands = [c for part in parts for c in part]
    cands.sort(key=lambda c: (c.row, c.col, c.sigma))
    return cands


def quadratic_vertex(patch: np.ndarray) -> tuple[float, float, float, float, float]:
    """Vertex offset of the 2D quadratic through a 3x3 patch (finite-difference fit).

    Returns ``(dx, dy, value_at_vertex, trace, det)`` of the Hessian.
    """
    gx = 0.5 * (patch[1, 2] - patch[1, 0])
    gy = 0.5 * (patch[2, 1] - patch[0, 1])
    hxx = patch[1, 2] - 2.0 * patch[1, 1] + patch[1, 0]
    hyy = patch[2, 1] - 2.0 * patch[1, 1] + patch[0, 1]
    hxy = 0.25 * (patch[2, 2] - patch[2, 0] - patch[0, 2] + patch[0, 0])
    det = hxx * hyy - hxy * hxy
    if det == 0.0:
        return math.nan, math.nan, float(patch[1, 1]), hxx + hyy, det
    dx = -(hyy * gx - hxy * gy) / det
    dy = -(hxx * gy - hxy * gx) / det
    value = patch[1, 1] + 0.5 * (gx * dx + gy * dy)
    return float(dx), float(dy), float(value), float(hxx + hyy), float(det)


@dataclass(frozen=True)
class RefinedPoint:
    """Octave-local refined candidate."""

    x: float
    y: float
    sigma: float
    p: float
    rho: float
    p_ss: float


def refine_candidates(
    candidates: list[Candidate],
    octave_or_alpha,
    cfg: ScaleSpaceConfig | None = None,
) -> list[RefinedPoint]:
    """Sub-pixel refinement over the 3x3 neighbourhood of p(., ., sigma*).

    Drops candidates whose offset exceeds ``cfg.max_offset`` in either axis or
    whose Hessian is not definite / fails the edge-ratio test.
    """
    cfg = cfg or ScaleSpaceConfig()
    if isinstance(octave_or_alpha, Octave):
        alpha = poly_coefficients(octave_or_alpha.log_images, compute_beta(cfg.sigmas))
    else:
        alpha = octave_or_alpha
    H, W = alpha.shape[1:]
    out = []
    for c in candidates:
        if not (1 <= c.row < H - 1 and 1 <= c.col < W - 1):
            continue
        nb = alpha[:, c.row - 1 : c.row + 2, c.col - 1 : c.col + 2]
        patch = poly_eval(nb, c.sigma)
        dx, dy, value, tr, det = quadratic_vertex(patch)
        if not det > 0.0 or not (abs(dx) <= cfg.max_offset and abs(dy) <= cfg.max_offset):
            continue
        rho = tr * tr / det
        if rho > cfg.edge_threshold:
            continue
        pss = float(poly_dsigma2(alpha[:, c.row, c.col], c.sigma))
        out.append(RefinedPoint(c.col + dx, c.row + dy, c.sigma, value, rho, pss))
    return out


def intrinsic_sigma(sigma: float, base_blur: float) -> float:
    """Structure scale once the blur inherited by a decimated base is removed."""
    s2 = sigma * sigma - base_blur * base_blur
    return math.sqrt(s2) if s2 > 0.25 else 0.5


def to_image_points(
    refined: list[RefinedPoint], octave_index: int, base_blur: float = 0.0
) -> list[InterestPoint]:
    f = float(2**octave_index)
    return [
        InterestPoint(
            r.x * f, r.y * f, intrinsic_sigma(r.sigma, base_blur) * f, octave_index, r.p, r.rho, r.p_ss
        )
        for r in refined
    ]


def _close_pairs(current, previous, cfg: ScaleSpaceConfig) -> np.ndarray:
    if not current or not previous:
        return np.zeros((len(current), len(previous)), dtype=bool)
    cx = np.array([[q.x, q.y, q.sigma] for q in current])
    px = np.array([[q.x, q.y, q.sigma] for q in previous])
    dist = np.hypot(cx[:, None, 0] - px[None, :, 0], cx[:, None, 1] - px[None, :, 1])
    ratio = cx[:, None, 2] / px[None, :, 2]
    lim = cfg.dedup_sigma_ratio
    return (dist < cfg.dedup_distance) & (ratio >= 1.0 / lim) & (ratio <= lim)


def dedup_pair_lists(current, previous, cfg: ScaleSpaceConfig | None = None):
    """Survivors of each list after cross-octave elimination.

    A point is removed when a close point of the other list has a larger |p|;
    on exact ties the current-octave point goes. The rule is order independent.
    """
    cfg = cfg or ScaleSpaceConfig()
    close = _close_pairs(current, previous, cfg)
    if not close.any():
        return list(current), list(previous)
    ca = np.array([abs(q.p) for q in current])
    pa = np.array([abs(q.p) for q in previous])
    cur_loses = close & (ca[:, None] <= pa[None, :])
    prev_loses = close & (pa[None, :] < ca[:, None])
    keep_cur = ~cur_loses.any(axis=1)
    keep_prev = ~prev_loses.any(axis=0)
    return (
        [q for q, k in zip(current, keep_cur) if k],
        [q for q, k in zip(previous, keep_prev) if k],
    )


def dedup_across_octaves(current, previous, cfg: ScaleSpaceConfig | None = None) -> list:
    """Merged list: surviving previous-octave points followed by surviving current ones."""
    cur, prev = dedup_pair_lists(current, previous, cfg)
    return prev + cur


@dataclass
class DetectionResult:
    points: list[InterestPoint]
    octaves: list[Octave]


def detect(
    img: GrayImage,
    cfg: ScaleSpaceConfig | None = None,
    tile_size: int | None = 32,
    workers: int | None = None,
) -> DetectionResult:
    """Full multi-octave detection: filtering, extremum search and refinement per octave, then cross-octave dedup."""
    cfg = cfg or ScaleSpaceConfig()
    beta = compute_beta(cfg.sigmas)
    octaves: list[Octave] = []
    per_octave: list[list[InterestPoint]] = []
    base = img
    blur = 0.0
    for o in range(cfg.num_octaves):
        if base is None or min(base.shape) < 2 * cfg.border + 3:
            break
        octave = build_octave(base, cfg, o, tile_size, workers)
        octave.base_blur = blur
        alpha = poly_coefficients(octave.log_images, beta)
        cands = detect_extrema(octave, cfg, tile_size, workers, alpha=alpha)
        pts = to_image_points(refine_candidates(cands, alpha, cfg), o, blur)
        if per_octave:
            pts, per_octave[-1] = dedup_pair_lists(pts, per_octave[-1], cfg)
        per_octave.append(pts)
        octaves.append(octave)
        base = downsample_half(GrayImage(octave.scale_images[-1]))
        blur = math.hypot(cfg.sigmas[-1], blur) / 2.0
    points = [p for group in per_octave for p in group]
    return DetectionResult(points, octaves)


def with_center_distance(points: list[InterestPoint], height: int, width: int) -> list[InterestPoint]:
    """Fill ``d``: distance to the image centre over the half diagonal, in [0, 1]."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    half_diag = 0.5 * math.hypot(width, height)
    return [replace(q, d=min(1.0, math.hypot(q.x - cx, q.y - cy) / half_diag)) for q in points]
