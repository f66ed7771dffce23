"""Synthetic textured-blob corpus with known geometric transforms.

Used for self-contained training, tests and demos; no external dataset needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import GrayImage, bilinear_resize, save_pgm


def textured_image(seed: int, height: int = 240, width: int = 320) -> GrayImage:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = 0.5 + 0.15 * ndimage.gaussian_filter(rng.standard_normal((height, width)), 24.0, mode="reflect") * 24.0
    n_blobs = int(rng.integers(40, 70))
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        s = rng.uniform(1.8, 9.0)
        a = rng.uniform(0.12, 0.35) * rng.choice([-1.0, 1.0])
        # mild anisotropy gives the blobs a dominant orientation
        ang = rng.uniform(0, np.pi)
        ratio = rng.uniform(1.0, 1.8)
        dx, dy = xx - cx, yy - cy
        u = np.cos(ang) * dx + np.sin(ang) * dy
        v = -np.sin(ang) * dx + np.cos(ang) * dy
        img += a * np.exp(-(u * u / (2 * (s * ratio) ** 2) + v * v / (2 * s * s)))
    for _ in range(int(rng.integers(6, 12))):
        x0, y0 = rng.uniform(0, width), rng.uniform(0, height)
        w, h = rng.uniform(8, 40), rng.uniform(8, 40)
        a = rng.uniform(0.08, 0.2) * rng.choice([-1.0, 1.0])
        rect = ((xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)).astype(np.float64)
        img += a * ndimage.gaussian_filter(rect, 1.0)
    img += 0.04 * ndimage.gaussian_filter(rng.standard_normal((height, width)), 1.0) * 3.0
    lo, hi = img.min(), img.max()
    img = 0.05 + 0.9 * (img - lo) / (hi - lo)
    # 8-bit quantization so images round-trip through PGM exactly
    return GrayImage(np.rint(img * 255.0) / 255.0)


def noise_image(seed: int, height: int = 240, width: int = 320) -> GrayImage:
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.uniform(0, 1, (height, width)), 1.5)
    img = (img - img.min()) / (img.max() - img.min())
    return GrayImage(np.rint(img * 255.0) / 255.0)


@dataclass(frozen=True)
class Transform:
    """Rotation by ``quarter_turns`` x 90 degrees (counter-clockwise as displayed), then scale, then blur."""

    quarter_turns: int = 0
    scale: float = 1.0
    blur: float = 0.0

    def apply(self, img: GrayImage) -> GrayImage:
        data = np.rot90(img.data, self.quarter_turns % 4)
        if self.scale != 1.0:
            h, w = data.shape
            data = bilinear_resize(data, int(round(h * self.scale)), int(round(w * self.scale)))
        if self.blur > 0:
            data = ndimage.gaussian_filter(data, self.blur, mode="mirror")
        return GrayImage(np.clip(np.rint(data * 255.0) / 255.0, 0.0, 1.0))

    def map_points(self, xy: np.ndarray, height: int, width: int) -> np.ndarray:
        """Map (x, y) pixel coordinates of the source image into the transformed image."""
        x, y = np.asarray(xy, dtype=np.float64).T
        h, w = height, width
        for _ in range(self.quarter_turns % 4):
            # np.rot90: new[i, j] = old[j, w - 1 - i]
            x, y = y, (w - 1) - x
            h, w = w, h
        if self.scale != 1.0:
            sy = round(h * self.scale) / h
            sx = round(w * self.scale) / w
            x = (x + 0.5) * sx - 0.5
            y = (y + 0.5) * sy - 0.5
        return np.stack([x, y], axis=1)


def corpus(n: int, seed: int = 0, height: int = 240, width: int = 320) -> list[GrayImage]:
    return [textured_image(seed * 100003 + i, height, width) for i in range(n)]


def write_corpus(directory, n: int, seed: int = 0, height: int = 240, width: int = 320) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(corpus(n, seed, height, width)):
        p = directory / f"img{i:04d}.pgm"
        save_pgm(img, p)
        paths.append(p)
    return paths
