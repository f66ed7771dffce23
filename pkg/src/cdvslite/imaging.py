"""Image ingestion: binary PGM/PPM I/O, resolution normalization and octave decimation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MIN_SIDE = 8


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or undersized raster files."""


@dataclass(frozen=True)
class GrayImage:
    """Row-major luminance raster with values in [0, 1].

    ``data`` has shape ``(height, width)`` and dtype float64.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"expected a 2D array, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def validate(self) -> None:
        if self.width < MIN_SIDE or self.height < MIN_SIDE:
            raise ImageFormatError(
                f"image {self.width}x{self.height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ImageFormatError("image contains non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ImageFormatError("image values outside [0, 1]")


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace separated tokens, skipping ``#`` comments."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates header from raster
    return tokens, pos + 1


def decode_pnm(buf: bytes) -> GrayImage:
    if len(buf) < 2:
        raise ImageFormatError("file too short")
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic number {magic!r}")
    tokens, offset = _read_header_tokens(buf[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError("malformed header") from exc
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    nbytes = width * height * channels
    raster = buf[offset : offset + nbytes]
    if len(raster) != nbytes:
        raise ImageFormatError("truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        data = arr.reshape(height, width)
    else:
        rgb = arr.reshape(height, width, 3)
        r, g, b = LUMA_WEIGHTS
        data = r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
        data = np.clip(data, 0.0, 1.0)
    return GrayImage(data)


def load_image(path, min_side: int = MIN_SIDE) -> GrayImage:
    """Load a binary PGM (P5) or PPM (P6) file as a GrayImage.

    PPM input is converted to luminance with BT.601 weights.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    img = decode_pnm(buf)
    if img.width < min_side or img.height < min_side:
        raise ImageFormatError(f"{path}: image {img.width}x{img.height} below minimum side {min_side}")
    return img


def encode_pgm(img: GrayImage) -> bytes:
    # exact inverse of the 1/255 scaling for values that came from 8-bit data
    raster = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + raster.tobytes()


def save_pgm(img: GrayImage, path) -> None:
    Path(path).write_bytes(encode_pgm(img))


def bilinear_resize(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel center alignment and edge clamping."""
    in_h, in_w = data.shape
    sy = in_h / out_h
    sx = in_w / out_w
    ys = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0.0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0.0, in_w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = data[y0][:, x0] * (1 - fx) + data[y0][:, x1] * fx
    bot = data[y1][:, x0] * (1 - fx) + data[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_max_side(img: GrayImage, limit: int = 640) -> GrayImage:
    """Downscale so that the longer side equals ``limit``; a no-op when already within it."""
    if limit < MIN_SIDE:
        raise ValueError(f"limit must be >= {MIN_SIDE}")
    h, w = img.shape
    longer = max(h, w)
    if longer <= limit:
        return img
    scale = limit / longer
    if w >= h:
        out_w, out_h = limit, int(round(h * scale))
    else:
        out_h, out_w = limit, int(round(w * scale))
    return GrayImage(bilinear_resize(img.data, max(out_h, 1), max(out_w, 1)))


def downsample_half(img: GrayImage) -> GrayImage | None:
    """Keep the even-coordinate samples. Returns None when the image is too small for another octave."""
    h, w = img.shape
    if w < 16 or h < 16:
        return None
    return GrayImage(img.data[0 : 2 * (h // 2) : 2, 0 : 2 * (w // 2) : 2].copy())
