"""Local descriptor compression: order-8 transforms, ternary quantization and 2-bit packing."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .descriptor import DESC_DIM, GRID, HIST_BINS

MODES = ("512B", "1K", "2K", "4K", "8K", "16K")
MODE_BUDGETS = {"512B": 512, "1K": 1024, "2K": 2048, "4K": 4096, "8K": 8192, "16K": 16384}
DEFAULT_ELEMENT_COUNTS = {"512B": 20, "1K": 32, "2K": 64, "4K": 103, "8K": 103, "16K": 128}
LOCATION_SCALE = 32.0  # 1/32 pixel steps in 16 bits
SIGMA_LOG_SCALE = 32.0  # 8-bit log2 sigma
LOCAL_HEADER = struct.Struct(">BBH")  # mode index, element count, code count
LOCATION_RECORD = struct.Struct(">HHBB")

class DecodeError(ValueError):
    pass


class ModeMismatch(ValueError):
    pass


def mode_index(mode: str) -> int:
    try:
        return MODES.index(mode)
    except ValueError:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}") from None


def hadamard8() -> np.ndarray:
    h = np.array([[1]], dtype=np.int8)
    for _ in range(3):
        h = np.block([[h, h], [h, -h]])
    return h


@dataclass(frozen=True)
class TransformPair:
    """Two integer 8x8 transforms applied to neighbouring cells in a checkerboard."""

    A: np.ndarray = field(default_factory=hadamard8)
    B: np.ndarray = field(default_factory=lambda: np.roll(hadamard8(), 1, axis=0))
    shift: int = 3  # output scaled by 2**-shift

    def __post_init__(self):
        for name in ("A", "B"):
            m = np.asarray(getattr(self, name), dtype=np.int8)
            if m.shape != (HIST_BINS, HIST_BINS) or not np.isin(m, (-1, 0, 1)).all():
                raise ValueError(f"transform {name} must be 8x8 with entries in {{-1, 0, 1}}")
            if abs(np.linalg.det(m.astype(np.float64))) < 0.5:
                raise ValueError(f"transform {name} is singular")
            object.__setattr__(self, name, m)

    def matrix_for_cell(self, cell: int) -> np.ndarray:
        r, c = divmod(cell, GRID)
        return self.A if (r + c) % 2 == 0 else self.B


def _values(raw) -> np.ndarray:
    return np.asarray(getattr(raw, "values", raw), dtype=np.float64)


def transform_descriptor(raw, tp: TransformPair | None = None) -> np.ndarray:
    # routed through the batch kernel so both paths agree bit for bit
    return transform_batch([raw], tp)[0]


def transform_batch(raws, tp: TransformPair | None = None) -> np.ndarray:
    tp = tp or TransformPair()
    X = np.array([_values(r) for r in raws], dtype=np.float64).reshape(-1, GRID * GRID, HIST_BINS)
    out = np.zeros_like(X)
    scale = 2.0 ** -tp.shift
    for cell in range(GRID * GRID):
        M = tp.matrix_for_cell(cell).astype(np.float64)
        # fixed-order accumulation (not BLAS) so results do not depend on batch size
        for k in range(HIST_BINS):
            out[:, cell] += X[:, cell, k, None] * M[None, :, k]
        out[:, cell] *= scale
    return out.reshape(-1, DESC_DIM)


def inverse_transform(transformed, tp: TransformPair | None = None) -> np.ndarray:
    tp = tp or TransformPair()
    y = np.asarray(transformed, dtype=np.float64).reshape(GRID * GRID, HIST_BINS)
    out = np.empty_like(y)
    for cell in range(GRID * GRID):
        m = tp.matrix_for_cell(cell).astype(np.float64)
        out[cell] = np.linalg.solve(m, y[cell] * 2.0**tp.shift)
    return out.reshape(DESC_DIM)


@dataclass(frozen=True)
class QuantizerModel:
    t0: np.ndarray
    t1: np.ndarray
    priority: np.ndarray  # permutation of 0..127, most informative first
    counts: dict = field(default_factory=lambda: dict(DEFAULT_ELEMENT_COUNTS))
    degenerate: tuple[int, ...] = ()

    def __post_init__(self):
        t0 = np.asarray(self.t0, dtype=np.float64)
        t1 = np.asarray(self.t1, dtype=np.float64)
        pr = np.asarray(self.priority, dtype=np.intp)
        if t0.shape != (DESC_DIM,) or t1.shape != (DESC_DIM,):
            raise ValueError("thresholds must have 128 entries")
        if not np.all(t0 < t1):
            raise ValueError("need t0 < t1 for every element")
        if sorted(pr.tolist()) != list(range(DESC_DIM)):
            raise ValueError("priority must be a permutation of 0..127")
        for mode, m in self.counts.items():
            mode_index(mode)
            if not 1 <= m <= DESC_DIM:
                raise ValueError(f"element count for {mode} out of range")
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "priority", pr)

    def elements(self, mode: str) -> np.ndarray:
        if mode not in self.counts:
            raise ValueError(f"unknown mode {mode!r}")
        return self.priority[: self.counts[mode]]


def train_thresholds(transformed, p0: float = 1.0 / 3.0, counts: dict | None = None) -> QuantizerModel:
    """Per-element quantile thresholds putting mass ``p0`` in the zero band."""
    X = np.asarray(transformed, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != DESC_DIM:
        raise ValueError("expected an (n, 128) array")
    if X.shape[0] < 1000:
        raise ValueError(f"need at least 1000 descriptors, got {X.shape[0]}")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    t0 = np.quantile(X, (1.0 - p0) / 2.0, axis=0)
    t1 = np.quantile(X, (1.0 + p0) / 2.0, axis=0)
    var = X.var(axis=0)
    degenerate = ~(t1 > t0)
    t1 = np.where(degenerate, np.nextafter(t0, np.inf), t1)
    # descending variance, degenerate elements last, index breaks ties
    order = sorted(range(DESC_DIM), key=lambda e: (bool(degenerate[e]), -var[e], e))
    return QuantizerModel(
        t0, t1, np.array(order), dict(counts or DEFAULT_ELEMENT_COUNTS), tuple(np.nonzero(degenerate)[0].tolist())
    )


@dataclass(frozen=True)
class TernaryCode:
    x_q: int
    y_q: int
    sigma_q: int
    theta_q: int
    symbols: np.ndarray  # int8 in {-1, 0, 1}

    def __eq__(self, other):
        if not isinstance(other, TernaryCode):
            return NotImplemented
        return (self.x_q, self.y_q, self.sigma_q, self.theta_q) == (
            other.x_q,
            other.y_q,
            other.sigma_q,
            other.theta_q,
        ) and np.array_equal(self.symbols, other.symbols)

    __hash__ = None

    @property
    def x(self) -> float:
        return self.x_q / LOCATION_SCALE

    @property
    def y(self) -> float:
        return self.y_q / LOCATION_SCALE

    @property
    def sigma(self) -> float:
        return 2.0 ** (self.sigma_q / SIGMA_LOG_SCALE)

    @property
    def theta(self) -> float:
        return self.theta_q * 2.0 * math.pi / 256.0


def _quantize_location(v: float) -> int:
    return int(np.clip(np.rint(v * LOCATION_SCALE), 0, 0xFFFF))


def ternary_symbols(values, t0, t1) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.where(v < t0, -1, np.where(v > t1, 1, 0)).astype(np.int8)


def quantize_ternary(transformed, qm: QuantizerModel, mode: str, point=None) -> TernaryCode:
    """Ternary code of the mode's leading elements: -1 below t0, +1 above t1, else 0."""
    el = qm.elements(mode)
    sym = ternary_symbols(np.asarray(transformed)[el], qm.t0[el], qm.t1[el])
    if point is None:
        return TernaryCode(0, 0, 0, 0, sym)
    pt = getattr(point, "point", point)
    theta = getattr(point, "theta", 0.0)
    sigma_q = int(np.clip(np.rint(math.log2(max(pt.sigma, 1.0)) * SIGMA_LOG_SCALE), 0, 255))
    theta_q = int(np.rint(theta * 256.0 / (2.0 * math.pi))) % 256
    return TernaryCode(_quantize_location(pt.x), _quantize_location(pt.y), sigma_q, theta_q, sym)


def ternary_distance(a: TernaryCode, b: TernaryCode) -> int:
    if a.symbols.shape != b.symbols.shape:
        raise ModeMismatch(f"codes of length {a.symbols.size} and {b.symbols.size}")
    return int(np.abs(a.symbols.astype(np.int16) - b.symbols).sum())


def distance_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """All-pairs ternary distances between symbol matrices (n, m) and (k, m)."""
    if A.shape[1] != B.shape[1]:
        raise ModeMismatch("symbol lengths differ")
    ap, an = (A == 1).astype(np.int32), (A == -1).astype(np.int32)
    bp, bn = (B == 1).astype(np.int32), (B == -1).astype(np.int32)
    nz_a = (ap + an).sum(axis=1)[:, None]
    nz_b = (bp + bn).sum(axis=1)[None, :]
    same = ap @ bp.T + an @ bn.T
    # per element: one zero -> 1, same sign -> 0, opposite -> 2
    return nz_a + nz_b - 2 * same


def symbol_bytes(m: int) -> int:
    return (2 * m + 7) // 8


def code_bytes(m: int) -> int:
    return LOCATION_RECORD.size + symbol_bytes(m)


def max_codes(m: int, available: int) -> int:
    room = available - LOCAL_HEADER.size
    return max(0, room // code_bytes(m))


def pack_local(codes: list[TernaryCode], mode: str, max_bytes: int | None = None, m: int | None = None) -> bytes:
    """Serialize codes: header, location records, then 2-bit symbol rows.

    Codes are expected in descending relevance; when ``max_bytes`` is given the
    tail is dropped until the stream fits.
    """
    midx = mode_index(mode)
    if codes:
        m = codes[0].symbols.size
    elif m is None:
        m = DEFAULT_ELEMENT_COUNTS[mode]
    if any(c.symbols.size != m for c in codes):
        raise ModeMismatch("codes of mixed length")
    if max_bytes is not None:
        codes = codes[: max_codes(m, max_bytes)]
    if len(codes) > 0xFFFF:
        raise ValueError("too many codes for one stream")
    out = bytearray(LOCAL_HEADER.pack(midx, m, len(codes)))
    for c in codes:
        out += LOCATION_RECORD.pack(c.x_q, c.y_q, c.sigma_q, c.theta_q)
    if codes:
        sym = np.stack([c.symbols for c in codes]).astype(np.int8)
        if not np.isin(sym, (-1, 0, 1)).all():
            raise ValueError("symbols must be -1, 0 or +1")
        bits = np.where(sym == 1, 0b01, np.where(sym == -1, 0b10, 0b00)).astype(np.uint8)
        pad = (-m) % 4
        bits = np.pad(bits, ((0, 0), (0, pad)))
        q = bits.reshape(len(codes), -1, 4)
        packed = (q[..., 0] << 6) | (q[..., 1] << 4) | (q[..., 2] << 2) | q[..., 3]
        out += packed.astype(np.uint8).tobytes()
    return bytes(out)


def unpack_local(data: bytes) -> tuple[str, list[TernaryCode]]:
    if len(data) < LOCAL_HEADER.size:
        raise DecodeError("stream shorter than its header")
    midx, m, n = LOCAL_HEADER.unpack_from(data, 0)
    if midx >= len(MODES):
        raise DecodeError(f"unknown mode index {midx}")
    if m == 0 and n > 0:
        raise DecodeError("zero-length codes")
    sb = symbol_bytes(m)
    expected = LOCAL_HEADER.size + n * (LOCATION_RECORD.size + sb)
    if len(data) != expected:
        raise DecodeError(f"stream length {len(data)} != expected {expected}")
    pos = LOCAL_HEADER.size
    locs = [LOCATION_RECORD.unpack_from(data, pos + i * LOCATION_RECORD.size) for i in range(n)]
    pos += n * LOCATION_RECORD.size
    raw = np.frombuffer(data, dtype=np.uint8, count=n * sb, offset=pos).reshape(n, sb)
    bits = np.stack([(raw >> 6) & 3, (raw >> 4) & 3, (raw >> 2) & 3, raw & 3], axis=-1).reshape(n, 4 * sb)
    if (bits == 0b11).any():
        raise DecodeError("reserved symbol pattern")
    if (bits[:, m:] != 0).any():
        raise DecodeError("non-zero padding bits")
    sym = np.where(bits[:, :m] == 0b01, 1, np.where(bits[:, :m] == 0b10, -1, 0)).astype(np.int8)
    codes = [TernaryCode(x, y, s, t, sym[i].copy()) for i, (x, y, s, t) in enumerate(locs)]
    return MODES[midx], codes
