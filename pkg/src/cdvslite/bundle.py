"""Model bundle: every trained table the encoder needs, in one checksummed file.

Layout (all integers big-endian)::

    b"CDVB" | version u16 | section count u16
    repeated: name 8 bytes (ASCII, NUL padded) | length u32 | crc32 u32 | payload

Array payloads are sequences of ``dtype-char u8 | ndim u8 | dims u32... | raw
little-endian data``; text payloads are UTF-8.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compress import MODES, QuantizerModel, TransformPair
from .scalespace import ScaleSpaceConfig
from .scfv import GMMModel, PCAModel
from .selection import RelevanceModel

MAGIC = b"CDVB"
VERSION = 1
_HEAD = struct.Struct(">4sHH")
_SECTION = struct.Struct(">8sII")
_DTYPES = {"d": np.dtype("<f8"), "b": np.dtype("i1"), "B": np.dtype("u1"), "H": np.dtype("<u2")}


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSettings:
    n_select: int = 300
    max_side: int = 640

    def to_text(self) -> str:
        return f"n_select = {self.n_select}\nmax_side = {self.max_side}\n"

    @classmethod
    def from_text(cls, text: str) -> "EncoderSettings":
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, _, v = line.partition("=")
                kv[k.strip()] = int(v)
        return cls(**kv)


@dataclass(frozen=True)
class ModelBundle:
    pca: PCAModel
    gmm: GMMModel
    quantizer: QuantizerModel
    relevance: RelevanceModel
    transforms: TransformPair = field(default_factory=TransformPair)
    detector: ScaleSpaceConfig = field(default_factory=ScaleSpaceConfig)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)

    def to_bytes(self) -> bytes:
        sections = [
            (b"detector", self.detector.to_text().encode()),
            (b"encoder", self.encoder.to_text().encode()),
            (b"relevnce", self.relevance.to_text().encode()),
            (b"transfrm", _pack_arrays(self.transforms.A, self.transforms.B, np.array([self.transforms.shift], np.uint8))),
            (b"quantizr", _pack_quantizer(self.quantizer)),
            (b"pca", _pack_arrays(self.pca.mean, self.pca.basis)),
            (b"gmm", _pack_arrays(self.gmm.weights, self.gmm.means, self.gmm.sigmas)),
        ]
        out = bytearray(_HEAD.pack(MAGIC, VERSION, len(sections)))
        for name, payload in sections:
            out += _SECTION.pack(name.ljust(8, b"\0"), len(payload), zlib.crc32(payload))
            out += payload
        return bytes(out)

    def fingerprint(self) -> int:
        return zlib.crc32(self.to_bytes())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelBundle":
        if len(data) < _HEAD.size:
            raise BundleError("bundle too short")
        magic, version, count = _HEAD.unpack_from(data, 0)
        if magic != MAGIC:
            raise BundleError(f"bad bundle magic {magic!r}")
        if version != VERSION:
            raise BundleError(f"unsupported bundle version {version}")
        pos = _HEAD.size
        sections = {}
        for _ in range(count):
            if pos + _SECTION.size > len(data):
                raise BundleError("truncated section header")
            name, length, crc = _SECTION.unpack_from(data, pos)
            pos += _SECTION.size
            payload = data[pos : pos + length]
            if len(payload) != length:
                raise BundleError("truncated section payload")
            label = name.rstrip(b"\0").decode("ascii", "replace")
            if zlib.crc32(payload) != crc:
                raise BundleError(f"checksum mismatch in section {label!r}")
            sections[label] = payload
            pos += length
        try:
            A, B, shift = _unpack_arrays(sections["transfrm"])
            mean, basis = _unpack_arrays(sections["pca"])
            w, mu, sd = _unpack_arrays(sections["gmm"])
            return cls(
                pca=PCAModel(mean, basis),
                gmm=GMMModel(w, mu, sd),
                quantizer=_unpack_quantizer(sections["quantizr"]),
                relevance=RelevanceModel.from_text(sections["relevnce"].decode()),
                transforms=TransformPair(A, B, int(shift[0])),
                detector=ScaleSpaceConfig.from_text(sections["detector"].decode()),
                encoder=EncoderSettings.from_text(sections["encoder"].decode()),
            )
        except KeyError as exc:
            raise BundleError(f"missing section {exc.args[0]!r}") from None
        except (struct.error, ValueError, IndexError, UnicodeDecodeError) as exc:
            raise BundleError(f"malformed bundle payload: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise BundleError(f"cannot read bundle {path}: {exc}") from exc
        return cls.from_bytes(data)


def _pack_arrays(*arrays) -> bytes:
    out = bytearray()
    for a in arrays:
        a = np.asarray(a)
        code = {"f": "d", "i": "b", "u": "B"}[a.dtype.kind]
        if a.dtype.kind == "u" and a.dtype.itemsize > 1:
            code = "H"
        dt = _DTYPES[code]
        out += struct.pack(">cB", code.encode(), a.ndim)
        out += struct.pack(f">{a.ndim}I", *a.shape)
        out += np.ascontiguousarray(a, dtype=dt).tobytes()
    return bytes(out)


def _unpack_arrays(buf: bytes) -> list[np.ndarray]:
    arrays = []
    pos = 0
    while pos < len(buf):
        code, ndim = struct.unpack_from(">cB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f">{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = _DTYPES[code.decode()]
        n = int(np.prod(shape)) if ndim else 1
        arrays.append(np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(shape).copy())
        pos += n * dt.itemsize
    return arrays


def _pack_quantizer(q: QuantizerModel) -> bytes:
    counts = np.array([q.counts.get(m, 0) for m in MODES], dtype=np.uint8)
    degenerate = np.array(q.degenerate, dtype=np.uint8)
    return _pack_arrays(q.t0, q.t1, q.priority.astype(np.uint8), counts, degenerate)


def _unpack_quantizer(buf: bytes) -> QuantizerModel:
    t0, t1, priority, counts, degenerate = _unpack_arrays(buf)
    return QuantizerModel(
        t0,
        t1,
        priority.astype(np.intp),
        {m: int(c) for m, c in zip(MODES, counts) if c},
        tuple(int(d) for d in degenerate),
    )
