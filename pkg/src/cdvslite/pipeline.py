"""End-to-end encoder (detection -> selection -> description -> compression -> aggregation) and model training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import scalespace
from .bundle import EncoderSettings, ModelBundle
from .compress import (
    DEFAULT_ELEMENT_COUNTS,
    MODE_BUDGETS,
    TernaryCode,
    TransformPair,
    mode_index,
    pack_local,
    quantize_ternary,
    train_thresholds,
    transform_batch,
    unpack_local,
)
from .container import Container
from .descriptor import RawDescriptor, describe_batch, orient_points
from .imaging import GrayImage, resize_max_side
from .parallel import StageTimings, par_for_items
from .scalespace import InterestPoint, ScaleSpaceConfig, with_center_distance
from .scfv import (
    ModelMismatch,
    SCFVDescriptor,
    fisher_gradients,
    pca_reduce,
    scfv_encode,
    scfv_from_bytes,
    scfv_nbytes,
    scfv_to_bytes,
    train_gmm,
    train_pca,
)
from .selection import RelevanceModel, select_top, train_relevance_tables
from .synthetic import Transform

log = logging.getLogger(__name__)


@dataclass
class Features:
    """Intermediate products of the first three stages for one image."""

    image: GrayImage
    points: list[InterestPoint]
    selected: list[InterestPoint]
    descriptors: list[RawDescriptor]


@dataclass
class EncodedImage:
    mode: str
    width: int
    height: int
    model_id: int
    scfv: SCFVDescriptor
    codes: list[TernaryCode] = field(default_factory=list)

    def container(self) -> Container:
        m = self.codes[0].symbols.size if self.codes else None
        return Container(
            self.mode,
            self.width,
            self.height,
            self.model_id,
            scfv_to_bytes(self.scfv),
            pack_local(self.codes, self.mode, m=m),
        )

    def to_bytes(self) -> bytes:
        return self.container().to_bytes()

    @classmethod
    def from_container(cls, c: Container, bundle: ModelBundle) -> "EncodedImage":
        if c.model_id != bundle.fingerprint():
            raise ModelMismatch("container was encoded with a different model bundle")
        g = bundle.gmm
        scfv = scfv_from_bytes(c.global_bytes, g.n_components, g.dim, c.mode, g.fingerprint())
        mode, codes = unpack_local(c.local_bytes)
        if mode != c.mode:
            raise ValueError("local stream mode disagrees with container mode")
        return cls(c.mode, c.width, c.height, c.model_id, scfv, codes)

    @classmethod
    def from_bytes(cls, data: bytes, bundle: ModelBundle) -> "EncodedImage":
        return cls.from_container(Container.from_bytes(data), bundle)


def extract_features(
    img: GrayImage,
    detector: ScaleSpaceConfig,
    relevance: RelevanceModel,
    n_select: int = 300,
    max_side: int = 640,
    tile_size: int | None = 32,
    workers: int | None = None,
    timings: StageTimings | None = None,
) -> Features:
    timings = timings if timings is not None else StageTimings()
    with timings.stage("detection"):
        img = resize_max_side(img, max_side)
        det = scalespace.detect(img, detector, tile_size=tile_size, workers=workers)
        points = with_center_distance(det.points, img.height, img.width)
    with timings.stage("selection"):
        selected = select_top(points, relevance, n_select) if points else []
    with timings.stage("description"):
        oriented = orient_points(selected, det.octaves, workers)
        raws = describe_batch(det.octaves, oriented, workers)
    return Features(img, points, selected, raws)


def encode_features(
    feats: Features,
    bundle: ModelBundle,
    mode: str = "4K",
    timings: StageTimings | None = None,
    workers: int | None = None,
) -> EncodedImage:
    """Aggregation and local compression run side by side; the global size per mode is fixed in advance."""
    timings = timings if timings is not None else StageTimings()
    g = bundle.gmm
    local_budget = MODE_BUDGETS[mode] - scfv_nbytes(g.n_components, g.dim, mode)

    def aggregate():
        with timings.stage("aggregation"):
            X = pca_reduce(feats.descriptors, bundle.pca)
            GM, GV = fisher_gradients(X, g)
            return scfv_encode(GM, GV, g, mode)

    def compress():
        with timings.stage("compression"):
            codes = []
            if feats.descriptors:
                T = transform_batch(feats.descriptors, bundle.transforms)
                codes = [quantize_ternary(t, bundle.quantizer, mode, raw.point) for t, raw in zip(T, feats.descriptors)]
            # descriptors arrive in relevance order, so truncation drops the least relevant
            local = pack_local(codes, mode, max_bytes=local_budget, m=bundle.quantizer.counts[mode])
            return unpack_local(local)[1]

    global_desc, codes = par_for_items([aggregate, compress], lambda f: f(), workers)
    return EncodedImage(mode, feats.image.width, feats.image.height, bundle.fingerprint(), global_desc, codes)


def encode_image(
    img: GrayImage,
    bundle: ModelBundle,
    mode: str = "4K",
    tile_size: int | None = 32,
    workers: int | None = None,
    timings: StageTimings | None = None,
    max_side: int | None = None,
) -> EncodedImage:
    mode_index(mode)
    timings = timings if timings is not None else StageTimings()
    feats = extract_features(
        img,
        bundle.detector,
        bundle.relevance,
        bundle.encoder.n_select,
        max_side if max_side is not None else bundle.encoder.max_side,
        tile_size,
        workers,
        timings,
    )
    return encode_features(feats, bundle, mode, timings, workers)


def _repeatability_labels(
    img: GrayImage,
    transform: Transform,
    detector: ScaleSpaceConfig,
    max_dist: float = 3.0,
    sigma_ratio: float = 1.5,
) -> tuple[list[InterestPoint], np.ndarray]:
    """Points of ``img`` labelled by whether the transformed image re-detects them."""
    pts = scalespace.detect(img, detector).points
    pts = with_center_distance(pts, img.height, img.width)
    if not pts:
        return [], np.zeros(0, dtype=bool)
    other = scalespace.detect(transform.apply(img), detector).points
    mapped = transform.map_points(np.array([[q.x, q.y] for q in pts]), img.height, img.width)
    if not other:
        return pts, np.zeros(len(pts), dtype=bool)
    oxy = np.array([[q.x, q.y] for q in other])
    osig = np.array([q.sigma for q in other])
    d = np.hypot(mapped[:, None, 0] - oxy[None, :, 0], mapped[:, None, 1] - oxy[None, :, 1])
    ratio = osig[None, :] / (np.array([q.sigma for q in pts])[:, None] * transform.scale)
    ok = (d < max_dist) & (ratio > 1.0 / sigma_ratio) & (ratio < sigma_ratio)
    return pts, ok.any(axis=1)


def training_transform(rng: np.random.Generator) -> Transform:
    return Transform(int(rng.integers(0, 4)), float(rng.uniform(0.7, 1.0)), float(rng.uniform(0.0, 1.0)))


def train_relevance_model(
    images: list[GrayImage], detector: ScaleSpaceConfig | None = None, rng: np.random.Generator | int = 0
) -> RelevanceModel:
    """Relevance tables labelled by re-detection under a random rotation, scale and blur per image."""
    detector = detector or ScaleSpaceConfig()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    stats, labels = [], []
    for img in images:
        pts, lab = _repeatability_labels(img, training_transform(rng), detector)
        stats.extend(pts)
        labels.append(lab)
    if not stats:
        raise ValueError("no interest points detected in the training images")
    y = np.concatenate(labels)
    log.info("relevance tables from %d points (match rate %.3f)", len(stats), y.mean())
    return train_relevance_tables(stats, y)


def train_bundle(
    images: list[GrayImage],
    n_components: int = 64,
    seed: int = 0,
    gmm_iters: int = 30,
    detector: ScaleSpaceConfig | None = None,
    encoder: EncoderSettings | None = None,
    p0: float = 1.0 / 3.0,
    counts: dict | None = None,
) -> ModelBundle:
    """Train every bundle section from a list of images. Deterministic for a given seed."""
    if len(images) < 20:
        raise ValueError(f"training needs at least 20 images, got {len(images)}")
    detector = detector or ScaleSpaceConfig()
    encoder = encoder or EncoderSettings()
    rng = np.random.default_rng(seed)
    images = [resize_max_side(img, encoder.max_side) for img in images]

    relevance = train_relevance_model(images, detector, rng)

    raws = []
    for img in images:
        feats = extract_features(img, detector, relevance, encoder.n_select, encoder.max_side)
        raws.extend(feats.descriptors)
    R = np.array([r.values for r in raws])
    log.info("%d training descriptors", len(R))
    transforms = TransformPair()
    quantizer = train_thresholds(transform_batch(R, transforms), p0, counts or DEFAULT_ELEMENT_COUNTS)
    pca = train_pca(R)
    gmm = train_gmm(pca_reduce(R, pca), n_components, iters=gmm_iters, seed=seed)
    return ModelBundle(pca, gmm, quantizer, relevance, transforms, detector, encoder)


DEFAULT_BUNDLE_PATH = Path(__file__).with_name("data") / "default_bundle.cdvb"
DEFAULT_TRAINING = {"n_images": 24, "corpus_seed": 0, "n_components": 64, "seed": 0, "gmm_iters": 30}


def build_default_bundle() -> ModelBundle:
    """Recreate the shipped bundle from the synthetic corpus."""
    from .synthetic import corpus

    t = DEFAULT_TRAINING
    images = corpus(t["n_images"], t["corpus_seed"])
    return train_bundle(images, t["n_components"], t["seed"], t["gmm_iters"])


@lru_cache(maxsize=1)
def default_bundle() -> ModelBundle:
    return ModelBundle.load(DEFAULT_BUNDLE_PATH)
