"""``cdvslite`` command line: train, train-relevance, extract, match, retrieve, pairs, bench, gen-corpus.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench, evaluation, synthetic
from .bundle import BundleError, EncoderSettings, ModelBundle
from .compress import MODES, DecodeError
from .container import ContainerError
from .imaging import ImageFormatError, load_image, save_pgm
from .parallel import WORKERS_ENV, StageTimings, par_for_items
from .pipeline import DEFAULT_BUNDLE_PATH, EncodedImage, encode_image, train_bundle, train_relevance_model
from .scalespace import ScaleSpaceConfig
from .scfv import ModelMismatch

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")
CONTAINER_SUFFIX = ".cdvz"
DATA_ERRORS = (ImageFormatError, BundleError, ContainerError, DecodeError, ModelMismatch, OSError, ValueError)

log = logging.getLogger("cdvslite")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _list_files(paths, suffixes) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in suffixes))
        elif p.exists():
            out.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    return out


def _detector_config(args) -> ScaleSpaceConfig:
    cfg = ScaleSpaceConfig()
    if args.detector_config:
        cfg = ScaleSpaceConfig.from_text(Path(args.detector_config).read_text())
    overrides = {
        k: getattr(args, k)
        for k in ("num_octaves", "response_threshold", "edge_ratio", "max_offset")
        if getattr(args, k) is not None
    }
    return replace(cfg, **overrides)


def cmd_train(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise UsageError(f"corpus directory not found: {corpus}")
    files = _list_files([corpus], IMAGE_SUFFIXES)
    images = [load_image(f) for f in files]
    if len(images) < 20:
        raise ValueError(f"training needs at least 20 images, found {len(images)} in {corpus}")
    bundle = train_bundle(
        images,
        n_components=args.components,
        seed=args.seed,
        gmm_iters=args.gmm_iters,
        detector=_detector_config(args),
        encoder=EncoderSettings(n_select=args.n_select, max_side=args.max_side),
    )
    bundle.save(args.output)
    print(f"wrote {args.output} (model id {bundle.fingerprint():08x}, {len(images)} images)")
    return EXIT_OK


def cmd_train_relevance(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise UsageError(f"corpus directory not found: {corpus}")
    images = [load_image(f) for f in _list_files([corpus], IMAGE_SUFFIXES)]
    if not images:
        raise ValueError(f"no images in {corpus}")
    model = train_relevance_model(images, rng=args.seed)
    Path(args.output).write_text(model.to_text())
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_extract(args) -> int:
    bundle = ModelBundle.load(args.model)
    files = _list_files(args.images, IMAGE_SUFFIXES)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = StageTimings()
    # images in parallel when there are several, stages in parallel for a single one
    inner = args.workers if len(files) <= 1 else 1

    def work(f):
        try:
            img = load_image(f)
            enc = encode_image(img, bundle, args.mode, args.tile_size, inner, timings, max_side=args.max_side)
            return enc, None
        except DATA_ERRORS as exc:
            return None, exc

    failed = 0
    for f, (enc, exc) in zip(files, par_for_items(files, work, args.workers)):
        if exc is not None:
            failed += 1
            print(f"error: {f}: {exc}", file=sys.stderr)
            continue
        data = enc.to_bytes()
        target = out_dir / (f.stem + CONTAINER_SUFFIX)
        target.write_bytes(data)
        print(f"{f} -> {target} ({len(data)} bytes, {len(enc.codes)} local codes)")
    if args.timings:
        Path(args.timings).write_text(timings.to_csv())
    return EXIT_DATA if failed else EXIT_OK


def _load_encoded(path, bundle) -> EncodedImage:
    return EncodedImage.from_bytes(Path(path).read_bytes(), bundle)


def cmd_match(args) -> int:
    bundle = ModelBundle.load(args.model)
    a, b = _load_encoded(args.a, bundle), _load_encoded(args.b, bundle)
    res = evaluation.match_pair(a, b)
    print(f"global_similarity {res.global_similarity:.6f}")
    print(f"local_match_count {res.local_match_count}")
    return EXIT_OK


def _load_dir(paths, bundle) -> dict[str, EncodedImage]:
    return {p.stem: _load_encoded(p, bundle) for p in _list_files(paths, (CONTAINER_SUFFIX,))}


def cmd_retrieve(args) -> int:
    bundle = ModelBundle.load(args.model)
    queries = _load_dir(args.queries, bundle)
    index = _load_dir([args.index], bundle)
    if not queries or not index:
        raise ValueError("need at least one query and one indexed container")
    ranked = evaluation.retrieve_all(queries, index, depth=args.depth, workers=args.workers)
    for r in ranked:
        print(f"{r.query_id}: " + " ".join(r.ids[: args.show]))
    if args.out:
        evaluation.export_rankings(args.out, ranked)
    if args.ground_truth:
        gt = evaluation.read_ground_truth(args.ground_truth)
        m = evaluation.compute_map(ranked, gt)
        top = evaluation.top_match_accuracy(ranked, gt)
        print(f"mAP {m:.6f}")
        print(f"top_match {top:.6f}")
    return EXIT_OK


def cmd_pairs(args) -> int:
    bundle = ModelBundle.load(args.model)
    pairs = evaluation.read_pairs(args.pairs)
    store = _load_dir([args.dir], bundle)
    scores, labels = [], []
    for a, b, y in pairs:
        if a not in store or b not in store:
            raise ValueError(f"pair ({a}, {b}) references a missing container")
        res = evaluation.match_pair(store[a], store[b])
        scores.append(res.local_match_count + 0.999 * (res.global_similarity + 1.0) / 2.0)
        labels.append(y)
    curve = evaluation.compute_roc(scores, labels)
    if args.out:
        evaluation.export_roc(args.out, curve)
    print(f"TPR@FPR=0.01 {curve.tpr_at_fpr(0.01):.6f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    bundle = ModelBundle.load(args.model)
    files = _list_files([args.images], IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no images in {args.images}")
    images = [load_image(f) for f in files]
    timings = bench.stage_profile(images, bundle, args.mode, args.workers, args.tile_size)
    csv_text = timings.to_csv()
    print(csv_text, end="")
    if args.out:
        Path(args.out).write_text(csv_text)
    agg = bench.aggregation_comparison(n=300, n_components=512)
    print(f"{agg.label}: naive {agg.baseline_s * 1e3:.2f} ms, matrix {agg.candidate_s * 1e3:.2f} ms, {agg.speedup:.2f}x")
    det = bench.detection_scaling(images[0], workers=args.scaling_workers)
    print(f"{det.label}: {det.baseline_s * 1e3:.2f} ms vs {det.candidate_s * 1e3:.2f} ms, {det.speedup:.2f}x")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    out = Path(args.out_dir)
    paths = synthetic.write_corpus(out / "images", args.count, args.seed, args.height, args.width)
    if args.queries:
        tr = synthetic.Transform(args.quarter_turns, args.scale, args.blur)
        qdir = out / "queries"
        qdir.mkdir(parents=True, exist_ok=True)
        rows = []
        for p in paths:
            save_pgm(tr.apply(load_image(p)), qdir / p.name)
            rows.append((p.stem, p.stem))
        evaluation.export_csv(out / "ground_truth.csv", ("query_id", "relevant_id"), rows)
    print(f"wrote {len(paths)} images to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cdvslite", description="Compact visual descriptor encoder and retrieval evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def engine(sp):
        sp.add_argument("--workers", type=int, default=None, help=f"worker threads (default: ${WORKERS_ENV} or CPU count)")
        sp.add_argument("--tile-size", type=int, default=32)

    sp = sub.add_parser("train", help="train a model bundle from a directory of images")
    sp.add_argument("corpus")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--components", type=int, default=64, help="GMM components")
    sp.add_argument("--gmm-iters", type=int, default=30)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-side", type=int, default=640)
    sp.add_argument("--n-select", type=int, default=300, help="interest points kept per image")
    sp.add_argument("--detector-config", help="key = value file of detector settings")
    sp.add_argument("--num-octaves", type=int)
    sp.add_argument("--response-threshold", type=float)
    sp.add_argument("--edge-ratio", type=float)
    sp.add_argument("--max-offset", type=float)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("train-relevance", help="train only the relevance tables (text format)")
    sp.add_argument("corpus")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train_relevance)

    sp = sub.add_parser("extract", help="encode images into containers")
    sp.add_argument("images", nargs="+")
    sp.add_argument("--model", default=str(DEFAULT_BUNDLE_PATH), help="model bundle (default: the shipped one)")
    sp.add_argument("--mode", choices=MODES, default="4K")
    sp.add_argument("-o", "--out-dir", required=True)
    sp.add_argument("--max-side", type=int, default=None)
    sp.add_argument("--timings", help="write the per-stage timing CSV here")
    engine(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("match", help="match two containers")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--model", default=str(DEFAULT_BUNDLE_PATH), help="model bundle (default: the shipped one)")
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("retrieve", help="rank an index of containers for each query")
    sp.add_argument("queries", nargs="+")
    sp.add_argument("--index", required=True)
    sp.add_argument("--model", default=str(DEFAULT_BUNDLE_PATH), help="model bundle (default: the shipped one)")
    sp.add_argument("--ground-truth")
    sp.add_argument("--out", help="rankings CSV")
    sp.add_argument("--depth", type=int, default=evaluation.RERANK_DEPTH)
    sp.add_argument("--show", type=int, default=5)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_retrieve)

    sp = sub.add_parser("pairs", help="ROC over labelled container pairs")
    sp.add_argument("pairs", help="CSV of id_a,id_b,label")
    sp.add_argument("--dir", required=True, help="directory of containers named <id>.cdvz")
    sp.add_argument("--model", default=str(DEFAULT_BUNDLE_PATH), help="model bundle (default: the shipped one)")
    sp.add_argument("--out", help="ROC CSV")
    sp.set_defaults(func=cmd_pairs)

    sp = sub.add_parser("bench", help="per-stage timing table and aggregation comparison")
    sp.add_argument("images")
    sp.add_argument("--model", default=str(DEFAULT_BUNDLE_PATH), help="model bundle (default: the shipped one)")
    sp.add_argument("--mode", choices=MODES, default="4K")
    sp.add_argument("--out", help="timing CSV")
    sp.add_argument("--scaling-workers", type=int, default=4)
    engine(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("gen-corpus", help="write a synthetic corpus (and optional transformed queries)")
    sp.add_argument("out_dir")
    sp.add_argument("--count", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--height", type=int, default=240)
    sp.add_argument("--width", type=int, default=320)
    sp.add_argument("--queries", action="store_true", help="also write transformed queries and ground truth")
    sp.add_argument("--quarter-turns", type=int, default=1)
    sp.add_argument("--scale", type=float, default=0.75)
    sp.add_argument("--blur", type=float, default=0.7)
    sp.set_defaults(func=cmd_gen_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for name in ("workers", "tile_size", "max_side", "n_select", "components", "count"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            print(f"error: --{name.replace('_', '-')} must be positive", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error exit code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
