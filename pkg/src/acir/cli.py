"""Command-line pipelines: ingest, pairs, losscheck, demo-train, encode,
index build/info, calibrate, query, eval.

Results go to stdout (machine-parseable), logs to stderr. Exit status 0 on
success, 1 on error, 2 when a query is gated as out-of-distribution.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gallery
from .codes import sign_quantize
from .config import ENV_CONFIG_PATH, PipelineConfig
from .demo import run_separation_demo
from .encoder import ToyEncoder
from .errors import AcirError, ConfigError, LabelMismatchError
from .evaluation import EvalReport, map_maap, precision_recall_at_radius
from .images import read_image
from .index import GalleryIndex, GalleryRecord
from .loss import (
    LossConfig,
    weighted_contrastive_gradient,
    weighted_contrastive_loss,
)
from .ood import (
    is_ood,
    load_calibration,
    calibrate_threshold,
    reconstruction_residual,
    save_calibration,
)
from .pairing import (
    PairClass,
    classify_pairs,
    consistency_matrix,
    make_fingerprint,
    semantic_similarity_matrix,
    to_luma,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_OOD = 2

IMAGE_SUFFIXES = (".pgm", ".ppm")

log = logging.getLogger("acir")


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("configuration")
    group.add_argument("--config", help=f"JSON config path (default: ${ENV_CONFIG_PATH})")
    group.add_argument("--bits", type=int, help="hash code length in bits")
    group.add_argument("--fingerprint-size", type=int, dest="fingerprint_size",
                       help="fingerprint side length")
    group.add_argument("--neutral-threshold", type=float, dest="neutral_threshold",
                       help="consistency threshold splitting positive from neutral pairs")
    group.add_argument("--alpha", type=float, help="quantisation loss weight")
    group.add_argument("--lambda", type=float, dest="lam", help="quantisation log offset")
    group.add_argument("--epsilon", type=float, dest="eps", help="pair probability clamp")
    group.add_argument("--ood-metric", dest="ood_metric", choices=["l1", "msssim"],
                       help="reconstruction residual metric")
    group.add_argument("--radius", type=int, help="Hamming ball radius (default bits//4 + 1)")
    group.add_argument("--image-size", type=int, dest="image_size",
                       help="encoder input side (multiple of 32)")
    group.add_argument("--seed", type=int, help="seed for deterministic weights")
    group.add_argument("--gallery-dir", dest="gallery_dir", help="gallery directory")
    group.add_argument("--index-path", dest="index_path", help="index file path")
    group.add_argument("--calibration-path", dest="calibration_path",
                       help="calibration file path")
    return parent


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    return cfg.override(
        bits=args.bits,
        fingerprint_size=args.fingerprint_size,
        neutral_threshold=args.neutral_threshold,
        alpha=args.alpha,
        lam=args.lam,
        eps=args.eps,
        ood_metric=args.ood_metric,
        radius=args.radius,
        image_size=args.image_size,
        seed=args.seed,
        gallery_dir=args.gallery_dir,
        index_path=args.index_path,
        calibration_path=args.calibration_path,
    )


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required (flag or config key)")
    return value


def _encode_one(encoder: ToyEncoder, cfg: PipelineConfig, image):
    enc = encoder.encode(image)
    luma = to_luma(image)
    recon = encoder.reconstruct(image)
    residual = reconstruction_residual(luma, recon, cfg.residual_kind())
    fingerprint = make_fingerprint(image, cfg.fingerprint_size)
    return enc, fingerprint, residual


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    images_dir = Path(args.images)
    labels_path = Path(args.labels) if args.labels else images_dir / gallery.LABELS_FILENAME
    out_dir = Path(_require(args.out or cfg.gallery_dir, "--out/--gallery-dir"))
    labels = gallery.read_labels(labels_path)

    image_paths = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    encoder = ToyEncoder(nbits=cfg.bits, seed=cfg.seed, image_size=cfg.image_size)
    ingested = {}
    for path in image_paths:
        rec_id = path.stem
        if rec_id not in labels:
            raise LabelMismatchError(f"no label row for image {path.name}")
        enc, fingerprint, residual = _encode_one(encoder, cfg, read_image(path))
        gallery.save_record_files(
            out_dir, rec_id, enc.embedding, enc.levels, fingerprint, residual
        )
        ingested[rec_id] = labels[rec_id]
        log.info("ingested %s (label %d)", rec_id, labels[rec_id])
    gallery.write_labels(out_dir / gallery.LABELS_FILENAME, ingested)
    print(f"ingested={len(ingested)}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _load_config(args)
    image_path = Path(args.image)
    rec_id = args.id or image_path.stem
    encoder = ToyEncoder(nbits=cfg.bits, seed=cfg.seed, image_size=cfg.image_size)
    enc, fingerprint, residual = _encode_one(encoder, cfg, read_image(image_path))
    gallery.save_record_files(args.out_dir, rec_id, enc.embedding, enc.levels,
                              fingerprint, residual)
    log.info("encoded %s -> %s", image_path.name, args.out_dir)
    print(f"encoded={rec_id}")
    return EXIT_OK


def cmd_pairs(args) -> int:
    cfg = _load_config(args)
    gallery_dir = Path(_require(args.gallery or cfg.gallery_dir, "--gallery"))
    labels = gallery.read_labels(gallery_dir / gallery.LABELS_FILENAME)
    ids = sorted(labels)
    fingerprints = [gallery.load_fingerprint(gallery_dir, i) for i in ids]
    consistency = consistency_matrix(fingerprints)
    semantic = semantic_similarity_matrix([labels[i] for i in ids])
    classes = classify_pairs(semantic, consistency, cfg.neutral_threshold)

    print("id_a\tid_b\tconsistency\tpair_class")
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            print(
                f"{ids[a]}\t{ids[b]}\t{consistency[a, b]:.6f}\t"
                f"{PairClass(classes[a, b]).name.lower()}"
            )
    return EXIT_OK


def _fd_gradient(embeddings, labels, consistency, cfg: LossConfig, step: float):
    grad = np.zeros_like(embeddings)
    for i in range(embeddings.shape[0]):
        for k in range(embeddings.shape[1]):
            plus = embeddings.copy()
            minus = embeddings.copy()
            plus[i, k] += step
            minus[i, k] -= step
            grad[i, k] = (
                weighted_contrastive_loss(plus, labels, consistency, cfg=cfg)
                - weighted_contrastive_loss(minus, labels, consistency, cfg=cfg)
            ) / (2.0 * step)
    return grad


def cmd_losscheck(args) -> int:
    cfg = _load_config(args)
    loss_cfg = cfg.loss_config()
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for batch in range(args.batches):
        b = int(rng.choice([4, 8]))
        k = int(rng.choice([8, 16]))
        labels = np.sort(rng.integers(0, 2, size=b))
        labels[0] = 0
        labels[-1] = 1
        embeddings = rng.uniform(-0.9, 0.9, size=(b, k))
        upper = rng.uniform(0.0, 1.0, size=(b, b))
        consistency = np.triu(upper, 1) + np.triu(upper, 1).T + np.eye(b)

        analytic = weighted_contrastive_gradient(
            embeddings, labels, consistency, cfg=loss_cfg
        )
        numeric = _fd_gradient(embeddings, labels, consistency, loss_cfg, args.step)
        mask = np.abs(analytic) > 1e-8
        rel = np.abs(analytic - numeric)[mask] / np.abs(analytic)[mask]
        batch_worst = float(rel.max()) if rel.size else 0.0
        worst = max(worst, batch_worst)
        log.info("batch=%d B=%d K=%d max_rel_err=%.3e", batch, b, k, batch_worst)
    status = "pass" if worst <= args.tolerance else "fail"
    print(f"batches={args.batches}")
    print(f"worst_rel_err={worst:.6e}")
    print(f"tolerance={args.tolerance:.1e}")
    print(f"status={status}")
    return EXIT_OK if status == "pass" else EXIT_ERROR


def cmd_demo_train(args) -> int:
    cfg = _load_config(args)
    result = run_separation_demo(
        n_classes=args.classes,
        per_class=args.per_class,
        nbits=cfg.bits,
        steps=args.steps,
        lr=args.lr,
        seed=cfg.seed,
        holdout_per_class=args.holdout,
        k=args.k,
    )
    print(f"initial_loss={result.initial_loss:.6f}")
    print(f"final_loss={result.final_loss:.6f}")
    print(f"intra_class_hamming={result.intra_mean:.4f}")
    print(f"inter_class_hamming={result.inter_mean:.4f}")
    print(f"map_at_{args.k}={result.map_at_k:.6f}")
    print(f"separated={'yes' if result.intra_mean < result.inter_mean else 'no'}")
    return EXIT_OK


def _load_gallery_records(gallery_dir: Path) -> list:
    labels = gallery.read_labels(gallery_dir / gallery.LABELS_FILENAME)
    records = []
    for rec_id in sorted(labels):
        embedding = gallery.load_embedding(gallery_dir, rec_id)
        levels = gallery.load_levels(gallery_dir, rec_id)
        records.append(
            GalleryRecord(
                id=rec_id,
                code=sign_quantize(embedding),
                levels=levels,
                label=labels[rec_id],
            )
        )
    return records


def cmd_index(args) -> int:
    cfg = _load_config(args)
    if args.index_cmd == "build":
        gallery_dir = Path(_require(args.gallery or cfg.gallery_dir, "--gallery"))
        out = Path(_require(args.out or cfg.index_path, "--out/--index-path"))
        records = _load_gallery_records(gallery_dir)
        if not records:
            raise ConfigError(f"gallery {gallery_dir} holds no records")
        nbits = records[0].code.nbits
        level_dims = tuple(v.shape[0] for v in records[0].levels)
        index = GalleryIndex(nbits=nbits, level_dims=level_dims)
        for record in records:
            index.add(record)
        index.save(out)
        log.info("indexed %d records -> %s", len(index), out)
        print(f"records={len(index)}")
        return EXIT_OK

    index = GalleryIndex.load(_require(args.index or cfg.index_path, "--index"))
    print(f"bits={index.nbits}")
    print(f"records={len(index)}")
    print(f"level_dims={','.join(str(d) for d in index.level_dims)}")
    print(f"classes={len({r.label for r in index.records})}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    gallery_dir = Path(_require(args.gallery or cfg.gallery_dir, "--gallery"))
    out = Path(_require(args.out or cfg.calibration_path, "--out/--calibration-path"))
    labels = gallery.read_labels(gallery_dir / gallery.LABELS_FILENAME)
    residuals = []
    for rec_id in sorted(labels):
        residual = gallery.load_residual(gallery_dir, rec_id)
        if residual is None:
            raise ConfigError(f"record {rec_id} has no stored residual")
        residuals.append(residual)
    calibration = calibrate_threshold(residuals, cfg.residual_kind())
    save_calibration(out, calibration)
    print(f"metric={calibration.metric.value}")
    print(f"mu={calibration.mu:.6f}")
    print(f"delta={calibration.delta:.6f}")
    print(f"tau={calibration.tau:.6f}")
    print(f"count={calibration.count}")
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _load_config(args)
    index = GalleryIndex.load(_require(args.index or cfg.index_path, "--index"))
    calibration = load_calibration(
        _require(args.calibration or cfg.calibration_path, "--calibration")
    )
    query_path = Path(args.query)

    if query_path.suffix.lower() in IMAGE_SUFFIXES:
        image = read_image(query_path)
        encoder = ToyEncoder(nbits=index.nbits, seed=cfg.seed, image_size=cfg.image_size)
        enc = encoder.encode(image)
        code = sign_quantize(enc.embedding)
        levels = enc.levels
        residual = reconstruction_residual(
            to_luma(image), encoder.reconstruct(image), calibration.metric
        )
    else:
        directory, rec_id = query_path.parent, query_path.name
        embedding = gallery.load_embedding(directory, rec_id)
        code = sign_quantize(embedding)
        levels = gallery.load_levels(directory, rec_id)
        residual = gallery.load_residual(directory, rec_id)
        if residual is None:
            log.warning("no stored residual for %s; skipping the OOD gate", rec_id)

    if residual is not None and is_ood(residual, calibration):
        log.error(
            "query is out-of-distribution (residual %.6f > tau %.6f)",
            residual, calibration.tau,
        )
        print("OOD")
        return EXIT_OOD

    result = index.ranked_retrieve(code, levels, k=args.k, radius=cfg.effective_radius())
    print("rank\tid\thamming\tsimilarity")
    for rank, (rec_id, dist, sim) in enumerate(result.entries, start=1):
        print(f"{rank}\t{rec_id}\t{dist}\t{sim:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    index = GalleryIndex.load(_require(args.index or cfg.index_path, "--index"))
    queries = _load_gallery_records(Path(args.queries))
    mean_ap, macro_ap, per_class = map_maap(queries, index, k=args.k, radius=index.nbits)
    radii = (
        [int(r) for r in args.radii.split(",")] if args.radii
        else [cfg.effective_radius()]
    )
    table = [
        (radius, *precision_recall_at_radius(queries, index, radius))
        for radius in radii
    ]
    report = EvalReport(
        map=mean_ap, maap=macro_ap, per_class_ap=per_class, radius_table=table
    )
    log.info("\n%s", report.render_table())
    print(report.render_keyvalues())
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(
        prog="acir",
        description="Content-based image retrieval with binary hash codes, "
        "Hamming-ball search and out-of-distribution gating.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[parent],
                       help="encode a labelled image corpus into gallery files")
    p.add_argument("--images", required=True, help="directory of PGM/PPM images")
    p.add_argument("--labels", help="labels CSV (default <images>/labels.csv)")
    p.add_argument("--out", help="gallery output directory")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("encode", parents=[parent],
                       help="encode a single image into record files")
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--id", help="record id (default: image stem)")
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("pairs", parents=[parent],
                       help="emit the consistency matrix and pair classes")
    p.add_argument("--gallery", help="gallery directory")
    p.set_defaults(handler=cmd_pairs)

    p = sub.add_parser("losscheck", parents=[parent],
                       help="verify the analytic gradient against finite differences")
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(handler=cmd_losscheck)

    p = sub.add_parser("demo-train", parents=[parent],
                       help="optimise synthetic embeddings and report class separation")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, dest="per_class", default=16)
    p.add_argument("--holdout", type=int, default=4, help="held-out queries per class")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("-k", type=int, default=10, help="retrieval depth for mAP")
    p.set_defaults(handler=cmd_demo_train)

    p = sub.add_parser("index", help="build or inspect an index file")
    index_sub = p.add_subparsers(dest="index_cmd", required=True)
    pb = index_sub.add_parser("build", parents=[parent])
    pb.add_argument("--gallery", help="gallery directory")
    pb.add_argument("--out", help="index output path")
    pb.set_defaults(handler=cmd_index)
    pi = index_sub.add_parser("info", parents=[parent])
    pi.add_argument("--index", help="index file path")
    pi.set_defaults(handler=cmd_index)

    p = sub.add_parser("calibrate", parents=[parent],
                       help="fit the OOD threshold from gallery residuals")
    p.add_argument("--gallery", help="gallery directory")
    p.add_argument("--out", help="calibration output path")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("query", parents=[parent],
                       help="rank gallery records against a query image or record")
    p.add_argument("--index", help="index file path")
    p.add_argument("--calibration", help="calibration file path")
    p.add_argument("--query", required=True,
                   help="query image (.pgm/.ppm) or record path prefix")
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(handler=cmd_query)

    p = sub.add_parser("eval", parents=[parent], help="retrieval quality report")
    p.add_argument("--index", help="index file path")
    p.add_argument("--queries", required=True, help="query gallery directory")
    p.add_argument("-k", type=int, default=100)
    p.add_argument("--radii", help="comma-separated Hamming radii for the sweep")
    p.set_defaults(handler=cmd_eval)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "handler", None):
        parser.print_help(sys.stderr)
        return EXIT_ERROR
    try:
        return args.handler(args)
    except AcirError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
