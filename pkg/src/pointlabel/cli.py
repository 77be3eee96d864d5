"""Command-line pipeline driver.

Subcommands: preprocess, train, predict, evaluate, raster2points. Every
run writes a key=value manifest next to its artifacts recording the
command, configuration, input digests, seed and timings; artifacts
themselves are bit-reproducible for identical inputs and seeds.
"""

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, blocks as blk, infer, io as pio, network, training

FEATURE_COLUMNS = {
    "both": None,                    # all 9 feature columns
    "xyz": [0, 1, 2, 6, 7, 8],       # centered + scene-normalized coordinates
    "spectral": [3, 4, 5],
}
WIDTH_TO_FEATURES = {9: "both", 6: "xyz", 3: "spectral"}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, settings, inputs, timings):
    lines = [f"command={command}", f"version={__version__}"]
    for k in sorted(settings):
        lines.append(f"{k}={settings[k]}")
    for p in inputs:
        lines.append(f"digest.{Path(p).name}={_sha256(p)}")
    for k, v in timings.items():
        lines.append(f"timing.{k}={v:.3f}s")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# block store (preprocess output, train input)

def write_block_store(out_dir, cloud, all_blocks, scales):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pio.save_points(out_dir / "points.txt", cloud)
    tensors = []
    for i, b in enumerate(all_blocks):
        tensors.append((f"b{i}.features", b.features))
        # float32 carries indices exactly up to 2^24 (~16.7M points)
        tensors.append((f"b{i}.parent", b.parent_idx.astype(np.float32)))
        if b.labels is not None:
            tensors.append((f"b{i}.labels", b.labels.astype(np.float32)))
    from .container import write_container_file
    offsets = write_container_file(out_dir / "blocks.bin", len(all_blocks), tensors)
    lines = ["scales " + ",".join(f"{s.size:g}:{s.overlap:g}:{s.sample_count}"
                                  for s in scales)]
    for i, b in enumerate(all_blocks):
        lines.append(f"{b.scale_id} {b.origin_x!r} {b.origin_y!r} {b.size!r} "
                     f"{b.sample_count} {b.replica} {offsets[f'b{i}.features']}")
    (out_dir / "blocks.manifest").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")


def read_block_store(in_dir):
    in_dir = Path(in_dir)
    from .container import read_container_file
    _, tensors = read_container_file(in_dir / "blocks.bin")
    lines = (in_dir / "blocks.manifest").read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("scales "):
        raise pio.ParseError("blocks.manifest: missing scales line")
    scales = infer.ScaleConfig.parse(lines[0][len("scales "):])
    out = []
    for i, line in enumerate(lines[1:]):
        f = line.split()
        labels = tensors.get(f"b{i}.labels")
        out.append(blk.Block(
            origin_x=float(f[1]), origin_y=float(f[2]), size=float(f[3]),
            scale_id=int(f[0]),
            features=tensors[f"b{i}.features"],
            parent_idx=tensors[f"b{i}.parent"].reshape(-1).astype(np.int64),
            labels=None if labels is None else labels.reshape(-1).astype(np.int32),
            replica=int(f[5])))
    return out, scales


# ---------------------------------------------------------------------------
# subcommands

def cmd_preprocess(args):
    t0 = time.perf_counter()
    columns = args.columns.split(",") if args.columns else None
    cloud = pio.load_points(args.points, columns=columns)
    image = pio.read_ppm_image(args.image)
    cloud = blk.attribute_spectral(cloud, image)
    inputs = [args.points, args.image]
    if not args.no_dtm:
        dtm = pio.read_ascii_grid(args.dtm)
        cloud = blk.normalize_height(cloud, dtm)
        inputs.append(args.dtm)
    t1 = time.perf_counter()
    scales = infer.ScaleConfig.parse(args.scales)
    all_blocks = blk.build_blocks(cloud, scales, args.seed, training=True,
                                  augment_copies=args.augment)
    t2 = time.perf_counter()
    write_block_store(args.out, cloud, all_blocks, scales)
    write_manifest(Path(args.out) / "run_manifest.txt", "preprocess",
                   {"seed": args.seed, "scales": args.scales,
                    "augment": args.augment, "no_dtm": args.no_dtm,
                    "points": len(cloud), "blocks": len(all_blocks)},
                   inputs, {"attribution": t1 - t0, "blocking": t2 - t1})
    print(f"preprocess: {len(cloud)} points -> {len(all_blocks)} blocks "
          f"in {args.out}")
    return 0


def cmd_train(args):
    t0 = time.perf_counter()
    all_blocks, store_scales = read_block_store(args.blocks)
    if args.scales:
        wanted = infer.ScaleConfig.parse(args.scales)
        keep_ids = {i for i, s in enumerate(store_scales) if s in wanted}
        if not keep_ids:
            raise ValueError(f"--scales {args.scales} matches none of the "
                             f"stored scales")
        all_blocks = [b for b in all_blocks if b.scale_id in keep_ids]
    if any(b.labels is None for b in all_blocks):
        raise ValueError("training blocks must carry labels")
    cols = FEATURE_COLUMNS[args.features]
    config = training.TrainConfig(
        lr_initial=args.lr, batch_size=args.batch, epoch_total=args.epochs,
        patience=args.patience, val_fraction=args.val_fraction, seed=args.seed)
    originals = [b for b in all_blocks if b.replica == 0]
    replicas = [b for b in all_blocks if b.replica != 0]
    train_set, val_set = training.stratified_split(
        originals, config.val_fraction, config.seed)
    train_set = training.balance_classes(train_set + replicas)
    t1 = time.perf_counter()
    result = training.fit(train_set, val_set, config, feature_columns=cols,
                          n_classes=args.classes)
    t2 = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    network.save_checkpoint(out / "model.ckpt", result.params)
    (out / "history.csv").write_text(result.history_csv(), encoding="utf-8")
    write_manifest(out / "run_manifest.txt", "train",
                   {"seed": args.seed, "features": args.features,
                    "epochs": args.epochs, "lr": args.lr, "batch": args.batch,
                    "patience": args.patience, "val_fraction": args.val_fraction,
                    "classes": args.classes, "scales": args.scales or "all",
                    "train_blocks": len(train_set), "val_blocks": len(val_set),
                    "best_epoch": result.best_epoch,
                    "parameters": network.param_count(result.params),
                    "diverged": result.diverged},
                   [Path(args.blocks) / "blocks.bin"],
                   {"load": t1 - t0, "fit": t2 - t1})
    last = result.history[-1] if result.history else None
    print(f"train: best epoch {result.best_epoch}, "
          f"val_loss {last.val_loss:.4f}, val_acc {last.val_acc:.4f}"
          if last else "train: no epochs completed")
    return 0


def cmd_predict(args):
    t0 = time.perf_counter()
    cloud = pio.load_points(args.points)
    params = network.load_checkpoint(args.model)
    in_width = params.encoder_specs[0].in_width
    mode = WIDTH_TO_FEATURES.get(in_width)
    if mode is None:
        raise ValueError(f"checkpoint input width {in_width} matches no known "
                         f"feature set (9=both, 6=xyz, 3=spectral)")
    if mode != "xyz" and not cloud.has_spectral:
        raise ValueError("model needs spectral features but the points file "
                         "has none")
    if not cloud.has_spectral:
        cloud = pio.PointCloud(cloud.xyz, np.zeros((len(cloud), 3)), cloud.labels)
    scales = infer.ScaleConfig.parse(args.scales)
    labels, probs = infer.predict(cloud, params, scales, seed=args.seed,
                                  feature_columns=FEATURE_COLUMNS[mode],
                                  threads=args.threads)
    t1 = time.perf_counter()
    pio.save_points(args.out, cloud, labels=labels)
    if args.probs:
        with open(args.probs, "w", encoding="utf-8") as fh:
            for row in probs:
                fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")
    write_manifest(str(args.out) + ".manifest", "predict",
                   {"seed": args.seed, "scales": args.scales,
                    "threads": args.threads, "features": mode,
                    "points": len(cloud)},
                   [args.points, args.model], {"predict": t1 - t0})
    print(f"predict: labeled {len(cloud)} points -> {args.out}")
    return 0


def cmd_evaluate(args):
    pred = pio.load_points(args.pred)
    truth = pio.load_points(args.truth)
    if not pred.has_labels or not truth.has_labels:
        raise ValueError("both point files must carry labels")
    if len(pred) != len(truth):
        raise ValueError(f"point counts differ: {len(pred)} vs {len(truth)}")
    report = infer.evaluate(pred.labels, truth.labels, n_classes=args.classes)
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    print(report.render(), end="")
    return 0


def cmd_raster2points(args):
    dsm = pio.read_ascii_grid(args.dsm)
    image = pio.read_ppm_image(args.image)
    cloud = blk.raster_to_points(dsm, image)
    pio.save_points(args.out, cloud)
    write_manifest(str(args.out) + ".manifest", "raster2points",
                   {"points": len(cloud)}, [args.dsm, args.image], {})
    print(f"raster2points: {len(cloud)} points -> {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="pointlabel",
        description="semantic labeling of 3D point clouds with a 1D "
                    "fully-convolutional network")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="attribute, normalize and tile a scene")
    sp.add_argument("--points", required=True)
    sp.add_argument("--image", required=True, help="P3 PPM with .wld sidecar")
    sp.add_argument("--dtm", help="ESRI ASCII grid of terrain heights")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--no-dtm", action="store_true",
                    help="keep absolute heights (skip terrain normalization)")
    sp.add_argument("--scales", default="2:1:1024,5:2:3072,10:2:4096")
    sp.add_argument("--augment", type=int, default=0,
                    help="rotated+jittered scene replicas to add")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--columns",
                    help="raw column layout, e.g. x,y,z,-,-,label to skip "
                         "intensity and return-count columns")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="fit the network on preprocessed blocks")
    sp.add_argument("--blocks", required=True, help="preprocess output directory")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--features", choices=sorted(FEATURE_COLUMNS), default="both")
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--lr", type=float, default=0.001)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--scales", default="",
                    help="train on this subset of the stored scales")
    sp.add_argument("--patience", type=int, default=3)
    sp.add_argument("--val-fraction", type=float, default=0.25)
    sp.add_argument("--classes", type=int, default=9)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="label a preprocessed point file")
    sp.add_argument("--points", required=True,
                    help="point file (spectral columns required unless the "
                         "model is coordinates-only)")
    sp.add_argument("--model", required=True, help="checkpoint file")
    sp.add_argument("--out", required=True, help="labeled output point file")
    sp.add_argument("--scales", default="2:1:1024,5:2:3072,10:2:4096")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--probs", help="also write per-class probabilities here")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="score predicted labels against truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--out", required=True, help="CSV report path")
    sp.add_argument("--classes", type=int, default=9)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("raster2points",
                        help="restructure DSM+image rasters as a point array")
    sp.add_argument("--dsm", required=True, help="ESRI ASCII grid")
    sp.add_argument("--image", required=True, help="P3 PPM with .wld sidecar")
    sp.add_argument("--out", required=True, help="output point file")
    sp.set_defaults(func=cmd_raster2points)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "preprocess" and not args.no_dtm and not args.dtm:
        parser.error("preprocess needs --dtm unless --no-dtm is given")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
