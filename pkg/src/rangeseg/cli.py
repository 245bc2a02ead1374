"""``rangeseg`` command line: one binary, one subcommand per pipeline step.

Exit codes: 0 success, 2 usage, 3 config, 4 dataset, 5 pairing,
6 fixture, 7 numeric.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import gradcheck, pipeline, plotting
from .augment import wpd
from .class_stats import ClassStats, published_stats
from .config import load_config
from .errors import ConfigError, DatasetError, NumericError, RangeSegError
from .head import init_params, load_params, save_params
from .kitti_io import PanopticResult, read_labeled_cloud, write_labels, write_point_cloud
from .projection import build_range_image

log = logging.getLogger("rangeseg")


def _add_common(p):
    p.add_argument("--config", type=Path, help="YAML pipeline config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir", type=Path, dest="output_dir")
    p.add_argument("--class-config", type=Path, dest="class_config")


def _add_knn(p):
    p.add_argument("--knn-k", type=int, dest="knn_k")
    p.add_argument("--knn-window", type=int, dest="knn_window")
    p.add_argument("--knn-sigma", type=float, dest="knn_sigma")
    p.add_argument("--knn-cutoff", type=float, dest="knn_cutoff")
    p.add_argument("--no-knn", action="store_false", dest="knn_enabled", default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="rangeseg", description="Range-view LiDAR segmentation toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-class statistics and re-balance weights")
    _add_common(p)
    p.add_argument("--published", action="store_true", help="use the bundled published proportions instead of scanning")
    p.add_argument("--sequences", nargs="*", help="override training sequences")
    p.add_argument("--threshold", type=float, default=0.1, help="long-tail threshold t")
    p.add_argument("--eps", type=float)

    p = sub.add_parser("augment", help="weighted paste/drop on a pair of labeled frames")
    _add_common(p)
    p.add_argument("scan_a", type=Path)
    p.add_argument("label_a", type=Path)
    p.add_argument("scan_b", type=Path)
    p.add_argument("label_b", type=Path)
    p.add_argument("--stats", type=Path, dest="stats_file")
    p.add_argument("--task", choices=("semantic", "panoptic"))
    p.add_argument("--threshold", type=float, dest="augment_t")
    p.add_argument("--mode", choices=("wpd", "paste", "drop", "none"), dest="augment_mode")
    p.add_argument("--no-render", action="store_true")

    for name, task in (("eval-sem", "semantic"), ("eval-pan", "panoptic")):
        p = sub.add_parser(name, help=f"{task} evaluation of label directories")
        _add_common(p)
        p.add_argument("pred_dir", type=Path)
        p.add_argument("gt_dir", type=Path)
        p.set_defaults(task=task)

    p = sub.add_parser("infer-merge", help="head forward, inference merge and post-processing")
    _add_common(p)
    _add_knn(p)
    p.add_argument("fixture", type=Path, help="parameter container")
    p.add_argument("scans", type=Path, nargs="*")
    p.add_argument("--task", choices=("semantic", "panoptic"))
    p.add_argument("--temporal-K", type=int, dest="temporal_k")
    p.add_argument("--temporal-L", type=int, dest="temporal_l")
    p.add_argument("--init-fixture", action="store_true", help="write a random fixture seeded by --seed and exit")

    p = sub.add_parser("postprocess", help="KNN cleaning of stored range-view label maps")
    _add_common(p)
    _add_knn(p)
    p.add_argument("range_label_dir", type=Path, help="directory of <scan>.npy H x W train-id maps")
    p.add_argument("scans", type=Path, nargs="+")

    p = sub.add_parser("loss-audit", help="finite-difference check of every loss kernel")
    _add_common(p)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--inject-sign-flip", action="store_true", help="negate the focal gradient (mutation check)")
    return ap


OVERRIDE_KEYS = (
    "seed",
    "workers",
    "output_dir",
    "class_config",
    "stats_file",
    "task",
    "temporal_k",
    "temporal_l",
    "knn_k",
    "knn_window",
    "knn_sigma",
    "knn_cutoff",
    "knn_enabled",
    "augment_t",
    "augment_mode",
    "eps",
)


def _config(args):
    overrides = {k: getattr(args, k) for k in OVERRIDE_KEYS if getattr(args, k, None) is not None}
    for key in ("knn_k", "knn_window"):
        if key in overrides:
            overrides[key] = int(overrides[key])
    cfg = load_config(args.config, **overrides)
    if cfg.augment.task != cfg.task and "task" in overrides:
        cfg.augment = replace(cfg.augment, task=cfg.task)
    return cfg


def _dump(path, doc):
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def cmd_stats(args, cfg):
    classes = cfg.classes()
    if args.published:
        stats = published_stats(classes, cfg.eps)
    else:
        if cfg.dataset_root is None:
            raise ConfigError("no dataset root: set dataset.root in the config or RANGESEG_DATASET_ROOT")
        seqs = cfg.train_sequences if args.sequences is None else [s.zfill(2) for s in args.sequences]
        pairs = pipeline.dataset_frames(cfg.dataset_root, seqs) if seqs else []
        stats = pipeline.compute_stats(pairs, classes, cfg.eps, cfg.workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = pipeline.stats_rows(stats, args.threshold)
    stats.save(out / "stats.yaml")
    pipeline.write_tsv(out / "stats.tsv", rows, pipeline.STATS_COLUMNS)
    plotting.plot_class_weights(stats, out / "weights.png", args.threshold)
    print(pipeline.format_table(rows, pipeline.STATS_COLUMNS))
    print(f"wrote {out / 'stats.yaml'}, {out / 'stats.tsv'}, {out / 'weights.png'}")
    return 0


def cmd_augment(args, cfg):
    classes = cfg.classes()
    if cfg.stats_file is None or not Path(cfg.stats_file).is_file():
        raise ConfigError(f"stats file {cfg.stats_file} not found; run `rangeseg stats` first and pass --stats")
    stats = ClassStats.load(cfg.stats_file, classes)
    a = read_labeled_cloud(args.scan_a, args.label_a, classes)
    b = read_labeled_cloud(args.scan_b, args.label_b, classes)
    rng = np.random.default_rng(cfg.seed)
    paste_log, drop_log = [], []
    out = wpd(a, b, stats, cfg.augment, rng, paste_log, drop_log)

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.scan_a.stem
    write_point_cloud(out_dir / f"{stem}.bin", out)
    write_labels(out_dir / f"{stem}.label", PanopticResult(out.semantic, out.instance), classes)
    print(f"points\t{len(a)}\t{len(out)}")
    print(f"pasted\t{sum(1 for _, hit in paste_log if hit)}/{len(paste_log)}")
    print(f"dropped_classes\t{sum(1 for _, hit in drop_log if hit)}/{len(drop_log)}")
    if not args.no_render:
        img = build_range_image(out, cfg.geometry, cfg.keep)
        labels = np.zeros(img.shape, dtype=np.int64)
        labels[img.valid] = out.semantic[img.pixel_to_point[img.valid]]
        plotting.render_range_image(img, labels, classes.num_classes, out_dir / f"{stem}.png")
    return 0


def _report_rows(report, task):
    rows = []
    for r in report["classes"]:
        row = {"id": r["id"], "name": r["name"], "iou": r["iou"]}
        if task == "panoptic":
            row.update({k: r[k] for k in ("thing", "pq", "rq", "sq", "tp", "fp", "fn")})
            if not r["present"]:
                row.update(pq=None, rq=None, sq=None)
        rows.append(row)
    return rows


def _fmt(v):
    return None if v is None else (f"{100 * v:.2f}" if isinstance(v, float) else v)


def cmd_eval(args, cfg):
    classes = cfg.classes()
    pairs = pipeline.pair_label_dirs(args.pred_dir, args.gt_dir)
    report = pipeline.evaluate(pairs, classes, args.task, cfg.workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = _report_rows(report, args.task)
    cols = ("id", "name", "iou") if args.task == "semantic" else ("id", "name", "thing", "pq", "rq", "sq", "iou", "tp", "fp", "fn")
    shown = [{k: _fmt(v) for k, v in r.items()} for r in rows]
    _dump(out / f"{args.task}_report.yaml", report)
    pipeline.write_tsv(out / f"{args.task}_report.tsv", rows, cols)
    key = "iou" if args.task == "semantic" else "pq"
    plotting.plot_per_class(rows, key, out / f"{args.task}_{key}.png", title=f"per-class {key}")
    print(pipeline.format_table(shown, cols))
    summary = [k for k in report if k != "classes"]
    for k in summary:
        v = report[k]
        print(f"{k}\t{'-' if v is None else f'{100 * v:.2f}'}")
    return 0


def cmd_infer_merge(args, cfg):
    classes = cfg.classes()
    if args.init_fixture:
        params = init_params(cfg.head, np.random.default_rng(cfg.seed))
        args.fixture.parent.mkdir(parents=True, exist_ok=True)
        save_params(args.fixture, params)
        print(f"wrote fixture {args.fixture} ({len(params)} tensors)")
        return 0
    if not args.scans:
        raise DatasetError("no scans given")
    params = load_params(args.fixture)
    paths = pipeline.infer_merge(cfg, params, args.scans, cfg.output_dir, classes)
    for p in paths:
        print(p)
    return 0


def cmd_postprocess(args, cfg):
    paths = pipeline.postprocess_dir(cfg, args.scans, args.range_label_dir, cfg.output_dir, cfg.classes())
    for p in paths:
        print(p)
    return 0


def cmd_loss_audit(args, cfg):
    rng = np.random.default_rng(cfg.seed)
    worst = {}
    gap = 0.0
    for _ in range(args.instances):
        inst = gradcheck.random_smooth_instance(rng)
        errs = gradcheck.check_instance(inst, gamma=args.gamma, sign_flip_focal=args.inject_sign_flip)
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
        gap = max(gap, gradcheck.focal_ce_gap(inst))
    failed = []
    print("loss\tmax_rel_error\tstatus")
    for k, v in worst.items():
        ok = v < gradcheck.TOLERANCE
        if not ok:
            failed.append(k)
        print(f"{k}\t{v:.3e}\t{'pass' if ok else 'FAIL'}")
    print(f"focal(gamma=0,N) vs cross-entropy\t{gap:.3e}\t{'pass' if gap < 1e-10 else 'FAIL'}")
    if gap >= 1e-10:
        failed.append("focal/ce")
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}")
    return 0


COMMANDS = {
    "stats": cmd_stats,
    "augment": cmd_augment,
    "eval-sem": cmd_eval,
    "eval-pan": cmd_eval,
    "infer-merge": cmd_infer_merge,
    "postprocess": cmd_postprocess,
    "loss-audit": cmd_loss_audit,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except RangeSegError as e:
        print(f"rangeseg: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"rangeseg: DatasetError: {e}", file=sys.stderr)
        return DatasetError.exit_code


if __name__ == "__main__":
    sys.exit(main())
