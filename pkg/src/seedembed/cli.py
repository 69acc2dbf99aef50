"""Command-line frontend.

Subcommands: ``cluster``, ``eval``, ``fit-demo``, ``crops`` and ``diag``.
Reports are line-oriented ``key=value`` records; the first records echo the
resolved configuration. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import glob
import os
import shlex
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .augment import back_transform_and_average, group_for
from .centers import CenterKind
from .dataio import (CropSpec, min_object_size_from, object_centered_crops, read_labels, read_tensor,
                     synth_blobs, write_labels, write_tensor)
from .embedding import ClusteringParams, cluster, embed_all, instances_to_labels
from .errors import FitDivergedError, SegError
from .evaluation import ap_dsb, default_thresholds
from .fitting import FitSchedule, direct_fit
from .grid import FieldStack
from .losses import LossWeights, total_loss

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# direct fitting moves free per-voxel parameters, not shared CNN weights,
# so it needs a far larger step than the 5e-4 training default
FIT_DEMO_BASE_LR = 200.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    # values with whitespace are shell-quoted so each line splits with shlex
    return shlex.quote(str(v))


class Report:
    def __init__(self, path: str | None):
        self.path = path
        self.lines: list[str] = []

    def record(self, kind: str, **fields):
        parts = [f"record={kind}"] + [f"{k}={_fmt(v)}" for k, v in fields.items()]
        self.lines.append(" ".join(parts))

    def flush(self):
        text = "\n".join(self.lines) + "\n"
        if self.path:
            with open(self.path, "w") as fh:
                fh.write(text)
        sys.stdout.write(text)


def _config_record(report: Report, args: argparse.Namespace):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",) and v is not None}
    report.record("config", **{k: (os.fspath(v) if isinstance(v, os.PathLike) else v) for k, v in cfg.items()})


def _load_fieldstack(path: str) -> FieldStack:
    return FieldStack.from_array(read_tensor(path))


def _clustering_params(args) -> ClusteringParams:
    return ClusteringParams(s_fg=args.s_fg, s_min=args.s_min, phi_threshold=args.phi_thresh,
                            min_object_size=args.min_size_value, size_measure=args.size_measure)


def _resolve_min_size(args):
    spec = args.min_size
    if spec.startswith("auto:"):
        src = spec[5:]
        paths = sorted(p for ext in ("*.eseg", "*.tif", "*.tiff") for p in glob.glob(os.path.join(src, ext)))
        if not paths:
            raise UsageError(f"--min-size auto: no label files found in {src}")
        args.min_size_value = min_object_size_from([read_labels(p) for p in paths], args.size_measure)
    else:
        try:
            args.min_size_value = int(spec)
        except ValueError:
            raise UsageError(f"--min-size expects an integer or auto:<dir>, got {spec!r}")
        if args.min_size_value < 0:
            raise UsageError("--min-size must be non-negative")


def cmd_cluster(args) -> int:
    _resolve_min_size(args)
    stacks = [_load_fieldstack(p) for p in args.fields]
    if args.tta:
        group = group_for(2 if args.tta == "2d" else 3)
        if stacks[0].ndim != group[0].ndim:
            raise UsageError(f"--tta {args.tta} given for {stacks[0].ndim}D fields")
        if len(stacks) != len(group):
            raise UsageError(f"--tta {args.tta} expects {len(group)} field stacks (one per group element), "
                             f"got {len(stacks)}")
        fs = back_transform_and_average(stacks, group)
    else:
        if len(stacks) != 1:
            raise UsageError("several --fields given without --tta")
        fs = stacks[0]
    params = _clustering_params(args)
    instances = cluster(fs, params)
    labels = instances_to_labels(instances, fs.shape, dtype=np.uint32)
    write_labels(args.out, labels)
    report = Report(args.report)
    _config_record(report, args)
    report.record("summary", instances=len(instances), shape=list(fs.shape), out=args.out)
    for inst in instances:
        report.record("instance", label=inst.label, voxels=len(inst.pixels), seed_score=inst.seed_score,
                      sigma_k=list(inst.sigma_k), center=list(inst.center))
    report.flush()
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = read_labels(args.gt)
    pred = read_labels(args.pred)
    dim = args.dim or gt.ndim
    thresholds = args.thresholds or default_thresholds(dim)
    if any(not 0.0 < t < 1.0 for t in thresholds):
        raise UsageError("thresholds must lie in (0, 1)")
    curve = ap_dsb(gt, pred, thresholds)
    args.thresholds = list(curve.thresholds)
    args.dim = dim
    report = Report(args.report)
    _config_record(report, args)
    for t, s in zip(curve.thresholds, curve.scores):
        report.record("ap", threshold=float(t), score=float(s))
    report.record("mean", score=curve.mean, std=float(np.std(curve.scores)))
    report.flush()
    return EXIT_OK


def cmd_fit_demo(args) -> int:
    shape = tuple(args.shape)
    labels = synth_blobs(shape, args.objects, (args.min_radius, args.max_radius), seed=args.seed)
    weights = LossWeights(args.w_seed, args.w_iou, args.w_var, args.w_fg, args.w_bg)
    init = FieldStack.constant(shape)
    report = Report(args.report)
    _config_record(report, args)
    if args.epochs == 0:
        rep = total_loss(init, labels, args.center, weights)
        report.record("loss", epoch=0, total=rep.total, seed=rep.seed_term, iou=rep.iou_term, var=rep.var_term)
        fs = init
    else:
        schedule = FitSchedule(args.base_lr, args.epochs, args.power, args.steps_per_epoch)
        try:
            result = direct_fit(labels, init, weights, args.center, schedule,
                                seed_through_phi=not args.detach_seed_target)
        except FitDivergedError as exc:
            for r in exc.trace:
                report.record("loss", **r)
            report.record("error", message=str(exc))
            report.flush()
            return EXIT_NUMERIC
        for r in result.loss_trace:
            report.record("loss", **r)
        fs = result.final_fieldstack
    instances = cluster(fs, ClusteringParams())
    pred = instances_to_labels(instances, shape)
    curve = ap_dsb(labels, pred)
    for t, s in zip(curve.thresholds, curve.scores):
        report.record("ap", threshold=float(t), score=float(s))
    report.record("mean", score=curve.mean, instances=len(instances), objects=args.objects)
    report.flush()
    return EXIT_OK


def cmd_crops(args) -> int:
    labels = read_labels(args.labels)
    raw = read_tensor(args.raw) if args.raw else None
    crops = object_centered_crops(labels, CropSpec(tuple(args.crop), CenterKind(args.center)), raw)
    os.makedirs(args.out_dir, exist_ok=True)
    report = Report(args.report)
    _config_record(report, args)
    for c in crops:
        name = os.path.join(args.out_dir, f"crop_{c.label:05d}_labels.eseg")
        write_tensor(name, c.labels)
        if c.raw is not None:
            write_tensor(os.path.join(args.out_dir, f"crop_{c.label:05d}_raw.eseg"), c.raw.astype(np.float32))
        report.record("crop", label=c.label, start=list(c.start), stop=list(c.stop), file=name)
    report.record("summary", crops=len(crops))
    report.flush()
    return EXIT_OK


def cmd_diag(args) -> int:
    fs = _load_fieldstack(args.fields)
    _resolve_min_size(args)
    instances, masks = cluster(fs, _clustering_params(args), return_trace=True)
    os.makedirs(args.out_dir, exist_ok=True)
    emb = embed_all(fs)
    write_tensor(os.path.join(args.out_dir, "embeddings.eseg"), emb.astype(np.float32))
    write_tensor(os.path.join(args.out_dir, "seeds.eseg"), fs.seeds.astype(np.float32))
    acc = np.zeros((len(masks),) + fs.shape, dtype=np.uint16)
    for i, m in enumerate(masks):
        acc[i][m] = 1
    write_tensor(os.path.join(args.out_dir, "acceptance.eseg"), acc)
    write_tensor(os.path.join(args.out_dir, "labels.eseg"), instances_to_labels(instances, fs.shape, np.uint16))
    report = Report(args.report)
    _config_record(report, args)
    fg = fs.seeds > args.s_fg
    report.record("summary", foreground=int(fg.sum()), seeds_used=len(masks), instances=len(instances))
    for inst in instances:
        pts = emb[(slice(None),) + tuple(inst.pixels.T)]
        spread = float(np.abs(pts - pts.mean(axis=1, keepdims=True)).max()) if pts.size else 0.0
        report.record("instance", label=inst.label, voxels=len(inst.pixels), seed_score=inst.seed_score,
                      seed_pixel=list(inst.seed_pixel), embedding_spread=spread)
    report.flush()
    return EXIT_OK


def _add_clustering_flags(p):
    p.add_argument("--s-fg", type=float, default=0.5, help="foreground seediness threshold (default 0.5)")
    p.add_argument("--s-min", type=float, default=0.9, help="minimum seed seediness (default 0.9)")
    p.add_argument("--phi-thresh", type=float, default=0.5, help="membership threshold (default 0.5)")
    p.add_argument("--min-size", default="0",
                   help="drop instances smaller than N voxels, or auto:<dir> to use the smallest GT object")
    p.add_argument("--size-measure", choices=["total", "interior"], default="total",
                   help="how instance and GT sizes are measured for --min-size (default total)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seedembed", description="Embedding-based instance segmentation engine.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cluster", help="cluster prediction maps into instances")
    p.add_argument("--fields", nargs="+", required=True,
                   help="ESEG float stacks (2D+1 channels: offsets, sigmas, seeds); one per TTA element")
    p.add_argument("--out", required=True, help="output label volume (.tif/.tiff or ESEG)")
    p.add_argument("--tta", choices=["2d", "3d"], help="back-transform and average 8 (2d) or 16 (3d) stacks")
    p.add_argument("--report", help="also write the report to this file")
    _add_clustering_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="AP_dsb of a prediction against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--thresholds", type=float, nargs="+")
    p.add_argument("--dim", type=int, choices=[2, 3], help="pick the default threshold sweep")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit-demo", help="fit prediction maps directly to a synthetic blob image")
    p.add_argument("--shape", type=int, nargs="+", default=[64, 64])
    p.add_argument("--objects", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-radius", type=float, default=4.0)
    p.add_argument("--max-radius", type=float, default=8.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--steps-per-epoch", type=int, default=10)
    p.add_argument("--base-lr", type=float, default=FIT_DEMO_BASE_LR)
    p.add_argument("--power", type=float, default=0.9)
    p.add_argument("--center", choices=[k.value for k in CenterKind], default="medoid")
    p.add_argument("--w-seed", type=float, default=1.0)
    p.add_argument("--w-iou", type=float, default=1.0)
    p.add_argument("--w-var", type=float, default=10.0)
    p.add_argument("--w-fg", type=float, default=10.0)
    p.add_argument("--w-bg", type=float, default=1.0)
    p.add_argument("--detach-seed-target", action="store_true",
                   help="treat phi as a constant target in the seed term")
    p.add_argument("--report")
    p.set_defaults(func=cmd_fit_demo)

    p = sub.add_parser("crops", help="object-centred crops of a label volume")
    p.add_argument("--labels", required=True)
    p.add_argument("--raw", help="optional ESEG raster cropped alongside")
    p.add_argument("--crop", type=int, nargs="+", required=True)
    p.add_argument("--center", choices=[k.value for k in CenterKind], default="medoid")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_crops)

    p = sub.add_parser("diag", help="dump embeddings, seeds and per-seed acceptance masks")
    p.add_argument("--fields", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report")
    _add_clustering_flags(p)
    p.set_defaults(func=cmd_diag)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"seedembed: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SegError, OSError) as exc:
        print(f"seedembed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as exc:
        print(f"seedembed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"seedembed: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
