"""Command-line entry point exposing the pipeline as composable subcommands.

Exit codes: 0 success, 1 usage error, 2 data error, 3 plugin/protocol
error.  Diagnostics go to stderr; reports go to files or stdout.  Every
run that produces file artifacts also writes a resolved-config JSON next
to its primary output so the run can be reproduced bit for bit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from mpseg import distance, metrics, multiplanar, phantom, postprocess, preprocess, segmenter
from mpseg.errors import DataError, MpsegError, ProtocolError
from mpseg.volume import LabelVolume, Volume, read_volume, write_volume


class UsageError(MpsegError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_config(path: str, args: argparse.Namespace, **extra) -> None:
    doc = {k: v for k, v in vars(args).items()
           if k != "func" and isinstance(v, (str, int, float, bool, type(None)))}
    doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_path_for(out_path: str) -> str:
    return out_path + ".config.json"


def _read_intensity(path: str) -> Volume:
    v = read_volume(path)
    if not isinstance(v, Volume):
        raise DataError(f"{path} is not an intensity volume")
    return v


def _read_labels(path: str) -> LabelVolume:
    v = read_volume(path)
    if not isinstance(v, LabelVolume):
        raise DataError(f"{path} is not a label volume")
    return v


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise UsageError(f"expected three numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _emit_report(text: str, out: str | None, args) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_config(_config_path_for(out), args)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_phantom(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = phantom.PhantomSpec.from_json(fh.read())
    if args.seed is not None:
        spec = phantom.PhantomSpec(
            dims=spec.dims, shapes=spec.shapes, spacing_mm=spec.spacing_mm,
            origin_mm=spec.origin_mm, gap_vox=spec.gap_vox,
            mirror_axis=spec.mirror_axis, mirror_pairs=spec.mirror_pairs,
            bone_value=spec.bone_value, background_value=spec.background_value,
            noise_sd=spec.noise_sd, seed=args.seed)
    vol, labels = phantom.generate_phantom(spec)
    write_volume(vol, args.out_image)
    write_volume(labels, args.out_labels)
    _write_config(_config_path_for(args.out_labels), args, effective_seed=spec.seed)
    return 0


def _cmd_preprocess(args) -> int:
    vol = _read_intensity(args.input)
    clipped = preprocess.clip_negatives(vol)
    scaled, stats = preprocess.standardize(clipped, center=args.center)
    write_volume(scaled, args.out)
    stats_path = args.stats or os.path.splitext(args.out)[0] + ".stats.txt"
    with open(stats_path, "w", encoding="utf-8") as fh:
        fh.write(stats.to_text())
    _write_config(_config_path_for(args.out), args, stats_path=os.path.basename(stats_path))
    return 0


def _cmd_weightmap(args) -> int:
    labels = _read_labels(args.labels)
    params = distance.WeightMapParams(w0=args.w0, sigma=args.sigma, wc=args.wc,
                                      erode_radius_vox=args.erode)
    wm = distance.weight_map(labels, params)
    write_volume(wm, args.out)
    _write_config(_config_path_for(args.out), args,
                  emptied_classes=",".join(str(c) for c in wm.meta["emptied_classes"]))
    return 0


def _cmd_views(args) -> int:
    vs = multiplanar.generate_views(args.n, seed=args.seed or 0,
                                    min_angle_deg=args.min_angle,
                                    canonical=args.canonical)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(vs.to_text())
    _write_config(_config_path_for(args.out), args)
    return 0


def _resolve_grid(args, geometry) -> tuple[int, float]:
    if args.d is not None and args.m is not None:
        return args.d, args.m
    if args.d is not None or args.m is not None:
        raise UsageError("--d and --m must be given together")
    return multiplanar.fit_grid([geometry], mode=args.fit)


def _cmd_sample(args) -> int:
    image = _read_intensity(args.image)
    labels = _read_labels(args.labels) if args.labels else None
    weights = _read_intensity(args.weights) if args.weights else None
    num_classes = args.num_classes
    if num_classes is None:
        if labels is None:
            raise UsageError("--num-classes is required when no --labels are given")
        num_classes = labels.num_classes
    d, m = _resolve_grid(args, image.geometry)
    center = _parse_triple(args.center) if args.center else None
    batch = multiplanar.extract_slices(image, _parse_triple(args.view), d, m,
                                       center_mm=center, labels=labels, weights=weights)
    manifest_path = segmenter.write_slice_batch(batch, args.out_dir, num_classes)
    _write_config(os.path.join(args.out_dir, "resolved_config.json"), args,
                  d=d, m=m, manifest=os.path.basename(manifest_path))
    return 0


def _build_handle(args) -> segmenter.SegmenterHandle:
    chosen = [x for x in (args.oracle_perfect, args.oracle_corrupted, args.plugin_cmd) if x]
    if len(chosen) != 1:
        raise UsageError("choose exactly one of --oracle-perfect, --oracle-corrupted, --plugin-cmd")
    if args.plugin_cmd:
        if args.num_classes is None:
            raise UsageError("--plugin-cmd requires --num-classes")
        return segmenter.external_segmenter(args.plugin_cmd, args.num_classes)
    ref = _read_labels(args.oracle_perfect or args.oracle_corrupted)
    if args.oracle_perfect:
        return segmenter.oracle_perfect(ref)
    pairs = postprocess.SymmetryPairs.parse(args.swap_pairs).pairs if args.swap_pairs else ()
    cfg = segmenter.CorruptionConfig(
        swap_fraction=args.swap_fraction, swap_pairs=pairs, band_vox=args.band,
        dilate_vox=args.dilate, floater_count=args.floaters,
        floater_radius_vox=args.floater_radius, seed=args.seed or 0)
    return segmenter.oracle_corrupted(ref, cfg)


def _cmd_predict(args) -> int:
    image = _read_intensity(args.image)
    if args.views_file:
        vs = multiplanar.ViewSet.from_text(open(args.views_file, encoding="utf-8").read())
    else:
        vs = multiplanar.generate_views(args.views, seed=args.seed or 0,
                                        min_angle_deg=args.min_angle,
                                        canonical=args.canonical)
    d, m = _resolve_grid(args, image.geometry)
    center = _parse_triple(args.center) if args.center else image.geometry.center_mm
    handle = _build_handle(args)

    def predict_one(item):
        i, normal = item
        batch = multiplanar.extract_slices(image, normal, d, m, center_mm=center)
        work_dir = None
        if handle.kind == "external":
            work_dir = os.path.join(args.work_dir or os.path.dirname(args.out) or ".",
                                    f"view_{i:02d}")
        probs = segmenter.run_segmenter(handle, batch, work_dir=work_dir,
                                        timeout_s=args.timeout)
        return multiplanar.reconstruct_view(probs, batch.grid, image.geometry)

    items = list(enumerate(vs.views))
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            recon = list(pool.map(predict_one, items))
    else:
        recon = [predict_one(item) for item in items]

    if args.emit_intermediate:
        base, _ = os.path.splitext(args.out)
        for i, pv in enumerate(recon):
            write_volume(pv, f"{base}.view{i:02d}.hdr")

    fused = multiplanar.fuse(recon)
    write_volume(fused, args.out)
    _write_config(_config_path_for(args.out), args, d=d, m=m,
                  center=" ".join(repr(c) for c in center), n_views=len(vs))
    return 0


def _cmd_postprocess(args) -> int:
    labels = _read_labels(args.input)
    pairs = postprocess.SymmetryPairs.parse(args.pairs) if args.pairs \
        else postprocess.SymmetryPairs(())
    cleaned, stats = postprocess.symmetric_cc_filter(labels, pairs,
                                                     connectivity=args.connectivity)
    write_volume(cleaned, args.out)
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            fh.write(stats.to_text())
    _write_config(_config_path_for(args.out), args)
    return 0


def _cmd_collisions(args) -> int:
    labels = _read_labels(args.pred)
    report = distance.detect_collisions(labels, epsilon=args.epsilon,
                                        max_points=args.max_points)
    _emit_report(report.to_text(), args.out, args)
    return 0


def _cmd_evaluate(args) -> int:
    pred = _read_labels(args.pred)
    truth = _read_labels(args.truth)
    report = metrics.evaluate(pred, truth, gap_epsilon=args.gap_epsilon,
                              collision_epsilon=args.collision_epsilon,
                              pred_id=os.path.basename(args.pred),
                              truth_id=os.path.basename(args.truth))
    _emit_report(report.to_text(), args.out, args)
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for anything randomized (default 0 or spec value)")

    parser = _Parser(prog="mpseg",
                     description="Multiplanar volumetric segmentation pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("phantom", parents=[common],
                       help="generate a synthetic volume + ground truth from a spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-image", required=True, dest="out_image")
    p.add_argument("--out-labels", required=True, dest="out_labels")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("preprocess", parents=[common],
                       help="clip negative intensities and standardize by IQR")
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None, help="stats sidecar path")
    p.add_argument("--center", choices=("mean", "median"), default="mean")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("weightmap", parents=[common],
                       help="per-voxel loss weights emphasizing inter-class gaps")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--w0", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=5.0)
    p.add_argument("--wc", type=float, default=1.0)
    p.add_argument("--erode", type=int, default=0)
    p.set_defaults(func=_cmd_weightmap)

    p = sub.add_parser("views", parents=[common],
                       help="generate a reproducible set of view normals")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--min-angle", type=float, default=60.0, dest="min_angle")
    p.add_argument("--canonical", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_views)

    def add_grid_flags(p):
        p.add_argument("--d", type=int, default=None, help="pixels per slice side")
        p.add_argument("--m", type=float, default=None, help="slice side length, mm")
        p.add_argument("--fit", choices=("train", "infer"), default="infer")
        p.add_argument("--center", default=None, help="sampling center, mm (x,y,z)")

    p = sub.add_parser("sample", parents=[common],
                       help="write one view's slices in the plugin exchange layout")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--view", required=True, help="view normal (x,y,z)")
    p.add_argument("--num-classes", type=int, default=None, dest="num_classes")
    add_grid_flags(p)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("predict", parents=[common],
                       help="sample, segment, reconstruct and fuse all views")
    p.add_argument("--image", required=True)
    p.add_argument("--views", type=int, default=6, help="number of views to generate")
    p.add_argument("--views-file", default=None, dest="views_file")
    p.add_argument("--min-angle", type=float, default=60.0, dest="min_angle")
    p.add_argument("--canonical", action="store_true")
    add_grid_flags(p)
    p.add_argument("--oracle-perfect", default=None, dest="oracle_perfect",
                   help="reference labels served by the perfect oracle")
    p.add_argument("--oracle-corrupted", default=None, dest="oracle_corrupted",
                   help="reference labels served by the corrupted oracle")
    p.add_argument("--swap-fraction", type=float, default=0.0, dest="swap_fraction")
    p.add_argument("--swap-pairs", default="", dest="swap_pairs")
    p.add_argument("--band", type=int, default=1)
    p.add_argument("--dilate", type=int, default=0)
    p.add_argument("--floaters", type=int, default=0)
    p.add_argument("--floater-radius", type=float, default=2.0, dest="floater_radius")
    p.add_argument("--plugin-cmd", default=None, dest="plugin_cmd")
    p.add_argument("--num-classes", type=int, default=None, dest="num_classes")
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--work-dir", default=None, dest="work_dir")
    p.add_argument("--emit-intermediate", action="store_true", dest="emit_intermediate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("postprocess", parents=[common],
                       help="symmetric component cleanup and floater removal")
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--pairs", default="", help="symmetric class pairs a:b[,c:d...]")
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=26)
    p.add_argument("--stats", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_postprocess)

    p = sub.add_parser("collisions", parents=[common],
                       help="count predicted voxels too close to another class")
    p.add_argument("--pred", required=True)
    p.add_argument("--epsilon", type=float, default=2.0)
    p.add_argument("--max-points", type=int, default=1000, dest="max_points")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_collisions)

    p = sub.add_parser("evaluate", parents=[common],
                       help="Dice, GapDice, Hausdorff and collisions vs ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--gap-epsilon", type=float, default=10.0, dest="gap_epsilon")
    p.add_argument("--collision-epsilon", type=float, default=2.0, dest="collision_epsilon")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ProtocolError as exc:
        print(f"plugin error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
