"""Command-line interface.

Subcommands: obfuscate, localize, evaluate, align, synth. Exit codes:
0 success, 1 usage error, 2 data error, 3 no query localized.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, obfuscate as obf, pipeline, synthbench
from .geometry import CameraPose, position_error, rotation_error_deg
from .ransac import LocalizationResult, RansacConfig
from .solvers import DegenerateConfiguration, align_similarity

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

OBFUSCATION_METHODS = [
    "blur41", "blur81", "pixelate10", "pixelate20", "canny",
    "mask-fill", "infill", "borders", "random-colors", "semantic-colors",
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="obloc",
                     description="Structureless localization toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("obfuscate", help="render obfuscated images")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--method", required=True, choices=OBFUSCATION_METHODS)
    p.add_argument("--labelmaps")
    p.add_argument("--masks")
    p.add_argument("--canny-low", type=float, default=obf.CANNY_DEFAULT_LOW)
    p.add_argument("--canny-high", type=float, default=obf.CANNY_DEFAULT_HIGH)
    p.add_argument("--infill-iterations", type=int, default=500)
    p.add_argument("--palette")
    _add_common(p)

    p = subs.add_parser("localize", help="estimate query poses")
    p.add_argument("--scene", required=True)
    p.add_argument("--queries", required=True,
                   help="scene file with query intrinsics; its poses are "
                        "treated as ground truth for the error columns")
    p.add_argument("--matches", required=True)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--retrieval-descriptors",
                   help="descriptor file used for retrieval only, e.g. one "
                        "extracted from obfuscated images (default: "
                        "--descriptors)")
    p.add_argument("--solver", required=True, choices=["e5p1", "lt"])
    p.add_argument("--topk", type=int, default=20)
    p.add_argument("--refine-segments", action="store_true")
    p.add_argument("--labelmaps")
    p.add_argument("--out", required=True)
    p.add_argument("--poses-out", help="optional scene file of estimated poses")
    _add_common(p)

    p = subs.add_parser("evaluate", help="aggregate a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", default="0.25,2;0.5,5;5,10")
    p.add_argument("--out", help="optional CSV table mirror")
    p.add_argument("--label")
    _add_common(p)

    p = subs.add_parser("align", help="similarity-align scene poses to ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = subs.add_parser("synth", help="emit a synthetic fixture")
    p.add_argument("--cameras", type=int, default=8)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--queries", type=int, default=4)
    p.add_argument("--extent", type=float, default=2.0)
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--outlier-frac", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# obfuscate
# ---------------------------------------------------------------------------

def _load_palette(path) -> dict:
    palette = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise dataio.ParseError(path, lineno, "expected: label r g b")
        try:
            palette[int(parts[0])] = tuple(int(v) for v in parts[1:])
        except ValueError as exc:
            raise dataio.ParseError(path, lineno, str(exc)) from None
    return palette


def _sidecar(directory: str, stem: str, kind: str) -> Path:
    path = Path(directory) / f"{stem}.png"
    if not path.exists():
        raise dataio.MissingFile(f"no {kind} for {stem!r}: {path}")
    return path


def cmd_obfuscate(args) -> int:
    label_methods = {"borders", "random-colors", "semantic-colors"}
    mask_methods = {"mask-fill", "infill"}
    if args.method in label_methods and not args.labelmaps:
        raise UsageError(f"--labelmaps is required for {args.method}")
    if args.method in mask_methods and not args.masks:
        raise UsageError(f"--masks is required for {args.method}")
    if args.method == "semantic-colors" and not args.palette:
        raise UsageError("--palette is required for semantic-colors")
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise dataio.MissingFile(str(in_dir))
    palette = _load_palette(args.palette) if args.palette else None

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = sorted(p for p in in_dir.iterdir()
                    if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise dataio.MissingFile(f"no images in {in_dir}")
    for src in images:
        stem = src.stem
        if args.method in label_methods:
            labels = dataio.read_labelmap(_sidecar(args.labelmaps, stem,
                                                   "label map"))
            if args.method == "borders":
                result = obf.render_borders(labels)
            elif args.method == "random-colors":
                result = obf.render_random_colors(labels, args.seed)
            else:
                result = obf.render_semantic_colors(labels, palette)
        else:
            img = dataio.read_raster(src)
            if args.method == "blur41":
                result = obf.gaussian_blur(img, *obf.BLUR_LIGHT)
            elif args.method == "blur81":
                result = obf.gaussian_blur(img, *obf.BLUR_HEAVY)
            elif args.method == "pixelate10":
                result = obf.pixelate(img, obf.PIXELATE_LIGHT)
            elif args.method == "pixelate20":
                result = obf.pixelate(img, obf.PIXELATE_HEAVY)
            elif args.method == "canny":
                gray = obf.clahe(obf.to_grayscale(img))
                edges = obf.canny(gray, args.canny_low, args.canny_high)
                result = np.where(edges, 255, 0).astype(np.uint8)
            else:
                mask = dataio.read_binary_mask(_sidecar(args.masks, stem,
                                                        "mask"))
                if args.method == "mask-fill":
                    result = obf.mask_fill(img, mask)
                else:
                    result = obf.infill_diffusion(img, mask,
                                                  args.infill_iterations)
        dataio.write_raster(result, out_dir / f"{stem}.png")
    print(f"obfuscated {len(images)} images -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# localize
# ---------------------------------------------------------------------------

def _localize_one(index, query, refs_views, descriptors, matches_by_query,
                  labelmaps_dir, args):
    cfg = RansacConfig(seed=args.seed ^ index)
    K = query.intrinsics
    qid = query.image_id
    query_desc = descriptors.get(qid)
    ref_descs = [descriptors[r] for r in refs_views if r in descriptors]
    if query_desc is None or not ref_descs:
        return LocalizationResult(None, 0, 0, 0, np.zeros(0, dtype=bool))
    shortlist = pipeline.retrieve_topk(query_desc, ref_descs, args.topk)
    selected = set(shortlist)
    matches = [pipeline.select_top_matches(m, pipeline.DEFAULT_TOP_MATCHES_POSE)
               for m in matches_by_query.get(qid, []) if m.id_b in selected]
    views = {r: refs_views[r] for r in shortlist}
    try:
        if args.solver == "e5p1":
            result = pipeline.localize_e5p1(qid, K, views, matches, cfg)
        else:
            result = pipeline.localize_lt(qid, K, views, matches, cfg)
    except pipeline.InsufficientReferences:
        return LocalizationResult(None, 0, 0, 0, np.zeros(0, dtype=bool))
    if result.success and args.refine_segments and labelmaps_dir:
        result = _segment_refine(result, qid, K, views,
                                 matches_by_query.get(qid, []), selected,
                                 labelmaps_dir, cfg, args.solver)
    return result


def _segment_refine(result, qid, K, views, all_matches, selected,
                    labelmaps_dir, cfg, solver):
    try:
        labels_q = dataio.read_labelmap(_sidecar(labelmaps_dir, qid,
                                                 "label map"))
    except dataio.MissingFile:
        return result
    centroid_sets = []
    for m in all_matches:
        if m.id_b not in selected:
            continue
        try:
            labels_r = dataio.read_labelmap(_sidecar(labelmaps_dir, m.id_b,
                                                     "label map"))
        except dataio.MissingFile:
            continue
        seg_matches = pipeline.select_top_matches(
            m, pipeline.DEFAULT_TOP_MATCHES_SEGMENTS)
        stats_q = pipeline.assign_keypoints_to_segments(labels_q,
                                                        seg_matches.xy_a)
        stats_r = pipeline.assign_keypoints_to_segments(labels_r,
                                                        seg_matches.xy_b)
        pairs = pipeline.match_segments(stats_q, stats_r)
        if pairs:
            centroid_sets.append(pipeline.segment_centroid_matches(
                pairs, stats_q, stats_r, qid, m.id_b))
    if not centroid_sets:
        return result
    pose_matches = [pipeline.select_top_matches(m, pipeline.DEFAULT_TOP_MATCHES_POSE)
                    for m in all_matches if m.id_b in selected]
    if solver == "e5p1":
        p2, p3 = pipeline.e5p1_inlier_points(result, qid, K, views,
                                             pose_matches)
        full = LocalizationResult(result.pose, len(p2), len(p2),
                                  result.iterations_run,
                                  np.ones(len(p2), dtype=bool))
        return pipeline.refine_with_segments(full, centroid_sets, views, K,
                                             p2, p3, cfg)
    p2, p3 = pipeline.lt_point_set(qid, K, views, pose_matches)
    if len(p2) != len(result.inlier_mask):
        return result
    return pipeline.refine_with_segments(result, centroid_sets, views, K,
                                         p2, p3, cfg)


def cmd_localize(args) -> int:
    refs = dataio.read_scene(args.scene)
    queries = dataio.read_scene(args.queries)
    bounds = {**refs.bounds(), **queries.bounds()}
    matches = dataio.read_matches(args.matches, bounds)
    descriptor_path = args.retrieval_descriptors or args.descriptors
    descriptors = {d.image_id: d
                   for d in dataio.read_descriptors(descriptor_path)}
    refs_views = refs.views()
    matches_by_query = {}
    for m in matches:
        matches_by_query.setdefault(m.id_a, []).append(m)

    work = list(enumerate(queries))
    threads = max(1, args.threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(
            lambda iw: _localize_one(iw[0], iw[1], refs_views, descriptors,
                                     matches_by_query, args.labelmaps, args),
            work))

    rows, est_records = [], []
    for query, result in zip(queries, results):
        gt = query.pose
        if result.success:
            rows.append(dataio.QueryResult(
                query.image_id, position_error(result.pose, gt),
                rotation_error_deg(result.pose, gt), result.num_inliers, "ok"))
            est_records.append(dataio.SceneRecord.from_pose(
                query.image_id, query.intrinsics, result.pose))
        else:
            rows.append(dataio.QueryResult(query.image_id, math.inf, math.inf,
                                           result.num_inliers, "failed"))
    dataio.write_results(rows, args.out)
    if args.poses_out:
        dataio.write_scene(dataio.SceneDatabase(est_records), args.poses_out)
    ok = sum(1 for r in rows if r.status == "ok")
    print(f"localized {ok}/{len(rows)} queries -> {args.out}")
    return 0 if ok else 3


# ---------------------------------------------------------------------------
# evaluate / align / synth
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    rows = dataio.read_results(args.results)
    gt = dataio.read_scene(args.gt)
    thresholds = synthbench.parse_thresholds(args.thresholds)
    gt_ids = {r.image_id for r in gt}
    row_ids = {r.query_id for r in rows}
    if row_ids != gt_ids:
        raise synthbench.IdMismatch(
            f"results cover {sorted(row_ids)} but ground truth has "
            f"{sorted(gt_ids)}")
    report = synthbench.aggregate(rows, thresholds)
    label = args.label or Path(args.results).stem
    text, csv_text = synthbench.emit_table([(label, report)])
    print(text, end="")
    if args.out:
        Path(args.out).write_text(csv_text)
    return 0


def cmd_align(args) -> int:
    est = dataio.read_scene(args.est)
    gt = dataio.read_scene(args.gt)
    gt_by_id = {r.image_id: r for r in gt}
    shared = [r for r in est if r.image_id in gt_by_id]
    if len(shared) < 3:
        raise synthbench.IdMismatch(
            f"only {len(shared)} shared ids between {args.est} and {args.gt}")
    src = np.array([r.pose.center for r in shared])
    dst = np.array([gt_by_id[r.image_id].pose.center for r in shared])
    try:
        transform = align_similarity(src, dst)
    except DegenerateConfiguration as exc:
        raise synthbench.IdMismatch(f"alignment degenerate: {exc}") from None
    records = []
    for r in est:
        pose = r.pose
        rotation = pose.rotation @ transform.rotation.T
        center = transform.apply(pose.center)
        aligned = CameraPose(rotation, -rotation @ center)
        records.append(dataio.SceneRecord.from_pose(
            r.image_id, r.intrinsics, aligned, r.raster_path, r.labelmap_path))
    dataio.write_scene(dataio.SceneDatabase(records), args.out)
    residual = float(np.sqrt(np.mean(
        np.sum((transform.apply(src) - dst) ** 2, axis=1))))
    print(f"aligned {len(shared)} cameras: scale={transform.scale:.6g} "
          f"rms={residual:.6g} -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = synthbench.SynthConfig(
        num_cameras=args.cameras, num_points=args.points,
        num_queries=args.queries, scene_extent=args.extent,
        noise_px=args.noise_px, outlier_frac=args.outlier_frac,
        seed=args.seed)
    refs, queries, matches, descriptors = synthbench.generate_scene(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_scene(refs, out / "scene.txt")
    dataio.write_scene(queries, out / "queries.txt")
    dataio.write_matches(matches, out / "matches.txt")
    dataio.write_descriptors(descriptors, out / "descriptors.gdsc")
    print(f"wrote fixture ({len(refs)} refs, {len(queries)} queries, "
          f"{sum(len(m) for m in matches)} matches) -> {out}")
    return 0


COMMANDS = {
    "obfuscate": cmd_obfuscate,
    "localize": cmd_localize,
    "evaluate": cmd_evaluate,
    "align": cmd_align,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (dataio.ParseError, dataio.MissingFile, dataio.DecodeError,
            synthbench.IdMismatch, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
