"""Synthetic desk-scale scenes with exact correspondences, match corruption,
pose-error evaluation, and table emission.

Scene construction guarantees: every match is the exact projection pair of a
common 3D point, and descriptors are radial-basis features of the camera
center, so retrieval ranks spatial neighbors first by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    CameraPose,
    Intrinsics,
    position_error,
    project_many,
    rotation_error_deg,
)
from .pipeline import GlobalDescriptor, MatchSet
from .ransac import LocalizationResult, make_rng
from .dataio import QueryResult, SceneDatabase, SceneRecord

DESCRIPTOR_DIM = 64
DEFAULT_THRESHOLDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))
INDOOR_THRESHOLDS = ((0.05, 5.0),)


class IdMismatch(Exception):
    pass


def default_intrinsics() -> Intrinsics:
    return Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


@dataclass(frozen=True)
class SynthConfig:
    num_cameras: int = 8
    num_points: int = 200
    num_queries: int = 4
    scene_extent: float = 2.0
    noise_px: float = 0.0
    outlier_frac: float = 0.0
    seed: int = 0
    intrinsics: Intrinsics = field(default_factory=default_intrinsics)

    def __post_init__(self):
        if not 0.0 <= self.outlier_frac < 1.0:
            raise ValueError("outlier_frac must be in [0, 1)")
        if self.noise_px < 0.0:
            raise ValueError("noise_px must be >= 0")
        if self.num_cameras < 2 or self.num_queries < 1:
            raise ValueError("need >= 2 references and >= 1 query")


def look_at_pose(center: np.ndarray, target: np.ndarray,
                 up=np.array([0.0, 1.0, 0.0])) -> CameraPose:
    """World-to-camera pose with +z toward the target."""
    z = target - center
    z = z / np.linalg.norm(z)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ center)


def _ring_pose(rng: np.random.Generator, angle: float, radius: float,
               extent: float) -> CameraPose:
    center = np.array([radius * math.cos(angle),
                       rng.normal(scale=0.2 * extent),
                       radius * math.sin(angle)])
    target = rng.normal(scale=0.05 * extent, size=3)
    return look_at_pose(center, target)


def _camera_descriptor(center: np.ndarray, anchors: np.ndarray,
                       length_scale: float) -> np.ndarray:
    feats = np.exp(-np.sum((anchors - center) ** 2, axis=1)
                   / (2.0 * length_scale ** 2))
    return feats / np.linalg.norm(feats)


def generate_scene(cfg: SynthConfig):
    """Build a synthetic fixture.

    Returns (references: SceneDatabase, queries: SceneDatabase with ground
    truth poses, matches: list of MatchSet covering every query-reference
    pair with shared visible points, descriptors for references and queries).
    Noise and outliers from cfg are applied through corrupt_matches with
    per-pair derived seeds; camera placement uses per-camera derived RNG
    streams, so generation order never matters.
    """
    K = cfg.intrinsics
    extent = cfg.scene_extent
    radius = 1.1 * extent
    points_rng = make_rng(cfg.seed, 0xA0)
    points = points_rng.uniform(-extent / 2.0, extent / 2.0,
                                size=(cfg.num_points, 3))
    anchor_rng = make_rng(cfg.seed, 0xA1)
    anchors = anchor_rng.uniform(-1.5 * extent, 1.5 * extent,
                                 size=(DESCRIPTOR_DIM, 3))

    refs, ref_desc = [], []
    for i in range(cfg.num_cameras):
        rng = make_rng(cfg.seed, 0xB000 + i)
        angle = 2.0 * math.pi * i / cfg.num_cameras + rng.normal(scale=0.05)
        pose = _ring_pose(rng, angle, radius, extent)
        ident = f"ref{i:04d}"
        refs.append(SceneRecord.from_pose(ident, K, pose))
        ref_desc.append(GlobalDescriptor(
            ident, _camera_descriptor(pose.center, anchors, extent)))

    queries, query_desc = [], []
    for i in range(cfg.num_queries):
        rng = make_rng(cfg.seed, 0xC000 + i)
        angle = (2.0 * math.pi * (i + 0.5) / cfg.num_queries
                 + rng.normal(scale=0.05))
        pose = _ring_pose(rng, angle, radius, extent)
        ident = f"query{i:04d}"
        queries.append(SceneRecord.from_pose(ident, K, pose))
        query_desc.append(GlobalDescriptor(
            ident, _camera_descriptor(pose.center, anchors, extent)))

    matches = []
    for qi, q in enumerate(queries):
        q_pix, q_front = project_many(q.pose, K, points)
        q_vis = q_front & K.contains(q_pix)
        for ri, r in enumerate(refs):
            r_pix, r_front = project_many(r.pose, K, points)
            vis = q_vis & r_front & K.contains(r_pix)
            idx = np.nonzero(vis)[0]
            conf_rng = make_rng(cfg.seed, 0xD000 + qi * 4096 + ri)
            conf = conf_rng.uniform(0.5, 1.0, size=len(idx))
            data = np.column_stack([q_pix[idx], r_pix[idx], conf])
            matches.append(MatchSet(q.image_id, r.image_id, data))

    if cfg.noise_px > 0.0 or cfg.outlier_frac > 0.0:
        bounds = {rec.image_id: (K.width, K.height)
                  for rec in refs + queries}
        matches = corrupt_matches(matches, cfg.noise_px, cfg.outlier_frac,
                                  cfg.seed, bounds)
    return (SceneDatabase(refs), SceneDatabase(queries), matches,
            ref_desc + query_desc)


def corrupt_matches(matches: list[MatchSet], noise_px: float,
                    outlier_frac: float, seed: int,
                    bounds: dict) -> list[MatchSet]:
    """Gaussian pixel noise on both endpoints plus uniform in-bounds outliers.

    Exactly floor(outlier_frac * n) rows per match set are replaced;
    deterministic per (seed, match-set index).
    """
    out = []
    for idx, m in enumerate(matches):
        rng = make_rng(seed, 0xE000 + idx)
        data = m.data.copy()
        n = len(data)
        if n and noise_px > 0.0:
            data[:, 0:4] += rng.normal(scale=noise_px, size=(n, 4))
        n_out = int(outlier_frac * n)
        if n_out:
            rows = rng.choice(n, size=n_out, replace=False)
            for side, ident in ((0, m.id_a), (2, m.id_b)):
                w, h = bounds[ident]
                data[rows, side] = rng.uniform(0, w, size=n_out)
                data[rows, side + 1] = rng.uniform(0, h, size=n_out)
        if n:
            for side, ident in ((0, m.id_a), (2, m.id_b)):
                w, h = bounds[ident]
                data[:, side] = np.clip(data[:, side], 0.0, np.nextafter(float(w), 0.0))
                data[:, side + 1] = np.clip(data[:, side + 1], 0.0, np.nextafter(float(h), 0.0))
        out.append(MatchSet(m.id_a, m.id_b, data))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationReport:
    thresholds: tuple
    per_query: list[QueryResult]
    recalls: tuple
    mpe: float
    moe: float


def lower_median(values) -> float:
    """Median taking the lower-middle element for even counts."""
    values = sorted(values)
    if not values:
        raise ValueError("median of empty sequence")
    return float(values[(len(values) - 1) // 2])


def aggregate(per_query: list[QueryResult], thresholds) -> EvaluationReport:
    thresholds = tuple((float(p), float(r)) for p, r in thresholds)
    if not thresholds:
        raise ValueError("need at least one threshold")
    recalls = []
    for pos_t, rot_t in thresholds:
        hits = sum(1 for q in per_query
                   if q.pos_err_m <= pos_t and q.rot_err_deg <= rot_t)
        recalls.append(hits / len(per_query) if per_query else 0.0)
    mpe = lower_median([q.pos_err_m for q in per_query])
    moe = lower_median([q.rot_err_deg for q in per_query])
    return EvaluationReport(thresholds, list(per_query), tuple(recalls),
                            mpe, moe)


def evaluate(results: list[tuple[str, LocalizationResult]],
             gt_poses: dict[str, CameraPose], thresholds) -> EvaluationReport:
    """Per-query pose errors against ground truth plus aggregate recalls and
    medians; failures enter the medians as +inf.

    Raises IdMismatch unless result ids and ground-truth ids agree exactly.
    """
    result_ids = [rid for rid, _ in results]
    if len(set(result_ids)) != len(result_ids):
        raise IdMismatch("duplicate result ids")
    if set(result_ids) != set(gt_poses):
        raise IdMismatch(
            f"result ids {sorted(result_ids)} != ground truth {sorted(gt_poses)}")
    rows = []
    for rid, res in results:
        if res.success:
            rows.append(QueryResult(rid,
                                    position_error(res.pose, gt_poses[rid]),
                                    rotation_error_deg(res.pose, gt_poses[rid]),
                                    res.num_inliers, "ok"))
        else:
            rows.append(QueryResult(rid, math.inf, math.inf,
                                    res.num_inliers, "failed"))
    return aggregate(rows, thresholds)


def parse_thresholds(text: str):
    """Parse 'pos,rot;pos,rot;...' into threshold pairs."""
    pairs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ValueError(f"bad threshold {chunk!r}, expected 'pos,rot'")
        pos, rot = float(parts[0]), float(parts[1])
        if pos <= 0 or rot <= 0:
            raise ValueError(f"thresholds must be positive: {chunk!r}")
        pairs.append((pos, rot))
    if not pairs:
        raise ValueError("no thresholds given")
    return tuple(pairs)


def _fmt_metric(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.3f}"


def emit_table(reports: list[tuple[str, EvaluationReport]]) -> tuple[str, str]:
    """Human-readable table plus a bit-stable CSV mirror.

    Recall columns render as slash-separated percentages with one decimal,
    one column group per threshold in the order given.
    """
    if not reports:
        raise ValueError("need at least one report")
    thresholds = reports[0][1].thresholds
    head_rec = " / ".join(f"({p} m, {r} deg)" for p, r in thresholds)
    lines = [f"{'method':<24} {'recall ' + head_rec:<44} {'MPE [m]':>10} {'MOE [deg]':>10}"]
    csv_lines = ["label," + ",".join(
        f"recall_{p}m_{r}deg" for p, r in thresholds) + ",mpe_m,moe_deg"]
    for label, rep in reports:
        rec = " / ".join(f"{100.0 * r:.1f}" for r in rep.recalls)
        lines.append(f"{label:<24} {rec:<44} {_fmt_metric(rep.mpe):>10} "
                     f"{_fmt_metric(rep.moe):>10}")
        csv_lines.append(",".join([label,
                                   *(f"{100.0 * r:.1f}" for r in rep.recalls),
                                   _fmt_metric(rep.mpe), _fmt_metric(rep.moe)]))
    return "\n".join(lines) + "\n", "\n".join(csv_lines) + "\n"
