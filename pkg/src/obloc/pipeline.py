"""End-to-end structureless localization: retrieval, match selection,
track building, the relative-pose (e5p1) and local-triangulation (lt)
paths, and segment-centroid pose refinement.

This module is file-format agnostic; readers and the CLI live in dataio.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .geometry import (
    CameraPose,
    Intrinsics,
    backproject_many,
    triangulate_multiview,
    triangulation_angle_deg,
)
from .ransac import (
    LocalizationResult,
    RansacConfig,
    ReferenceObservations,
    _msac_score,
    _scoring_data,
    _triangulate_against_query,
    ransac_e5p1,
    ransac_p3p,
    refine_pose,
)

DEFAULT_TOP_MATCHES_POSE = 1024       # highest-confidence matches used for pose
DEFAULT_TOP_MATCHES_SEGMENTS = 4096   # matches used for segment correspondence
DEFAULT_TRACK_QUANTIZATION_PX = 2.0
MIN_TRIANGULATION_ANGLE_DEG = 1.0
SEGMENT_MIN_AREA_PX = 100
SEGMENT_DILATION_PX = 5
SEGMENT_MIN_IOU = 0.1


class InsufficientReferences(Exception):
    """Fewer matched reference images than the solver needs."""


@dataclass(frozen=True)
class ImageView:
    """Posed, calibrated image referenced by id."""

    image_id: str
    intrinsics: Intrinsics
    pose: CameraPose


@dataclass(frozen=True)
class GlobalDescriptor:
    """Image-level retrieval descriptor; stored L2-normalized."""

    image_id: str
    vector: np.ndarray

    @staticmethod
    def normalized(image_id: str, vector: np.ndarray) -> "GlobalDescriptor":
        v = np.asarray(vector, dtype=np.float64)
        n = np.linalg.norm(v)
        if n == 0.0:
            raise ValueError(f"zero-norm descriptor for {image_id!r}")
        return GlobalDescriptor(image_id, v / n)


@dataclass(frozen=True)
class MatchSet:
    """2D-2D correspondences between an image pair.

    data rows are (x_a, y_a, x_b, y_b, confidence); side a is the query in
    every pipeline operation.
    """

    id_a: str
    id_b: str
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "data",
            np.asarray(self.data, dtype=np.float64).reshape(-1, 5))

    def __len__(self) -> int:
        return len(self.data)

    @property
    def xy_a(self) -> np.ndarray:
        return self.data[:, 0:2]

    @property
    def xy_b(self) -> np.ndarray:
        return self.data[:, 2:4]

    @property
    def confidence(self) -> np.ndarray:
        return self.data[:, 4]


@dataclass(frozen=True)
class Track:
    """One query keypoint observed in several reference images."""

    query_xy: np.ndarray
    observations: list  # (reference id, xy) pairs

    def reference_ids(self) -> set:
        return {rid for rid, _ in self.observations}


class SegmentStats(NamedTuple):
    label: int
    area: int
    centroid: np.ndarray          # (x, y) mean of the segment's pixels
    keypoint_indices: np.ndarray  # indices into the keypoint list


class SegmentPair(NamedTuple):
    label_q: int
    label_r: int
    iou: float


# ---------------------------------------------------------------------------
# retrieval and match selection
# ---------------------------------------------------------------------------

def retrieve_topk(query: GlobalDescriptor, database: list[GlobalDescriptor],
                  k: int) -> list[str]:
    """Ids of the k database descriptors with the largest inner product.

    Ties break by ascending id for determinism.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not database:
        raise ValueError("empty descriptor database")
    scored = sorted(database, key=lambda d: (-float(query.vector @ d.vector),
                                             d.image_id))
    return [d.image_id for d in scored[:k]]


def select_top_matches(matches: MatchSet, n: int) -> MatchSet:
    """The n highest-confidence matches, stable by input order on ties."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= len(matches):
        return matches
    order = np.argsort(-matches.confidence, kind="stable")[:n]
    return MatchSet(matches.id_a, matches.id_b, matches.data[order])


# ---------------------------------------------------------------------------
# local triangulation path
# ---------------------------------------------------------------------------

def build_tracks(query_matches: list[MatchSet],
                 quantization_px: float = DEFAULT_TRACK_QUANTIZATION_PX) -> list[Track]:
    """Group matches into tracks by snapping query endpoints to a pixel grid.

    All matches whose query endpoint falls in the same grid cell form one
    track; the track's query pixel is the confidence-weighted mean of its
    members. Tracks seen from fewer than two distinct references are dropped.
    """
    if quantization_px <= 0:
        raise ValueError("quantization must be positive")
    cells = defaultdict(list)
    for m in query_matches:
        ca = np.floor(m.xy_a / quantization_px).astype(np.int64)
        for row, (cx, cy) in zip(m.data, ca):
            cells[(int(cx), int(cy))].append((m.id_b, row))
    tracks = []
    for key in sorted(cells):
        members = cells[key]
        if len({rid for rid, _ in members}) < 2:
            continue
        rows = np.array([row for _, row in members])
        weights = rows[:, 4]
        total = weights.sum()
        if total > 0:
            query_xy = (rows[:, 0:2] * weights[:, None]).sum(axis=0) / total
        else:
            query_xy = rows[:, 0:2].mean(axis=0)
        observations = [(rid, row[2:4].copy()) for rid, row in members]
        tracks.append(Track(query_xy, observations))
    return tracks


def tracks_to_points(tracks: list[Track], references: Mapping[str, ImageView],
                     min_angle_deg: float = MIN_TRIANGULATION_ANGLE_DEG):
    """Triangulate tracks against known reference poses.

    Returns (points2d (n, 2), points3d (n, 3)) keeping only tracks that
    triangulate non-degenerately with a triangulation angle of at least
    min_angle_deg.
    """
    p2, p3 = [], []
    for track in tracks:
        poses, rays, centers = [], [], []
        for rid, xy in track.observations:
            view = references[rid]
            poses.append(view.pose)
            rays.append(backproject_many(view.intrinsics, xy[None, :])[0])
            centers.append(view.pose.center)
        X = triangulate_multiview(poses, rays)
        if X is None:
            continue
        if triangulation_angle_deg(np.array(centers), X) < min_angle_deg:
            continue
        p2.append(track.query_xy)
        p3.append(X)
    if not p2:
        return np.empty((0, 2)), np.empty((0, 3))
    return np.array(p2), np.array(p3)


# ---------------------------------------------------------------------------
# localization entry points
# ---------------------------------------------------------------------------

def _observations_for(matches: MatchSet, references: Mapping[str, ImageView],
                      K_query: Intrinsics) -> ReferenceObservations:
    view = references[matches.id_b]
    return ReferenceObservations(
        pose=view.pose,
        pixels_query=matches.xy_a,
        bearings_query=backproject_many(K_query, matches.xy_a),
        bearings_ref=backproject_many(view.intrinsics, matches.xy_b))


def _final_refine(result: LocalizationResult, data, K: Intrinsics,
                  cfg: RansacConfig) -> LocalizationResult:
    """Refine on the inlier-triangulated 2D-3D set, keeping the better score."""
    if not result.success or result.num_inliers < 4:
        return result
    points, valid = _triangulate_against_query(result.pose, data)
    keep = result.inlier_mask & valid
    if keep.sum() < 4:
        return result
    refined = refine_pose(result.pose, data.pixels_query[keep], points[keep],
                          K, loss_scale_px=cfg.inlier_threshold_px)
    old_score, _, _ = _msac_score(result.pose, data, K, cfg.inlier_threshold_px)
    new_score, _, mask = _msac_score(refined, data, K, cfg.inlier_threshold_px)
    if new_score >= old_score:
        return result
    return LocalizationResult(refined, int(mask.sum()),
                              result.num_correspondences,
                              result.iterations_run, mask)


def localize_e5p1(query_id: str, K_query: Intrinsics,
                  references: Mapping[str, ImageView],
                  matches: list[MatchSet],
                  cfg: RansacConfig) -> LocalizationResult:
    """Query pose via five-point relative pose against the best-matched
    reference plus scale recovery from the others.

    Raises InsufficientReferences with fewer than two matched references.
    """
    usable = [m for m in matches
              if m.id_a == query_id and m.id_b in references and len(m) > 0]
    if len({m.id_b for m in usable}) < 2:
        raise InsufficientReferences(
            f"query {query_id!r} matched against {len(usable)} references, need 2")
    usable.sort(key=lambda m: (-len(m), m.id_b))
    primary = _observations_for(usable[0], references, K_query)
    others = [_observations_for(m, references, K_query) for m in usable[1:]]
    result = ransac_e5p1(primary, others, K_query, cfg)
    if result.success:
        data = _scoring_data([primary] + others)
        result = _final_refine(result, data, K_query, cfg)
    return result


def localize_lt(query_id: str, K_query: Intrinsics,
                references: Mapping[str, ImageView],
                matches: list[MatchSet], cfg: RansacConfig,
                quantization_px: float = DEFAULT_TRACK_QUANTIZATION_PX) -> LocalizationResult:
    """Query pose via local triangulation of reference-reference tracks
    followed by absolute pose (P3P).

    Raises InsufficientReferences with fewer than two matched references;
    returns an in-band failure when fewer than four 2D-3D correspondences
    survive triangulation.
    """
    usable = [m for m in matches
              if m.id_a == query_id and m.id_b in references and len(m) > 0]
    if len({m.id_b for m in usable}) < 2:
        raise InsufficientReferences(
            f"query {query_id!r} matched against {len(usable)} references, need 2")
    tracks = build_tracks(usable, quantization_px)
    points2d, points3d = tracks_to_points(tracks, references)
    if len(points2d) < 4:
        return LocalizationResult(None, 0, len(points2d), 0,
                                  np.zeros(len(points2d), dtype=bool))
    result = ransac_p3p(points2d, points3d, K_query, cfg)
    if result.success:
        refined = refine_pose(result.pose, points2d[result.inlier_mask],
                              points3d[result.inlier_mask], K_query,
                              loss_scale_px=cfg.inlier_threshold_px)
        from .ransac import _point_msac
        old_score, _ = _point_msac(result.pose, points2d, points3d, K_query,
                                   cfg.inlier_threshold_px)
        new_score, mask = _point_msac(refined, points2d, points3d, K_query,
                                      cfg.inlier_threshold_px)
        if new_score < old_score:
            result = LocalizationResult(refined, int(mask.sum()), len(points2d),
                                        result.iterations_run, mask)
    return result


def e5p1_inlier_points(result: LocalizationResult, query_id: str,
                       K_query: Intrinsics, references: Mapping[str, ImageView],
                       matches: list[MatchSet]):
    """Inlier 2D-3D set of an e5p1 result (triangulated at the result pose)."""
    usable = [m for m in matches
              if m.id_a == query_id and m.id_b in references and len(m) > 0]
    usable.sort(key=lambda m: (-len(m), m.id_b))
    data = _scoring_data([_observations_for(m, references, K_query)
                          for m in usable])
    points, valid = _triangulate_against_query(result.pose, data)
    keep = result.inlier_mask & valid
    return data.pixels_query[keep], points[keep]


def lt_point_set(query_id: str, K_query: Intrinsics,
                 references: Mapping[str, ImageView], matches: list[MatchSet],
                 quantization_px: float = DEFAULT_TRACK_QUANTIZATION_PX):
    """The full 2D-3D correspondence set the lt solver runs on."""
    usable = [m for m in matches
              if m.id_a == query_id and m.id_b in references and len(m) > 0]
    tracks = build_tracks(usable, quantization_px)
    return tracks_to_points(tracks, references)


# ---------------------------------------------------------------------------
# segment-centroid refinement
# ---------------------------------------------------------------------------

def segment_stats(labels: np.ndarray, min_area_px: int = SEGMENT_MIN_AREA_PX):
    """Area and pixel-coordinate centroid per label, below-minimum-area and
    unlabeled (0) segments dropped."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    present = present[present != 0]
    stats = {}
    ys, xs = np.mgrid[0:labels.shape[0], 0:labels.shape[1]]
    for lab in present:
        mask = labels == lab
        area = int(mask.sum())
        if area < min_area_px:
            continue
        centroid = np.array([xs[mask].mean(), ys[mask].mean()])
        stats[int(lab)] = (area, centroid)
    return stats


def assign_keypoints_to_segments(labels: np.ndarray, keypoints: np.ndarray,
                                 dilation_px: int = SEGMENT_DILATION_PX,
                                 min_area_px: int = SEGMENT_MIN_AREA_PX) -> list[SegmentStats]:
    """Segments with their member keypoints under square-window dilation.

    A keypoint belongs to every surviving segment whose mask, dilated by
    dilation_px with a square structuring element, contains it; equivalently,
    a segment pixel lies within Chebyshev distance dilation_px of the
    keypoint.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    keypoints = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    base = segment_stats(labels, min_area_px)
    members = {lab: [] for lab in base}
    for idx, (x, y) in enumerate(keypoints):
        cx, cy = int(np.floor(x)), int(np.floor(y))
        x0, x1 = max(cx - dilation_px, 0), min(cx + dilation_px + 1, w)
        y0, y1 = max(cy - dilation_px, 0), min(cy + dilation_px + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        for lab in np.unique(labels[y0:y1, x0:x1]):
            if int(lab) in members:
                members[int(lab)].append(idx)
    return [SegmentStats(lab, base[lab][0], base[lab][1],
                         np.array(members[lab], dtype=np.int64))
            for lab in sorted(base)]


def match_segments(stats_q: list[SegmentStats], stats_r: list[SegmentStats],
                   min_iou: float = SEGMENT_MIN_IOU) -> list[SegmentPair]:
    """One-to-one segment pairs ranked by the IoU of their shared matches.

    Keypoint indices in both stats lists refer to the same match list (query
    endpoints on one side, reference endpoints on the other), so the i-th
    keypoint links a query segment to a reference segment. IoU uses union
    semantics: links / (|q members| + |r members| - links). Candidate pairs
    are each query segment with its best reference segment; pairs below
    min_iou or without links are dropped, then a greedy pass by descending
    IoU enforces one-to-one.
    """
    candidates = []
    sets_r = [(sr, frozenset(sr.keypoint_indices.tolist())) for sr in stats_r]
    for sq in stats_q:
        set_q = frozenset(sq.keypoint_indices.tolist())
        best = None
        for sr, set_r in sets_r:
            links = len(set_q & set_r)
            if links == 0:
                continue
            union = len(set_q) + len(set_r) - links
            iou = links / union
            if best is None or iou > best.iou or (iou == best.iou
                                                  and sr.label < best.label_r):
                best = SegmentPair(sq.label, sr.label, iou)
        if best is not None and best.iou >= min_iou:
            candidates.append(best)
    candidates.sort(key=lambda p: (-p.iou, p.label_q, p.label_r))
    used_q, used_r, pairs = set(), set(), []
    for pair in candidates:
        if pair.label_q in used_q or pair.label_r in used_r:
            continue
        used_q.add(pair.label_q)
        used_r.add(pair.label_r)
        pairs.append(pair)
    return pairs


def segment_centroid_matches(pairs: list[SegmentPair],
                             stats_q: list[SegmentStats],
                             stats_r: list[SegmentStats],
                             id_q: str, id_r: str) -> MatchSet:
    """One correspondence per segment pair between the segment centroids."""
    by_q = {s.label: s for s in stats_q}
    by_r = {s.label: s for s in stats_r}
    rows = [np.concatenate([by_q[p.label_q].centroid,
                            by_r[p.label_r].centroid, [p.iou]])
            for p in pairs]
    return MatchSet(id_q, id_r, np.array(rows).reshape(-1, 5))


def refine_with_segments(result: LocalizationResult,
                         centroid_matches: list[MatchSet],
                         references: Mapping[str, ImageView],
                         K_query: Intrinsics,
                         points2d: np.ndarray, points3d: np.ndarray,
                         cfg: RansacConfig) -> LocalizationResult:
    """Guarded pose refinement with segment-centroid correspondences.

    Centroid matches are triangulated against the current pose estimate and
    appended to the inlier 2D-3D set before re-running the refinement; the
    refined pose replaces the input only if its MSAC score over the original
    correspondences does not worsen. Failures pass through unchanged.
    """
    from .ransac import _point_msac
    if not result.success:
        return result
    usable = [m for m in centroid_matches if len(m) > 0 and m.id_b in references]
    if not usable:
        return result
    observations = [_observations_for(m, references, K_query) for m in usable]
    data = _scoring_data(observations)
    extra, valid = _triangulate_against_query(result.pose, data)
    mask = result.inlier_mask
    aug2d = np.vstack([points2d[mask], data.pixels_query[valid]])
    aug3d = np.vstack([points3d[mask], extra[valid]])
    if len(aug2d) < 4:
        return result
    refined = refine_pose(result.pose, aug2d, aug3d, K_query,
                          loss_scale_px=cfg.inlier_threshold_px)
    old_score, _ = _point_msac(result.pose, points2d, points3d, K_query,
                               cfg.inlier_threshold_px)
    new_score, new_mask = _point_msac(refined, points2d, points3d, K_query,
                                      cfg.inlier_threshold_px)
    if new_score > old_score:
        return result
    return LocalizationResult(refined, int(new_mask.sum()), len(points2d),
                              result.iterations_run, new_mask)
