"""LO-RANSAC estimators around the minimal solvers.

Both estimators share MSAC scoring (truncated squared reprojection error in
the query image) and run a damped least-squares refinement on the inlier set
whenever a better model is found. All randomness flows through a counter-based
Philox generator keyed by the config seed, so runs are reproducible and
independent of thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraPose,
    Intrinsics,
    backproject_many,
    exp_so3,
)
from .solvers import (
    AmbiguousCheirality,
    EmptySolutionSet,
    ScaleIndeterminate,
    decompose_essential,
    essential_5pt,
    p3p,
    solve_scale_e5p1,
)


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 10000
    inlier_threshold_px: float = 3.0
    confidence: float = 0.999
    lo_iterations: int = 10
    min_inliers: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.inlier_threshold_px <= 0.0:
            raise ValueError("inlier_threshold_px must be positive")


@dataclass(frozen=True)
class LocalizationResult:
    """Estimated pose with inlier statistics; pose is None on failure."""

    pose: CameraPose | None
    num_inliers: int
    num_correspondences: int
    iterations_run: int
    inlier_mask: np.ndarray

    @property
    def success(self) -> bool:
        return self.pose is not None


def _failure(n: int, iterations: int) -> LocalizationResult:
    return LocalizationResult(None, 0, n, iterations, np.zeros(n, dtype=bool))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; derived streams stay deterministic in parallel."""
    return np.random.Generator(np.random.Philox(key=(seed ^ stream) & (2**64 - 1)))


def _required_iterations(inlier_ratio: float, sample_size: int,
                         confidence: float) -> float:
    """Standard RANSAC stopping count for an all-inlier sample."""
    w = min(max(inlier_ratio, 0.0), 1.0) ** sample_size
    if w <= 0.0:
        return math.inf
    if w >= 1.0:
        return 1.0
    return math.log(1.0 - confidence) / math.log(1.0 - w)


# ---------------------------------------------------------------------------
# reprojection residuals and damped least-squares refinement
# ---------------------------------------------------------------------------

def reprojection_residuals_and_jacobian(pose: CameraPose, points2d: np.ndarray,
                                        points3d: np.ndarray, K: Intrinsics):
    """Stacked pixel residuals (2n,) and their Jacobian (2n, 6).

    The six pose parameters are a left-multiplied axis-angle perturbation of
    the rotation followed by a translation offset:upstream of this function,
    pose(delta) = (exp([w]_x) R, t + dt) with delta = (w, dt) evaluated at 0.
    """
    xc = pose.transform(points3d)
    x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
    u = K.fx * x / z + K.cx
    v = K.fy * y / z + K.cy
    res = np.stack([u - points2d[:, 0], v - points2d[:, 1]], axis=1).reshape(-1)

    n = len(points3d)
    # d(pixel)/d(x_cam)
    duv_dx = np.zeros((n, 2, 3))
    duv_dx[:, 0, 0] = K.fx / z
    duv_dx[:, 0, 2] = -K.fx * x / z**2
    duv_dx[:, 1, 1] = K.fy / z
    duv_dx[:, 1, 2] = -K.fy * y / z**2
    # d(x_cam)/d(w) = -[R X]_x = -[x_cam - t]_x, d(x_cam)/d(dt) = I
    rx = xc - pose.translation
    dx_dw = np.zeros((n, 3, 3))
    dx_dw[:, 0, 1] = rx[:, 2]
    dx_dw[:, 0, 2] = -rx[:, 1]
    dx_dw[:, 1, 0] = -rx[:, 2]
    dx_dw[:, 1, 2] = rx[:, 0]
    dx_dw[:, 2, 0] = rx[:, 1]
    dx_dw[:, 2, 1] = -rx[:, 0]
    jac = np.concatenate([duv_dx @ dx_dw, duv_dx], axis=2).reshape(-1, 6)
    return res, jac


def _huber_cost(res2: np.ndarray, scale: float) -> float:
    """Sum of Huber losses over squared per-point residuals."""
    e = np.sqrt(res2)
    quad = res2
    lin = scale * (2.0 * e - scale)
    return float(np.sum(np.where(e <= scale, quad, lin)))


def refine_pose(initial: CameraPose, points2d: np.ndarray, points3d: np.ndarray,
                K: Intrinsics, loss_scale_px: float = 3.0,
                max_iterations: int = 100) -> CameraPose:
    """Damped least-squares pose refinement of Huber-robustified reprojection error.

    Levenberg-Marquardt schedule: damping x10 on cost increase, x0.1 on
    decrease; stops after max_iterations or when the relative cost change of
    an accepted step drops below 1e-10. The returned pose never has a higher
    robustified cost than the input; correspondences behind the initial pose
    are excluded from the working set.
    """
    points2d = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    points3d = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    front = initial.transform(points3d)[:, 2] > 0
    if front.sum() < 4:
        return initial
    p2, p3 = points2d[front], points3d[front]

    def cost_of(pose):
        xc = pose.transform(p3)
        if np.any(xc[:, 2] <= 0):
            return math.inf
        u = K.fx * xc[:, 0] / xc[:, 2] + K.cx
        v = K.fy * xc[:, 1] / xc[:, 2] + K.cy
        res2 = (u - p2[:, 0]) ** 2 + (v - p2[:, 1]) ** 2
        return _huber_cost(res2, loss_scale_px)

    pose = initial
    cost = cost_of(pose)
    lam = 1e-3
    for _ in range(max_iterations):
        res, jac = reprojection_residuals_and_jacobian(pose, p2, p3, K)
        e = np.sqrt((res.reshape(-1, 2) ** 2).sum(axis=1))
        w = np.where(e <= loss_scale_px, 1.0, loss_scale_px / np.maximum(e, 1e-12))
        wr = np.repeat(w, 2)
        jtj = jac.T @ (jac * wr[:, None])
        jtr = jac.T @ (res * wr)
        try:
            delta = np.linalg.solve(jtj + lam * np.eye(6), -jtr)
        except np.linalg.LinAlgError:
            break
        candidate = CameraPose(exp_so3(delta[:3]) @ pose.rotation,
                               pose.translation + delta[3:])
        new_cost = cost_of(candidate)
        if new_cost < cost:
            rel_change = (cost - new_cost) / max(cost, 1e-300)
            pose, cost = candidate, new_cost
            lam = max(lam * 0.1, 1e-12)
            if rel_change < 1e-10:
                break
        else:
            lam = min(lam * 10.0, 1e12)
            if lam >= 1e12:
                break
    return pose


# ---------------------------------------------------------------------------
# E5+1 estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceObservations:
    """Query matches against one posed reference image, in solver form."""

    pose: CameraPose                    # reference world-to-camera
    pixels_query: np.ndarray            # (n, 2)
    bearings_query: np.ndarray          # (n, 3) unit, query frame
    bearings_ref: np.ndarray            # (n, 3) unit, reference frame

    def __len__(self) -> int:
        return len(self.pixels_query)


@dataclass
class _ScoringData:
    """Flattened per-correspondence quantities shared by all hypotheses."""

    pixels_query: np.ndarray     # (n, 2)
    bearings_query: np.ndarray   # (n, 3)
    ray_origins: np.ndarray      # (n, 3) reference centers, world
    ray_dirs: np.ndarray         # (n, 3) reference rays, world
    group: np.ndarray = field(default=None)  # (n,) reference index per row


def _scoring_data(observations: list[ReferenceObservations]) -> _ScoringData:
    pixels, b_query, origins, dirs, group = [], [], [], [], []
    for idx, obs in enumerate(observations):
        n = len(obs)
        pixels.append(obs.pixels_query)
        b_query.append(obs.bearings_query)
        origins.append(np.tile(obs.pose.center, (n, 1)))
        dirs.append(obs.bearings_ref @ obs.pose.rotation)
        group.append(np.full(n, idx))
    return _ScoringData(np.concatenate(pixels), np.concatenate(b_query),
                        np.concatenate(origins), np.concatenate(dirs),
                        np.concatenate(group))


def _triangulate_against_query(pose_q: CameraPose, data: _ScoringData):
    """Midpoint triangulation of every correspondence against a query pose.

    Returns (points (n, 3), valid (n,)); invalid rows are near-parallel rays
    or negative closest-point depths.
    """
    c_q = pose_q.center
    d_q = data.bearings_query @ pose_q.rotation
    e = data.ray_origins - c_q
    b = np.sum(d_q * data.ray_dirs, axis=1)
    denom = 1.0 - b * b
    valid = denom >= 1e-12
    denom = np.where(valid, denom, 1.0)
    dq_e = np.sum(d_q * e, axis=1)
    dr_e = np.sum(data.ray_dirs * e, axis=1)
    s = (dq_e - b * dr_e) / denom
    t = b * s - dr_e
    valid &= (s > 0) & (t > 0)
    points = 0.5 * (c_q + s[:, None] * d_q + data.ray_origins
                    + t[:, None] * data.ray_dirs)
    return points, valid


def _msac_score(pose_q: CameraPose, data: _ScoringData, K: Intrinsics,
                tau: float):
    """MSAC score, squared residuals, and inlier mask for a query pose."""
    points, valid = _triangulate_against_query(pose_q, data)
    xc = pose_q.transform(points)
    z = xc[:, 2]
    valid &= z > 0
    zs = np.where(valid, z, 1.0)
    u = K.fx * xc[:, 0] / zs + K.cx
    v = K.fy * xc[:, 1] / zs + K.cy
    res2 = (u - data.pixels_query[:, 0]) ** 2 + (v - data.pixels_query[:, 1]) ** 2
    res2 = np.where(valid, res2, np.inf)
    tau2 = tau * tau
    score = float(np.minimum(res2, tau2).sum())
    return score, res2, res2 < tau2


def ransac_e5p1(matches_ref1: ReferenceObservations,
                matches_others: list[ReferenceObservations],
                K_query: Intrinsics, cfg: RansacConfig) -> LocalizationResult:
    """Semi-generalized relative pose: five-point essential against one
    reference plus one scale-fixing correspondence with another.

    Each minimal sample draws five matches to the primary reference and one
    to a different reference; hypotheses are scored with truncated squared
    reprojection error of midpoint-triangulated points over all matches, and
    every new best model is refined on its inliers.
    """
    others = [o for o in matches_others if len(o) > 0]
    data = _scoring_data([matches_ref1] + others)
    n = len(data.pixels_query)
    if len(matches_ref1) < 5 or not others:
        return _failure(n, 0)

    rng = make_rng(cfg.seed)
    tau = cfg.inlier_threshold_px
    other_sizes = np.array([len(o) for o in others])
    best = None  # (score, pose, mask)
    required = math.inf
    iteration = 0
    while iteration < cfg.max_iterations and iteration < required:
        iteration += 1
        sample = rng.choice(len(matches_ref1), size=5, replace=False)
        other_idx = int(rng.integers(len(others)))
        sixth = int(rng.integers(other_sizes[other_idx]))
        obs2 = others[other_idx]
        try:
            candidates = essential_5pt(matches_ref1.bearings_ref[sample],
                                       matches_ref1.bearings_query[sample])
        except EmptySolutionSet:
            continue
        for E in candidates:
            try:
                rel = decompose_essential(E, matches_ref1.bearings_ref[sample],
                                          matches_ref1.bearings_query[sample])
                scale = solve_scale_e5p1(rel, matches_ref1.pose, obs2.pose,
                                         obs2.bearings_query[sixth],
                                         obs2.bearings_ref[sixth])
            except (AmbiguousCheirality, ScaleIndeterminate):
                continue
            if scale <= 0:
                continue
            R_rel, t_dir = rel
            pose_q = CameraPose(
                R_rel @ matches_ref1.pose.rotation,
                R_rel @ matches_ref1.pose.translation + scale * t_dir)
            score, _, mask = _msac_score(pose_q, data, K_query, tau)
            if best is None or score < best[0]:
                best = _local_optimization((score, pose_q, mask), data,
                                           K_query, cfg)
                required = _required_iterations(best[2].sum() / n, 6,
                                                cfg.confidence)
    if best is None or best[2].sum() < cfg.min_inliers:
        return _failure(n, iteration)
    score, pose, mask = best
    return LocalizationResult(pose, int(mask.sum()), n, iteration, mask)


def _truncated_residuals(pose: CameraPose, data: _ScoringData, K: Intrinsics,
                         tau: float) -> np.ndarray:
    """Per-correspondence scoring residuals truncated at tau (tau if invalid)."""
    _, res2, _ = _msac_score(pose, data, K, tau)
    return np.sqrt(np.minimum(res2, tau * tau))


def _local_optimization(best, data: _ScoringData, K: Intrinsics,
                        cfg: RansacConfig):
    """Damped least squares directly on the truncated scoring residuals.

    The residual of each correspondence is a genuine function of the query
    pose (the triangulated point moves with it), so this is a plain LM loop
    with a finite-difference Jacobian over the six pose parameters. Steps are
    accepted only when the MSAC score improves.
    """
    score, pose, mask = best
    tau = cfg.inlier_threshold_px
    lam = 1e-3
    step = 1e-6
    for _ in range(2 * cfg.lo_iterations):
        r = _truncated_residuals(pose, data, K, tau)
        jac = np.empty((len(r), 6))
        for k in range(6):
            d = np.zeros(6)
            d[k] = step
            perturbed = CameraPose(exp_so3(d[:3]) @ pose.rotation,
                                   pose.translation + d[3:])
            jac[:, k] = (_truncated_residuals(perturbed, data, K, tau) - r) / step
        jtj = jac.T @ jac
        jtr = jac.T @ r
        try:
            delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)) + 1e-12 * np.eye(6), -jtr)
        except np.linalg.LinAlgError:
            break
        candidate = CameraPose(exp_so3(delta[:3]) @ pose.rotation,
                               pose.translation + delta[3:])
        new_score, _, new_mask = _msac_score(candidate, data, K, tau)
        if new_score < score:
            improvement = (score - new_score) / max(score, 1e-300)
            score, pose, mask = new_score, candidate, new_mask
            lam = max(lam * 0.1, 1e-10)
            if improvement < 1e-10:
                break
        else:
            lam = min(lam * 10.0, 1e10)
            if lam >= 1e10:
                break
    return score, pose, mask


# ---------------------------------------------------------------------------
# P3P estimator
# ---------------------------------------------------------------------------

def _point_msac(pose: CameraPose, points2d: np.ndarray, points3d: np.ndarray,
                K: Intrinsics, tau: float):
    xc = pose.transform(points3d)
    z = xc[:, 2]
    valid = z > 0
    zs = np.where(valid, z, 1.0)
    u = K.fx * xc[:, 0] / zs + K.cx
    v = K.fy * xc[:, 1] / zs + K.cy
    res2 = (u - points2d[:, 0]) ** 2 + (v - points2d[:, 1]) ** 2
    res2 = np.where(valid, res2, np.inf)
    tau2 = tau * tau
    return float(np.minimum(res2, tau2).sum()), res2 < tau2


def ransac_p3p(points2d: np.ndarray, points3d: np.ndarray, K_query: Intrinsics,
               cfg: RansacConfig) -> LocalizationResult:
    """Absolute pose from 2D-3D correspondences with a P3P minimal solver.

    The best-scoring of the (up to four) P3P roots is kept per sample; MSAC
    reprojection scoring and inlier refinement as in the relative-pose
    estimator, with termination exponent three.
    """
    points2d = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    points3d = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    n = len(points2d)
    if n < 4:
        return _failure(n, 0)

    bearings = backproject_many(K_query, points2d)
    rng = make_rng(cfg.seed)
    tau = cfg.inlier_threshold_px
    best = None
    required = math.inf
    iteration = 0
    while iteration < cfg.max_iterations and iteration < required:
        iteration += 1
        sample = rng.choice(n, size=3, replace=False)
        try:
            candidates = p3p(points3d[sample], bearings[sample])
        except EmptySolutionSet:
            continue
        for pose in candidates:
            score, mask = _point_msac(pose, points2d, points3d, K_query, tau)
            if best is None or score < best[0]:
                best = _lo_points((score, pose, mask), points2d, points3d,
                                  K_query, cfg)
                required = _required_iterations(best[2].sum() / n, 3,
                                                cfg.confidence)
    if best is None or best[2].sum() < cfg.min_inliers:
        return _failure(n, iteration)
    score, pose, mask = best
    return LocalizationResult(pose, int(mask.sum()), n, iteration, mask)


def _lo_points(best, points2d, points3d, K, cfg: RansacConfig):
    score, pose, mask = best
    for _ in range(cfg.lo_iterations):
        if mask.sum() < 4:
            break
        refined = refine_pose(pose, points2d[mask], points3d[mask], K,
                              loss_scale_px=cfg.inlier_threshold_px)
        new_score, new_mask = _point_msac(refined, points2d, points3d, K,
                                          cfg.inlier_threshold_px)
        if new_score >= score:
            break
        score, pose, mask = new_score, refined, new_mask
    return score, pose, mask
