"""Minimal solvers: five-point essential matrix, essential decomposition,
translation-scale recovery against a second reference, P3P, and closed-form
similarity alignment.

Bearing-pair convention: a correspondence (b_a, b_b) between cameras a and b
relates through x_b = R x_a + t, and the essential matrix E = [t]_x R
satisfies b_b.T @ E @ b_a = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose, closest_ray_points, skew

# Tolerances for accepting five-point candidates, matching the published
# invariants of the solver (checked after Frobenius normalization).
E_DET_TOL = 1e-8
E_TRACE_TOL = 1e-6
E_EPIPOLAR_TOL = 1e-8


class EmptySolutionSet(Exception):
    """Minimal problem has no usable solution; caller should resample."""


class AmbiguousCheirality(Exception):
    """No essential decomposition places a strict majority of points in front."""


class ScaleIndeterminate(Exception):
    """Ray configuration is insensitive to the translation scale."""


class DegenerateConfiguration(Exception):
    """Input point set does not constrain the transform."""


@dataclass(frozen=True)
class SimilarityTransform:
    """Mapping x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform mapping x to self(other(x))."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation)

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(
            1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)


# ---------------------------------------------------------------------------
# five-point essential matrix (Nister-style polynomial formulation)
# ---------------------------------------------------------------------------
#
# Polynomial bookkeeping. A candidate E = x*X + y*Y + z*Z + W has entries that
# are degree-1 polynomials in (x, y, z); the rank and trace constraints become
# ten cubic equations over twenty monomials. Coefficient vectors use these
# fixed monomial orders:
#
#   degree 1: [x, y, z, 1]
#   degree 2: [x2, y2, z2, xy, xz, yz, x, y, z, 1]
#   degree 3: [x3, y3, x2y, xy2, x2z, x2, y2z, y2, xyz, xy,
#              xz2, xz, x, yz2, yz, y, z3, z2, z, 1]
#
# The first ten degree-3 monomials form the block eliminated by Gauss-Jordan;
# the remaining ten are at most linear in x and y, which is what lets the
# reduced system collapse to a 3x3 polynomial matrix in z.


def _mul11(a, b):
    """Product of degree-1 coefficient stacks (..., 4) -> (..., 10)."""
    out = np.empty(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (10,))
    out[..., 0] = a[..., 0] * b[..., 0]
    out[..., 1] = a[..., 1] * b[..., 1]
    out[..., 2] = a[..., 2] * b[..., 2]
    out[..., 3] = a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]
    out[..., 4] = a[..., 0] * b[..., 2] + a[..., 2] * b[..., 0]
    out[..., 5] = a[..., 1] * b[..., 2] + a[..., 2] * b[..., 1]
    out[..., 6] = a[..., 0] * b[..., 3] + a[..., 3] * b[..., 0]
    out[..., 7] = a[..., 1] * b[..., 3] + a[..., 3] * b[..., 1]
    out[..., 8] = a[..., 2] * b[..., 3] + a[..., 3] * b[..., 2]
    out[..., 9] = a[..., 3] * b[..., 3]
    return out


def _mul21(a, b):
    """Product of degree-2 (..., 10) and degree-1 (..., 4) stacks -> (..., 20)."""
    out = np.empty(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (20,))
    out[..., 0] = a[..., 0] * b[..., 0]
    out[..., 1] = a[..., 1] * b[..., 1]
    out[..., 2] = a[..., 0] * b[..., 1] + a[..., 3] * b[..., 0]
    out[..., 3] = a[..., 1] * b[..., 0] + a[..., 3] * b[..., 1]
    out[..., 4] = a[..., 0] * b[..., 2] + a[..., 4] * b[..., 0]
    out[..., 5] = a[..., 0] * b[..., 3] + a[..., 6] * b[..., 0]
    out[..., 6] = a[..., 1] * b[..., 2] + a[..., 5] * b[..., 1]
    out[..., 7] = a[..., 1] * b[..., 3] + a[..., 7] * b[..., 1]
    out[..., 8] = a[..., 3] * b[..., 2] + a[..., 4] * b[..., 1] + a[..., 5] * b[..., 0]
    out[..., 9] = a[..., 3] * b[..., 3] + a[..., 6] * b[..., 1] + a[..., 7] * b[..., 0]
    out[..., 10] = a[..., 2] * b[..., 0] + a[..., 4] * b[..., 2]
    out[..., 11] = a[..., 4] * b[..., 3] + a[..., 6] * b[..., 2] + a[..., 8] * b[..., 0]
    out[..., 12] = a[..., 6] * b[..., 3] + a[..., 9] * b[..., 0]
    out[..., 13] = a[..., 2] * b[..., 1] + a[..., 5] * b[..., 2]
    out[..., 14] = a[..., 5] * b[..., 3] + a[..., 7] * b[..., 2] + a[..., 8] * b[..., 1]
    out[..., 15] = a[..., 7] * b[..., 3] + a[..., 9] * b[..., 1]
    out[..., 16] = a[..., 2] * b[..., 2]
    out[..., 17] = a[..., 2] * b[..., 3] + a[..., 8] * b[..., 2]
    out[..., 18] = a[..., 8] * b[..., 3] + a[..., 9] * b[..., 2]
    out[..., 19] = a[..., 9] * b[..., 3]
    return out


def _constraint_rows(basis):
    """10x20 cubic-constraint coefficients for E = x*B0 + y*B1 + z*B2 + B3."""
    # ep[i, j] holds the degree-1 coefficients of entry E[i, j]
    ep = np.stack([basis[0], basis[1], basis[2], basis[3]], axis=-1)

    m1 = _mul11(ep[1, 1], ep[2, 2]) - _mul11(ep[1, 2], ep[2, 1])
    m2 = _mul11(ep[1, 0], ep[2, 2]) - _mul11(ep[1, 2], ep[2, 0])
    m3 = _mul11(ep[1, 0], ep[2, 1]) - _mul11(ep[1, 1], ep[2, 0])
    det = _mul21(m1, ep[0, 0]) - _mul21(m2, ep[0, 1]) + _mul21(m3, ep[0, 2])

    # G = E E^T (degree 2), then T = 2 G E - trace(G) E (degree 3)
    g = _mul11(ep[:, None, :, :], ep[None, :, :, :]).sum(axis=2)
    tr = g[0, 0] + g[1, 1] + g[2, 2]
    ep_kj = np.transpose(ep, (1, 0, 2))
    t = 2.0 * _mul21(g[:, None, :, :], ep_kj[None, :, :, :]).sum(axis=2)
    t -= _mul21(tr, ep)

    return np.vstack([det[None, :], t.reshape(9, 20)])


def _polished_real_roots(coeffs):
    """Real roots of a polynomial, each refined by one Newton step."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return np.empty(0)
    coeffs = coeffs / scale
    roots = np.roots(coeffs)
    real = roots[np.abs(roots.imag) < 1e-6 * (1.0 + np.abs(roots.real))].real
    deriv = np.polyder(coeffs)
    dv = np.polyval(deriv, real)
    safe = np.abs(dv) > 1e-12
    real[safe] -= np.polyval(coeffs, real[safe]) / dv[safe]
    return real


def _canonical_essential(E):
    """Frobenius-normalized E with the largest-magnitude element positive."""
    E = E / np.linalg.norm(E)
    flat = np.abs(E).argmax()
    if E.flat[flat] < 0:
        E = -E
    return E


def essential_matrix_residuals(E):
    """(|det E|, max |2 E E^T E - tr(E E^T) E|) after Frobenius normalization."""
    E = E / np.linalg.norm(E)
    g = E @ E.T
    t = 2.0 * g @ E - np.trace(g) * E
    return abs(np.linalg.det(E)), float(np.abs(t).max())


def essential_5pt(bearings_a: np.ndarray, bearings_b: np.ndarray) -> list[np.ndarray]:
    """All real essential matrices fitting five bearing correspondences.

    Every returned matrix is Frobenius-normalized, sign-canonicalized, and
    satisfies the rank, trace, and epipolar constraints to solver tolerance.
    Raises EmptySolutionSet for degenerate configurations.
    """
    ba = np.asarray(bearings_a, dtype=np.float64)
    bb = np.asarray(bearings_b, dtype=np.float64)
    if ba.shape != (5, 3) or bb.shape != (5, 3):
        raise ValueError("exactly five bearing pairs required")

    # epipolar constraints: rows are outer(b_b, b_a) flattened row-major
    q = (bb[:, :, None] * ba[:, None, :]).reshape(5, 9)
    _, _, vt = np.linalg.svd(q)
    basis = vt[5:9].reshape(4, 3, 3)[::-1]  # x, y, z span the closest nullspace

    rows = _constraint_rows(basis)
    try:
        reduced = np.linalg.solve(rows[:, :10], rows[:, 10:])
    except np.linalg.LinAlgError:
        raise EmptySolutionSet("rank-deficient five-point system") from None

    e, f = reduced[4], reduced[5]
    g, h = reduced[6], reduced[7]
    i, j = reduced[8], reduced[9]

    # For each eliminated pair, subtracting z times the second row cancels the
    # left block and leaves an equation linear in x and y with polynomial
    # coefficients in z (degrees 3, 3, 4).
    def reduce_pair(p, r):
        bx = np.array([-r[0], p[0] - r[1], p[1] - r[2], p[2]])
        by = np.array([-r[3], p[3] - r[4], p[4] - r[5], p[5]])
        b1 = np.array([-r[6], p[6] - r[7], p[7] - r[8], p[8] - r[9], p[9]])
        return bx, by, b1

    b11, b12, b13 = reduce_pair(e, f)
    b21, b22, b23 = reduce_pair(g, h)
    b31, b32, b33 = reduce_pair(i, j)

    def pmul(a, b):
        return np.polymul(a, b)

    n = np.polyadd(
        np.polysub(pmul(b11, np.polysub(pmul(b22, b33), pmul(b23, b32))),
                   pmul(b12, np.polysub(pmul(b21, b33), pmul(b23, b31)))),
        pmul(b13, np.polysub(pmul(b21, b32), pmul(b22, b31))))

    solutions = []
    for z in _polished_real_roots(n):
        bmat = np.array([
            [np.polyval(b11, z), np.polyval(b12, z), np.polyval(b13, z)],
            [np.polyval(b21, z), np.polyval(b22, z), np.polyval(b23, z)],
            [np.polyval(b31, z), np.polyval(b32, z), np.polyval(b33, z)],
        ])
        _, _, vtb = np.linalg.svd(bmat)
        v = vtb[-1]
        if abs(v[2]) < 1e-12:
            continue
        x, y = v[0] / v[2], v[1] / v[2]
        E = _canonical_essential(
            x * basis[0] + y * basis[1] + z * basis[2] + basis[3])
        det_res, trace_res = essential_matrix_residuals(E)
        epi = np.abs(np.einsum("ni,ij,nj->n", bb, E, ba))
        if det_res <= E_DET_TOL and trace_res <= E_TRACE_TOL and epi.max() <= E_EPIPOLAR_TOL:
            solutions.append(E)

    if not solutions:
        raise EmptySolutionSet("no real essential matrix satisfies the constraints")
    return solutions


def relative_depths(R, t, bearing_a, bearing_b):
    """Depths (d_a, d_b) with d_b * b_b = R (d_a * b_a) + t, or None if unstable."""
    A = np.stack([R @ bearing_a, -bearing_b], axis=1)
    ata = A.T @ A
    det = ata[0, 0] * ata[1, 1] - ata[0, 1] * ata[1, 0]
    if abs(det) < 1e-12:
        return None
    rhs = -(A.T @ t)
    da = (ata[1, 1] * rhs[0] - ata[0, 1] * rhs[1]) / det
    db = (-ata[1, 0] * rhs[0] + ata[0, 0] * rhs[1]) / det
    return da, db


def decompose_essential(E: np.ndarray, bearings_a: np.ndarray,
                        bearings_b: np.ndarray):
    """Relative pose (R, t_dir) from E, disambiguated by cheirality.

    Picks the decomposition triangulating the most correspondences in front
    of both cameras; the translation direction is unit-norm and its scale is
    undetermined. Raises AmbiguousCheirality when no candidate places a
    strict majority in front.
    """
    ba = np.atleast_2d(np.asarray(bearings_a, dtype=np.float64))
    bb = np.atleast_2d(np.asarray(bearings_b, dtype=np.float64))
    u, _, vt = np.linalg.svd(E)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = u[:, 2]
    best = None
    for R in (u @ w @ vt, u @ w.T @ vt):
        for tdir in (t, -t):
            count = 0
            for pa, pb in zip(ba, bb):
                d = relative_depths(R, tdir, pa, pb)
                if d is not None and d[0] > 0 and d[1] > 0:
                    count += 1
            if best is None or count > best[0]:
                best = (count, R, tdir)
    count, R, tdir = best
    if 2 * count <= len(ba):
        raise AmbiguousCheirality(
            f"best decomposition sees only {count}/{len(ba)} points in front")
    return R, tdir


def solve_scale_e5p1(rel_pose, pose_ref1: CameraPose, pose_ref2: CameraPose,
                     bearing_query: np.ndarray, bearing_ref2: np.ndarray) -> float:
    """Translation scale from one correspondence with a second reference.

    rel_pose is the (R, t_dir) output of decompose_essential for pairs
    (reference-1 bearing, query bearing), so the query camera satisfies
    x_q = R x_ref1 + s * t_dir. The query center then moves linearly with s
    along u = -R_q.T @ t_dir from the first reference's center, and s is the
    closed-form minimizer of the squared distance between the query's
    world-space ray and the second reference's world-space ray. Raises
    ScaleIndeterminate when the distance derivative coefficient (the motion
    component along the rays' common normal) is below 1e-12.
    """
    R_rel, t_dir = rel_pose
    R_q = R_rel @ pose_ref1.rotation
    u = -R_q.T @ t_dir                      # unit: d(center)/ds
    d_q = R_q.T @ np.asarray(bearing_query, dtype=np.float64)
    d_2 = pose_ref2.rotation.T @ np.asarray(bearing_ref2, dtype=np.float64)
    n = np.cross(d_q, d_2)
    nn = np.linalg.norm(n)
    if nn < 1e-15:
        raise ScaleIndeterminate("sixth-correspondence rays are parallel")
    n = n / nn
    b = float(u @ n)
    if abs(b) < 1e-12:
        raise ScaleIndeterminate("ray distance is insensitive to the scale")
    a = float((pose_ref1.center - pose_ref2.center) @ n)
    return -a / b


# ---------------------------------------------------------------------------
# P3P (classical quartic formulation)
# ---------------------------------------------------------------------------

def _rigid_from_correspondences(world: np.ndarray, camera: np.ndarray) -> CameraPose:
    """Least-squares rigid transform with camera = R @ world + t."""
    mu_w = world.mean(axis=0)
    mu_c = camera.mean(axis=0)
    h = (camera - mu_c).T @ (world - mu_w)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    R = u @ np.diag([1.0, 1.0, d]) @ vt
    return CameraPose(R, mu_c - R @ mu_w)


def p3p(points: np.ndarray, bearings: np.ndarray) -> list[CameraPose]:
    """Camera poses putting three world points onto three bearings.

    Classical law-of-cosines formulation: the point distances along the rays
    reduce to a quartic in the ratio of the second and third distances; each
    positive real root is polished by Newton iterations on the full distance
    system before the pose is recovered by rigid alignment. Returns at most
    four poses, each reprojecting all three points within 1e-8 rad and in
    front of the camera. Raises EmptySolutionSet on collinear points or when
    no real solution exists.
    """
    P = np.asarray(points, dtype=np.float64)
    f = np.asarray(bearings, dtype=np.float64)
    if P.shape != (3, 3) or f.shape != (3, 3):
        raise ValueError("exactly three 2D-3D correspondences required")
    span = np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0]))
    extent = max(np.linalg.norm(P[1] - P[0]), np.linalg.norm(P[2] - P[0]))
    if extent == 0.0 or span < 1e-12 * extent * extent:
        raise EmptySolutionSet("collinear world points")

    a2 = float(np.sum((P[1] - P[2]) ** 2))
    b2 = float(np.sum((P[0] - P[2]) ** 2))
    c2 = float(np.sum((P[0] - P[1]) ** 2))
    ca = float(f[1] @ f[2])
    cb = float(f[0] @ f[2])
    cg = float(f[0] @ f[1])

    # u = s2/s1 eliminated: u = N(v)/D(v); substituted back this yields a
    # quartic in v = s3/s1.
    N = np.array([a2 - c2 - b2, -2.0 * (a2 - c2) * cb, a2 - c2 + b2])
    D = np.array([-2.0 * b2 * ca, 2.0 * b2 * cg])
    q_side = np.array([-c2, 2.0 * c2 * cb, b2 - c2])
    quartic = np.polyadd(
        np.polysub(b2 * np.polymul(N, N), 2.0 * b2 * cg * np.polymul(N, D)),
        np.polymul(q_side, np.polymul(D, D)))

    poses = []
    candidates = []
    for v in _polished_real_roots(quartic):
        if v <= 0:
            continue
        dv = np.polyval(D, v)
        if abs(dv) > 1e-9 * abs(2.0 * b2):
            candidates.append((np.polyval(N, v) / dv, v))
        # When D(v) ~ 0 the linear elimination is mute about u (symmetric
        # configurations); fall back to the quadratic relation between u and v.
        disc = cg * cg - 1.0 + (c2 / b2) * (1.0 + v * v - 2.0 * v * cb)
        if disc >= 0.0:
            root = np.sqrt(disc)
            candidates.append((cg + root, v))
            candidates.append((cg - root, v))
    for uu, v in candidates:
        if uu <= 0:
            continue
        denom = 1.0 + uu * uu - 2.0 * uu * cg
        if denom <= 0:
            continue
        s = np.sqrt(c2 / denom) * np.array([1.0, uu, v])

        # Newton refinement of the three distance equations
        for _ in range(3):
            F = np.array([
                s[1] ** 2 + s[2] ** 2 - 2 * s[1] * s[2] * ca - a2,
                s[0] ** 2 + s[2] ** 2 - 2 * s[0] * s[2] * cb - b2,
                s[0] ** 2 + s[1] ** 2 - 2 * s[0] * s[1] * cg - c2,
            ])
            J = np.array([
                [0.0, 2 * s[1] - 2 * s[2] * ca, 2 * s[2] - 2 * s[1] * ca],
                [2 * s[0] - 2 * s[2] * cb, 0.0, 2 * s[2] - 2 * s[0] * cb],
                [2 * s[0] - 2 * s[1] * cg, 2 * s[1] - 2 * s[0] * cg, 0.0],
            ])
            try:
                s = s - np.linalg.solve(J, F)
            except np.linalg.LinAlgError:
                break
        if np.any(s <= 0):
            continue

        pose = _rigid_from_correspondences(P, s[:, None] * f)
        cam = pose.transform(P)
        if np.any(cam[:, 2] <= 0):
            continue
        rays = cam / np.linalg.norm(cam, axis=1, keepdims=True)
        # atan2 keeps full precision at tiny angles where arccos saturates
        angles = np.arctan2(np.linalg.norm(np.cross(rays, f), axis=1),
                            np.sum(rays * f, axis=1))
        if angles.max() <= 1e-8:
            # distinct P3P solutions are macroscopically separated; anything
            # closer is the same root reached from two candidate branches
            if not any(np.linalg.norm(pose.center - p.center)
                       < 1e-6 * (1.0 + np.linalg.norm(p.center))
                       for p in poses):
                poses.append(pose)

    if not poses:
        raise EmptySolutionSet("no real P3P solution")
    return poses


# ---------------------------------------------------------------------------
# similarity alignment (closed-form least squares)
# ---------------------------------------------------------------------------

def align_similarity(source: np.ndarray, target: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity with target ~ scale * R @ source + t.

    Closed form via the SVD of the centered cross-covariance with
    determinant-corrected rotation; the scale comes from the variance ratio.
    Raises DegenerateConfiguration for fewer than three points or collinear
    point sets.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and target must pair up")
    n = len(src)
    if n < 3:
        raise DegenerateConfiguration("need at least three paired points")
    mu_s = src.mean(axis=0)
    mu_t = dst.mean(axis=0)
    cs = src - mu_s
    ct = dst - mu_t
    for centered in (cs, ct):
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= 1e-10 * sv[0]:
            raise DegenerateConfiguration("point set is collinear")
    cov = ct.T @ cs / n
    u, d, vt = np.linalg.svd(cov)
    sgn = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    corr = np.array([1.0, 1.0, sgn])
    R = u @ np.diag(corr) @ vt
    var_s = float(np.sum(cs ** 2)) / n
    scale = float(d @ corr) / var_s
    t = mu_t - scale * (R @ mu_s)
    return SimilarityTransform(scale, R, t)


def essential_from_pose(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Canonical essential matrix [t]_x R for the pair convention above."""
    return _canonical_essential(skew(t) @ np.asarray(R, dtype=np.float64))
