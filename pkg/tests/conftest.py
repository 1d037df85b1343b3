import numpy as np
import pytest
from hypothesis import settings

from obloc.geometry import CameraPose, Intrinsics, backproject_many, exp_so3, project_many
from obloc.ransac import ReferenceObservations
from obloc.synthbench import look_at_pose

settings.register_profile("obloc", deadline=None, max_examples=50)
settings.load_profile("obloc")

K_TEST = Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def random_rotation(rng):
    return exp_so3(rng.normal(size=3))


def rotation_angle_rad(Ra, Rb):
    """Angle between rotations; exact for tiny angles where arccos saturates."""
    Ra, Rb = np.asarray(Ra), np.asarray(Rb)
    frob = np.linalg.norm(Ra.T @ Rb - np.eye(3))
    return 2.0 * np.arcsin(min(frob / (2.0 * np.sqrt(2.0)), 1.0))


def random_pose(rng, scale=1.0):
    return CameraPose(random_rotation(rng), rng.normal(size=3) * scale)


def ring_camera(rng, radius=2.2, angle=None):
    """Camera on a ring around the origin, looking roughly at the center."""
    if angle is None:
        angle = rng.uniform(0.0, 2.0 * np.pi)
    center = np.array([radius * np.cos(angle), rng.normal(scale=0.4),
                       radius * np.sin(angle)])
    return look_at_pose(center, rng.normal(size=3) * 0.1)


def pixels_of(pose, K, points):
    pix, front = project_many(pose, K, points)
    assert front.all()
    return pix


def make_p3p_problem(rng, n=100, noise=0.0, outlier_frac=0.0, K=K_TEST):
    """Absolute-pose fixture: ring camera viewing a unit cloud."""
    pose = ring_camera(rng)
    points = rng.uniform(-1.0, 1.0, size=(n, 3))
    pix = pixels_of(pose, K, points)
    if noise:
        pix = pix + rng.normal(scale=noise, size=pix.shape)
    n_out = int(outlier_frac * n)
    if n_out:
        idx = rng.choice(n, n_out, replace=False)
        pix[idx] = rng.uniform([0, 0], [K.width, K.height], size=(n_out, 2))
    return pose, pix, points


def make_e5p1_problem(rng, n_per_ref=50, n_refs=2, noise=0.0,
                      outlier_frac=0.0, K=K_TEST, spread=1.0):
    """Relative-pose fixture: query plus references spread on a ring."""
    base = rng.uniform(0.0, 2.0 * np.pi)
    offsets = np.concatenate([[0.0],
                              spread * rng.uniform(0.6, 1.0, n_refs)
                              * np.where(np.arange(n_refs) % 2 == 0, 1, -1)])
    poses = [ring_camera(rng, angle=base + off) for off in offsets]
    pose_q, ref_poses = poses[0], poses[1:]
    observations = []
    for pose_r in ref_poses:
        points = rng.uniform(-1.0, 1.0, size=(n_per_ref, 3))
        pix_q = pixels_of(pose_q, K, points)
        pix_r = pixels_of(pose_r, K, points)
        if noise:
            pix_q = pix_q + rng.normal(scale=noise, size=pix_q.shape)
            pix_r = pix_r + rng.normal(scale=noise, size=pix_r.shape)
        n_out = int(outlier_frac * n_per_ref)
        if n_out:
            idx = rng.choice(n_per_ref, n_out, replace=False)
            pix_q[idx] = rng.uniform([0, 0], [K.width, K.height],
                                     size=(n_out, 2))
        observations.append(ReferenceObservations(
            pose_r, pix_q, backproject_many(K, pix_q),
            backproject_many(K, pix_r)))
    return pose_q, observations


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
