"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with -s to see them)."""

import math
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from obloc import dataio
from obloc.geometry import (
    CameraPose,
    exp_so3,
    normalized,
    position_error,
    rotation_error_deg,
)
from obloc.pipeline import (
    MatchSet,
    localize_e5p1,
    localize_lt,
    lt_point_set,
    match_segments,
    refine_with_segments,
)
from obloc.ransac import (
    RansacConfig,
    ransac_e5p1,
    ransac_p3p,
    reprojection_residuals_and_jacobian,
)
from obloc.solvers import (
    EmptySolutionSet,
    SimilarityTransform,
    align_similarity,
    decompose_essential,
    essential_5pt,
    essential_from_pose,
    essential_matrix_residuals,
    p3p,
    solve_scale_e5p1,
)
from obloc.synthbench import SynthConfig, generate_scene

from conftest import (
    K_TEST,
    make_e5p1_problem,
    make_p3p_problem,
    random_rotation,
    ring_camera,
    rotation_angle_rad,
)
from test_solvers import random_relative_scene, scale_fixture, vector_angle_rad
from test_pipeline import brute_force_match_segments, random_stats


def report(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# criterion: solver exactness (1000 noise-free instances each, >= 99%
# recovered within 1e-6, total runtime < 30 s)
# ---------------------------------------------------------------------------

def test_solver_exactness():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()

    ok_e = 0
    for _ in range(1000):
        R, t, ba, bb = random_relative_scene(rng)
        try:
            sols = essential_5pt(ba, bb)
            R_got, t_got = decompose_essential(
                min(sols, key=lambda E: e_gap(E, essential_from_pose(R, t))),
                ba, bb)
        except Exception:
            continue
        if (rotation_angle_rad(R, R_got) < 1e-6
                and vector_angle_rad(t, t_got) < 1e-6):
            ok_e += 1

    ok_p = 0
    for _ in range(1000):
        pose = ring_camera(rng)
        points = rng.uniform(-1.0, 1.0, size=(3, 3))
        bearings = normalized(pose.transform(points))
        try:
            poses = p3p(points, bearings)
        except EmptySolutionSet:
            continue
        best = min(poses, key=lambda p: np.linalg.norm(p.center - pose.center))
        if (np.linalg.norm(best.center - pose.center) < 1e-6
                and rotation_angle_rad(best.rotation, pose.rotation) < 1e-6):
            ok_p += 1

    ok_s = 0
    n_s = 0
    while n_s < 1000:
        fix = scale_fixture(rng)
        if fix is None:
            continue
        n_s += 1
        rel, p1, p2, bq, br2, s_true = fix
        try:
            s = solve_scale_e5p1(rel, p1, p2, bq, br2)
        except Exception:
            continue
        if abs(s - s_true) < 1e-6 * max(1.0, abs(s_true)):
            ok_s += 1

    elapsed = time.perf_counter() - t0
    ok = (ok_e >= 990 and ok_p >= 990 and ok_s >= 990 and elapsed < 30.0)
    report("solver exactness", ok,
           f"e5pt+decompose {ok_e}/1000, p3p {ok_p}/1000, "
           f"scale {ok_s}/1000, {elapsed:.1f}s")


def e_gap(E1, E2):
    return min(np.linalg.norm(E1 - E2), np.linalg.norm(E1 + E2))


# ---------------------------------------------------------------------------
# criterion: algebraic invariants of every five-point output on 1e4 instances
# ---------------------------------------------------------------------------

def test_algebraic_invariants():
    rng = np.random.default_rng(202)
    checked = 0
    worst_det, worst_trace = 0.0, 0.0
    for _ in range(10000):
        R, t, ba, bb = random_relative_scene(rng)
        try:
            sols = essential_5pt(ba, bb)
        except EmptySolutionSet:
            continue
        for E in sols:
            det_res, trace_res = essential_matrix_residuals(E)
            worst_det = max(worst_det, det_res)
            worst_trace = max(worst_trace, trace_res)
            checked += 1
    ok = checked > 10000 and worst_det <= 1e-8 and worst_trace <= 1e-6
    report("algebraic invariants", ok,
           f"{checked} matrices, max |det| {worst_det:.2e}, "
           f"max trace-constraint {worst_trace:.2e}")


# ---------------------------------------------------------------------------
# criterion: robustness at 30% outliers / 1 px noise, >= 95% of 200 trials,
# deterministic across thread counts
# ---------------------------------------------------------------------------

def _one_e5p1_trial(seed):
    rng = np.random.default_rng(1000 + seed)
    pose_q, obs = make_e5p1_problem(rng, noise=1.0, outlier_frac=0.3)
    res = ransac_e5p1(obs[0], obs[1:], K_TEST, RansacConfig(seed=seed))
    hit = (res.success and position_error(res.pose, pose_q) < 0.05
           and rotation_error_deg(res.pose, pose_q) < 0.5)
    return hit, res


def _one_p3p_trial(seed):
    rng = np.random.default_rng(2000 + seed)
    pose, pix, pts = make_p3p_problem(rng, n=100, noise=1.0, outlier_frac=0.3)
    res = ransac_p3p(pix, pts, K_TEST, RansacConfig(seed=seed))
    hit = (res.success and position_error(res.pose, pose) < 0.05
           and rotation_error_deg(res.pose, pose) < 0.5)
    return hit, res


def test_robustness_monte_carlo():
    good_e = sum(_one_e5p1_trial(s)[0] for s in range(200))
    good_p = sum(_one_p3p_trial(s)[0] for s in range(200))

    # identical results regardless of worker count
    serial = [_one_e5p1_trial(s)[1] for s in range(8)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = [r[1] for r in pool.map(_one_e5p1_trial, range(8))]
    deterministic = all(
        np.array_equal(a.pose.rotation, b.pose.rotation)
        and np.array_equal(a.pose.translation, b.pose.translation)
        and np.array_equal(a.inlier_mask, b.inlier_mask)
        for a, b in zip(serial, threaded) if a.success)

    ok = good_e >= 190 and good_p >= 190 and deterministic
    report("robust estimators", ok,
           f"e5p1 {good_e}/200, p3p {good_p}/200, "
           f"thread-count deterministic: {deterministic}")


# ---------------------------------------------------------------------------
# criterion: end-to-end synth -> localize -> evaluate through the CLI
# ---------------------------------------------------------------------------

def _cli(*argv):
    proc = subprocess.run([sys.executable, "-m", "obloc.cli",
                           *[str(a) for a in argv]],
                          capture_output=True, text=True)
    return proc


def test_end_to_end_cli(tmp_path):
    clean = tmp_path / "clean"
    proc = _cli("synth", "--cameras", 8, "--points", 250, "--queries", 4,
                "--out", clean, "--seed", 33)
    assert proc.returncode == 0, proc.stderr

    recalls = {}
    for solver in ("e5p1", "lt"):
        res = tmp_path / f"clean_{solver}.csv"
        proc = _cli("localize", "--scene", clean / "scene.txt",
                    "--queries", clean / "queries.txt",
                    "--matches", clean / "matches.txt",
                    "--descriptors", clean / "descriptors.gdsc",
                    "--solver", solver, "--out", res, "--seed", 0)
        assert proc.returncode == 0, proc.stderr
        proc = _cli("evaluate", "--results", res,
                    "--gt", clean / "queries.txt",
                    "--thresholds", "0.001,0.01", "--label", "row")
        assert proc.returncode == 0, proc.stderr
        row = next(l for l in proc.stdout.splitlines() if l.startswith("row"))
        recalls[solver] = float(row.split()[1])

    noisy = tmp_path / "noisy"
    _cli("synth", "--cameras", 8, "--points", 250, "--queries", 4,
         "--noise-px", 1.0, "--outlier-frac", 0.2, "--out", noisy,
         "--seed", 44)
    res = tmp_path / "noisy_e5p1.csv"
    proc = _cli("localize", "--scene", noisy / "scene.txt",
                "--queries", noisy / "queries.txt",
                "--matches", noisy / "matches.txt",
                "--descriptors", noisy / "descriptors.gdsc",
                "--solver", "e5p1", "--out", res, "--seed", 0)
    assert proc.returncode == 0, proc.stderr
    proc = _cli("evaluate", "--results", res, "--gt", noisy / "queries.txt",
                "--thresholds", "0.25,2;0.5,5;5,10", "--label", "row")
    row = next(l for l in proc.stdout.splitlines() if l.startswith("row"))
    loosest = float(row.split()[5])

    ok = recalls["e5p1"] == 100.0 and recalls["lt"] == 100.0 and loosest >= 95.0
    report("end-to-end CLI", ok,
           f"clean recall e5p1 {recalls['e5p1']}, lt {recalls['lt']} at "
           f"(1e-3 u, 0.01 deg); noisy loosest-threshold recall {loosest}")


# ---------------------------------------------------------------------------
# criterion: the two pipelines agree on clean fixtures
# ---------------------------------------------------------------------------

def test_lt_e5p1_consistency():
    pos_gaps, rot_gaps = [], []
    for seed in range(10):
        refs, queries, matches, _ = generate_scene(
            SynthConfig(num_cameras=8, num_points=200, num_queries=2,
                        seed=300 + seed))
        views = refs.views()
        for q in queries:
            a = localize_e5p1(q.image_id, q.intrinsics, views, matches,
                              RansacConfig(seed=seed))
            b = localize_lt(q.image_id, q.intrinsics, views, matches,
                            RansacConfig(seed=seed))
            assert a.success and b.success
            pos_gaps.append(position_error(a.pose, b.pose))
            rot_gaps.append(rotation_error_deg(a.pose, b.pose))
    med_pos = sorted(pos_gaps)[(len(pos_gaps) - 1) // 2]
    med_rot = sorted(rot_gaps)[(len(rot_gaps) - 1) // 2]
    ok = med_pos < 0.01 and med_rot < 0.1
    report("lt / e5p1 consistency", ok,
           f"median disagreement {med_pos:.2e} units, {med_rot:.2e} deg "
           f"over {len(pos_gaps)} queries")


# ---------------------------------------------------------------------------
# criterion: analytic Jacobian vs central differences
# ---------------------------------------------------------------------------

def test_refinement_gradient():
    rng = np.random.default_rng(404)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        pose = ring_camera(rng)
        p3 = rng.uniform(-1.0, 1.0, size=(12, 3))
        p2 = rng.uniform([0, 0], [K_TEST.width, K_TEST.height], size=(12, 2))
        _, jac = reprojection_residuals_and_jacobian(pose, p2, p3, K_TEST)
        numeric = np.zeros_like(jac)
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            plus = CameraPose(exp_so3(d[:3]) @ pose.rotation,
                              pose.translation + d[3:])
            minus = CameraPose(exp_so3(-d[:3]) @ pose.rotation,
                               pose.translation - d[3:])
            rp, _ = reprojection_residuals_and_jacobian(plus, p2, p3, K_TEST)
            rm, _ = reprojection_residuals_and_jacobian(minus, p2, p3, K_TEST)
            numeric[:, k] = (rp - rm) / (2.0 * h)
        worst = max(worst, np.abs(jac - numeric).max() / np.abs(numeric).max())
    ok = worst < 1e-4
    report("refinement gradient", ok,
           f"max relative deviation {worst:.2e} over 100 states")


# ---------------------------------------------------------------------------
# criterion: obfuscation operator suite
# ---------------------------------------------------------------------------

def test_obfuscation_suite():
    from obloc.obfuscate import pixelate, render_borders
    from test_obfuscate import brute_force_border_count

    rng = np.random.default_rng(505)
    # unit suite covers all operator examples; re-check the two named here
    borders_ok = True
    for _ in range(100):
        labels = rng.integers(0, 6, size=(20, 20)).astype(np.int32)
        got = int((render_borders(labels) > 0).sum())
        if got != brute_force_border_count(labels):
            borders_ok = False
            break

    pixelate_ok = True
    for factor in (10, 20):
        img = rng.integers(0, 256, size=(97, 123), dtype=np.uint8)
        out = pixelate(img, factor)
        for by in range(0, 97, factor):
            for bx in range(0, 123, factor):
                block = img[by:by + factor, bx:bx + factor].astype(float)
                if abs(float(out[by, bx]) - block.mean()) > 1.0:
                    pixelate_ok = False

    unit = subprocess.run([sys.executable, "-m", "pytest", "-q",
                           "tests/test_obfuscate.py"],
                          capture_output=True, text=True)
    ok = borders_ok and pixelate_ok and unit.returncode == 0
    report("obfuscation operators", ok,
           f"border oracle 100 maps: {borders_ok}, pixelate block-mean: "
           f"{pixelate_ok}, unit suite: {unit.returncode == 0}")


# ---------------------------------------------------------------------------
# criterion: segment matching oracle + guarded refinement
# ---------------------------------------------------------------------------

def test_segment_refinement():
    from obloc.ransac import _point_msac

    rng = np.random.default_rng(606)
    oracle_ok = True
    for _ in range(100):
        stats_q = random_stats(rng, 20, 60)
        stats_r = random_stats(rng, 20, 60)
        got = [(p.label_q, p.label_r)
               for p in match_segments(stats_q, stats_r)]
        if got != brute_force_match_segments(stats_q, stats_r):
            oracle_ok = False
            break

    never_worse = True
    for seed in range(20):
        refs, queries, matches, _ = generate_scene(
            SynthConfig(num_cameras=6, num_points=150, num_queries=1,
                        noise_px=1.0, seed=700 + seed))
        views = refs.views()
        q = queries.records[0]
        cfg = RansacConfig(seed=seed)
        q_matches = [m for m in matches if m.id_a == q.image_id]
        res = localize_lt(q.image_id, q.intrinsics, views, q_matches, cfg)
        if not res.success:
            continue
        p2, p3 = lt_point_set(q.image_id, q.intrinsics, views, q_matches)
        # arbitrary centroid-style extra matches, some deliberately bad
        extra = []
        for rid in list(views)[:2]:
            rows = np.column_stack([
                rng.uniform([0, 0], [640, 480], size=(6, 2)),
                rng.uniform([0, 0], [640, 480], size=(6, 2)),
                rng.uniform(0.2, 1.0, size=(6, 1))])
            extra.append(MatchSet(q.image_id, rid, rows))
        before, _ = _point_msac(res.pose, p2, p3, q.intrinsics,
                                cfg.inlier_threshold_px)
        out = refine_with_segments(res, extra, views, q.intrinsics, p2, p3,
                                   cfg)
        after, _ = _point_msac(out.pose, p2, p3, q.intrinsics,
                               cfg.inlier_threshold_px)
        if after > before + 1e-9:
            never_worse = False
    ok = oracle_ok and never_worse
    report("segment refinement", ok,
           f"exhaustive-oracle equality: {oracle_ok}, guarded acceptance "
           f"never worsens: {never_worse}")


# ---------------------------------------------------------------------------
# criterion: similarity alignment exactness and equivariance
# ---------------------------------------------------------------------------

def test_alignment():
    rng = np.random.default_rng(808)
    exact_ok = True
    for _ in range(50):
        src = rng.normal(size=(40, 3))
        G = SimilarityTransform(rng.uniform(0.5, 3.0), random_rotation(rng),
                                rng.normal(size=3))
        T = align_similarity(src, G.apply(src))
        if (abs(T.scale - G.scale) > 1e-9 * G.scale
                or np.linalg.norm(T.rotation - G.rotation) > 1e-9
                or np.linalg.norm(T.translation - G.translation) > 1e-9):
            exact_ok = False

    equi_ok = True
    for _ in range(50):
        src = rng.normal(size=(30, 3))
        dst = rng.normal(size=(30, 3))
        G = SimilarityTransform(rng.uniform(0.5, 2.0), random_rotation(rng),
                                rng.normal(size=3))
        base = align_similarity(src, dst)
        moved = align_similarity(G.apply(src), dst)
        expected = base.compose(G.inverse())
        if (abs(moved.scale - expected.scale) > 1e-8 * expected.scale
                or np.linalg.norm(moved.rotation - expected.rotation) > 1e-8
                or np.linalg.norm(moved.translation
                                  - expected.translation) > 1e-8):
            equi_ok = False
    ok = exact_ok and equi_ok
    report("similarity alignment", ok,
           f"exact recovery (1e-9): {exact_ok}, equivariance (1e-8): {equi_ok}")


# ---------------------------------------------------------------------------
# criterion: format round-trips and malformed rejection
# ---------------------------------------------------------------------------

def test_format_roundtrips(tmp_path):
    from test_dataio import (MALFORMED_MATCHES, MALFORMED_SCENES,
                             sample_matches, sample_scene)

    rng = np.random.default_rng(909)
    byte_stable = True

    db = sample_scene(rng)
    p1, p2 = tmp_path / "s1.txt", tmp_path / "s2.txt"
    dataio.write_scene(db, p1)
    dataio.write_scene(dataio.read_scene(p1), p2)
    byte_stable &= p1.read_bytes() == p2.read_bytes()

    ms = sample_matches(rng)
    m1, m2 = tmp_path / "m1.txt", tmp_path / "m2.txt"
    dataio.write_matches(ms, m1)
    dataio.write_matches(dataio.read_matches(m1), m2)
    byte_stable &= m1.read_bytes() == m2.read_bytes()

    from obloc.pipeline import GlobalDescriptor
    descs = [GlobalDescriptor.normalized(f"d{i}", rng.normal(size=64))
             for i in range(4)]
    d1, d2 = tmp_path / "d1.gdsc", tmp_path / "d2.gdsc"
    dataio.write_descriptors(descs, d1)
    dataio.write_descriptors(dataio.read_descriptors(d1), d2)
    byte_stable &= d1.read_bytes() == d2.read_bytes()

    labels = rng.integers(0, 500, size=(30, 40)).astype(np.int32)
    l1, l2 = tmp_path / "l1.png", tmp_path / "l2.png"
    dataio.write_labelmap(labels, l1)
    dataio.write_labelmap(dataio.read_labelmap(l1), l2)
    byte_stable &= l1.read_bytes() == l2.read_bytes()

    rejected = 0
    total = 0
    for _, text in MALFORMED_SCENES:
        total += 1
        path = tmp_path / "bad_scene.txt"
        path.write_text(text)
        try:
            dataio.read_scene(path)
        except dataio.ParseError as exc:
            rejected += str(path) in str(exc)
    for _, text in MALFORMED_MATCHES:
        total += 1
        path = tmp_path / "bad_matches.txt"
        path.write_text(text)
        try:
            dataio.read_matches(path)
        except dataio.ParseError as exc:
            rejected += str(path) in str(exc)

    ok = byte_stable and rejected == total and total >= 10
    report("format round-trips", ok,
           f"byte-stable write-read-write: {byte_stable}, malformed corpus "
           f"{rejected}/{total} rejected with positioned errors")


# ---------------------------------------------------------------------------
# criterion: metrics oracle on a hand-computed 10-query fixture
# ---------------------------------------------------------------------------

def test_metrics_oracle():
    from test_synthbench import hand_rows
    from obloc.synthbench import DEFAULT_THRESHOLDS, aggregate

    rep = aggregate(hand_rows(), DEFAULT_THRESHOLDS)
    ok = (rep.recalls == (0.3, 0.5, 0.8) and rep.mpe == 0.40
          and rep.moe == 4.0
          and rep.recalls[0] <= rep.recalls[1] <= rep.recalls[2])
    report("metrics oracle", ok,
           f"recalls {rep.recalls}, MPE {rep.mpe}, MOE {rep.moe} "
           "(failures at +inf, lower-middle median)")
