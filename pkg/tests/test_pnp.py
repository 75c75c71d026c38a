"""PnP initialisation, LM refinement and RANSAC."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markerloc.errors import ConsensusFailure, DegenerateGeometry
from markerloc.geometry import (RigidTransform, camera_pose_to_extrinsics, project_points,
                                rot_x, rot_y, rotation_angle, so3_exp)
from markerloc.pnp import (Correspondence, Correspondences, PnPConfig, dlt_init,
                           is_coplanar, lm_refine, planar_init, ransac_pnp,
                           reprojection_rms, solve_pnp)
from markerloc.scene_sim import (DEFAULT_INTRINSICS, Marker, camera_looking_down,
                                 circular_placement, marker_corners_world)

from conftest import HIGH, SWEEP_IDS


def corners_of(scene, ids=None):
    ids = scene.ids if ids is None else ids
    return np.vstack([marker_corners_world(scene.marker(i)) for i in ids])


def exact(K, pose, world, noise=0.0, rng=None):
    extr = camera_pose_to_extrinsics(pose)
    uv = project_points(K, extr, world)
    if noise:
        uv = uv + rng.normal(scale=noise, size=uv.shape)
    return Correspondences(world, uv)


def assert_pose_close(est: RigidTransform, truth: RigidTransform, tol=1e-6):
    assert np.linalg.norm(est.translation - truth.translation) < tol
    assert rotation_angle(est.rotation, truth.rotation) < tol


@pytest.fixture
def seven_markers(floor_scene):
    return corners_of(floor_scene, SWEEP_IDS)


@pytest.fixture
def tilted_pose():
    return camera_looking_down(0.12, -0.07, HIGH, 0.4, tilt=(0.05, -0.03))


class TestCorrespondences:
    def test_from_list(self):
        items = [Correspondence((0, 0, i), (i, 2 * i), 7, i % 4) for i in range(5)]
        c = Correspondences.from_list(items)
        assert len(c) == 5
        np.testing.assert_array_equal(c.marker_ids, 7)
        np.testing.assert_array_equal(c.corner_indices, [0, 1, 2, 3, 0])

    def test_bad_corner_index(self):
        with pytest.raises(ValueError):
            Correspondence((0, 0, 0), (0, 0), corner_index=4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Correspondences(np.zeros((3, 3)), np.zeros((2, 2)))

    def test_slicing_and_concat(self):
        c = Correspondences(np.arange(12.0).reshape(4, 3), np.arange(8.0).reshape(4, 2))
        both = c[:2].concat(c[2:])
        np.testing.assert_array_equal(both.world, c.world)
        np.testing.assert_array_equal(both.image, c.image)


class TestReprojectionRms:
    def test_exact_is_zero(self, K, overhead_pose, seven_markers):
        corr = exact(K, overhead_pose, seven_markers)
        assert reprojection_rms(K, camera_pose_to_extrinsics(overhead_pose), corr) < 1e-12

    def test_three_four_five(self, small_K):
        e = RigidTransform.identity()
        p = np.array([[0.1, 0.2, 2.0]])
        uv = project_points(small_K, e, p) + [3.0, 4.0]
        assert reprojection_rms(small_K, e, Correspondences(p, uv)) == pytest.approx(5.0)

    def test_matches_brute_force(self, K, overhead_pose, seven_markers, rng):
        corr = exact(K, overhead_pose, seven_markers, 0.5, rng)
        e = camera_pose_to_extrinsics(overhead_pose)
        R, t = e.rotation, e.translation
        total = 0.0
        for X, (u, v) in zip(corr.world, corr.image):
            x, y, z = R @ X + t
            du = K.fx * x / z + K.px - u
            dv = K.fy * y / z + K.py - v
            total += du * du + dv * dv
        assert reprojection_rms(K, e, corr) == pytest.approx(math.sqrt(total / len(corr)),
                                                             rel=1e-12)


class TestDltInit:
    def test_two_depth_planes(self, small_K, rng):
        pose = RigidTransform(rot_x(0.2) @ rot_y(-0.1), [0.1, -0.2, 3.0]).inverse()
        world = np.array([[x, y, z] for z in (0.0, 0.5) for x in (-0.5, 0.5)
                          for y in (-0.4, 0.4)])
        est = dlt_init(small_K, exact(small_K, pose, world))
        assert_pose_close(est.inverse(), pose)

    def test_random_cloud(self, K, rng):
        for _ in range(20):
            pose = camera_looking_down(*rng.uniform(-0.2, 0.2, 2), 2.0, rng.uniform(-3, 3),
                                       tilt=tuple(rng.uniform(-0.1, 0.1, 2)))
            world = np.column_stack([rng.uniform(-0.5, 0.5, (12, 2)), rng.uniform(0, 0.6, 12)])
            est = dlt_init(K, exact(K, pose, world))
            assert_pose_close(est.inverse(), pose)

    def test_coplanar_rejected(self, K, overhead_pose, seven_markers):
        with pytest.raises(DegenerateGeometry):
            dlt_init(K, exact(K, overhead_pose, seven_markers))

    def test_five_points_rejected(self, K, overhead_pose, rng):
        world = np.column_stack([rng.uniform(-0.5, 0.5, (5, 2)), rng.uniform(0, 0.5, 5)])
        with pytest.raises(DegenerateGeometry):
            dlt_init(K, exact(K, overhead_pose, world))


class TestPlanarInit:
    def test_single_marker(self, K, overhead_pose):
        world = marker_corners_world(Marker(0, (0.0, 0.0, 0.0)))
        est = planar_init(K, exact(K, overhead_pose, world))
        assert_pose_close(est.inverse(), overhead_pose)

    def test_seven_markers(self, K, tilted_pose, seven_markers):
        assert len(seven_markers) == 28
        est = planar_init(K, exact(K, tilted_pose, seven_markers))
        assert_pose_close(est.inverse(), tilted_pose)

    def test_inclined_plane(self, K):
        # marker plane not aligned with any world axis
        normal = np.array([0.3, -0.2, 1.0])
        normal /= np.linalg.norm(normal)
        world = marker_corners_world(Marker(0, (0.1, 0.2, 0.3), tuple(normal), 0.7))
        pose = camera_looking_down(0.0, 0.0, 1.5)
        est = planar_init(K, exact(K, pose, world))
        assert_pose_close(est.inverse(), pose)

    def test_three_points(self, K, overhead_pose):
        world = marker_corners_world(Marker(0, (0.0, 0.0, 0.0)))[:3]
        with pytest.raises(DegenerateGeometry):
            planar_init(K, exact(K, overhead_pose, world))

    def test_collinear(self, K, overhead_pose):
        world = np.array([[x, 0.0, 0.0] for x in (-0.3, -0.1, 0.1, 0.3)])
        with pytest.raises(DegenerateGeometry):
            planar_init(K, exact(K, overhead_pose, world))


class TestLmRefine:
    def test_ground_truth_init(self, K, overhead_pose, seven_markers):
        corr = exact(K, overhead_pose, seven_markers)
        res = lm_refine(K, camera_pose_to_extrinsics(overhead_pose), corr)
        assert res.iterations_used == 0
        assert res.cost_history[-1] < 1e-12
        assert_pose_close(res.camera_pose, overhead_pose, 1e-12)

    def test_perturbed_init_converges(self, K, tilted_pose, seven_markers):
        corr = exact(K, tilted_pose, seven_markers)
        truth = camera_pose_to_extrinsics(tilted_pose)
        axis = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
        init = RigidTransform(so3_exp(math.radians(2.0) * axis) @ truth.rotation,
                              truth.translation + [0.05, 0.0, 0.0])
        res = lm_refine(K, init, corr)
        assert_pose_close(res.camera_pose, tilted_pose)

    def test_noisy_costs_monotone(self, K, tilted_pose, seven_markers, rng):
        for _ in range(20):
            corr = exact(K, tilted_pose, seven_markers, 0.5, rng)
            res = solve_pnp(K, corr)
            h = np.array(res.cost_history)
            assert h[-1] <= h[0]
            assert np.all(np.diff(h) <= 0)

    def test_result_fields(self, K, overhead_pose, seven_markers, rng):
        corr = exact(K, overhead_pose, seven_markers, 0.5, rng)
        res = solve_pnp(K, corr)
        assert res.rms_reprojection_error >= 0
        assert res.inlier_flags.all() and len(res.inlier_flags) == len(corr)
        np.testing.assert_allclose(res.camera_pose.matrix(),
                                   np.linalg.inv(res.extrinsics.matrix()), atol=1e-12)
        assert res.rms_reprojection_error == pytest.approx(
            reprojection_rms(K, res.extrinsics, corr), rel=1e-9)


class TestSolvePnp:
    def test_single_marker(self, K, tilted_pose):
        world = marker_corners_world(Marker(0, (0.1, 0.0, 0.0), rotation=math.pi / 4))
        assert_pose_close(solve_pnp(K, exact(K, tilted_pose, world)).camera_pose, tilted_pose)

    def test_seven_markers(self, K, tilted_pose, seven_markers):
        res = solve_pnp(K, exact(K, tilted_pose, seven_markers))
        assert_pose_close(res.camera_pose, tilted_pose)

    def test_non_coplanar_path(self, K, tilted_pose, rng):
        world = np.column_stack([rng.uniform(-0.5, 0.5, (10, 2)), rng.uniform(0, 0.5, 10)])
        assert not is_coplanar(world)
        assert_pose_close(solve_pnp(K, exact(K, tilted_pose, world)).camera_pose, tilted_pose)

    def test_three_correspondences(self, K, overhead_pose, seven_markers):
        with pytest.raises(DegenerateGeometry):
            solve_pnp(K, exact(K, overhead_pose, seven_markers[:3]))

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(1.2, 3.5),
           st.floats(-math.pi, math.pi), st.floats(-0.15, 0.15), st.floats(-0.15, 0.15))
    def test_noiseless_recovery(self, x, y, h, yaw, tx, ty):
        pose = camera_looking_down(x, y, h, yaw, tilt=(tx, ty))
        world = corners_of(circular_placement(), (0, 2, 4, 6))
        assert_pose_close(solve_pnp(DEFAULT_INTRINSICS,
                                    exact(DEFAULT_INTRINSICS, pose, world)).camera_pose, pose)

    def test_adding_consistent_points_does_not_raise_rms(self, K, tilted_pose, floor_scene, rng):
        base_world = corners_of(floor_scene, (0, 3, 5))
        extra_world = corners_of(floor_scene, (9, 12))
        for _ in range(10):
            base = exact(K, tilted_pose, base_world, 0.5, rng)
            res = solve_pnp(K, base)
            extra = exact(K, res.camera_pose, extra_world)
            refit = solve_pnp(K, base.concat(extra))
            assert refit.rms_reprojection_error <= res.rms_reprojection_error + 1e-9


def with_outliers(K, pose, world, idx, shift=50.0):
    corr = exact(K, pose, world)
    uv = corr.image.copy()
    uv[idx] += [shift, 0.0]
    return Correspondences(world, uv)


class TestRansac:
    def test_all_inliers_match_solve(self, K, tilted_pose, seven_markers):
        corr = exact(K, tilted_pose, seven_markers)
        r = ransac_pnp(K, corr, rng_seed=3)
        s = solve_pnp(K, corr)
        assert r.inlier_flags.all()
        assert_pose_close(r.camera_pose, s.camera_pose, 1e-9)

    def test_flags_displaced_points(self, K, tilted_pose, floor_scene):
        world = corners_of(floor_scene, range(7))
        bad = [1, 9, 14, 26]
        corr = with_outliers(K, tilted_pose, world, bad)
        res = ransac_pnp(K, corr, rng_seed=11)
        expected = np.ones(len(world), bool)
        expected[bad] = False
        np.testing.assert_array_equal(res.inlier_flags, expected)
        assert_pose_close(res.camera_pose, tilted_pose)

    def test_random_image_points_fail(self, K, rng):
        world = corners_of(circular_placement(), (0, 4))
        uv = rng.uniform([0, 0], [K.width, K.height], size=(8, 2))
        with pytest.raises(ConsensusFailure):
            ransac_pnp(K, Correspondences(world, uv), rng_seed=5)

    def test_deterministic(self, K, tilted_pose, floor_scene, rng):
        world = corners_of(floor_scene, range(7))
        corr = with_outliers(K, tilted_pose, world, [0, 5])
        corr = Correspondences(world, corr.image + rng.normal(scale=0.5, size=corr.image.shape))
        a = ransac_pnp(K, corr, rng_seed=99)
        b = ransac_pnp(K, corr, rng_seed=99)
        assert a.extrinsics.matrix().tobytes() == b.extrinsics.matrix().tobytes()
        assert a.rms_reprojection_error == b.rms_reprojection_error
        np.testing.assert_array_equal(a.inlier_flags, b.inlier_flags)

    def test_too_few_points(self, K, overhead_pose, seven_markers):
        with pytest.raises(DegenerateGeometry):
            ransac_pnp(K, exact(K, overhead_pose, seven_markers[:3]))


class TestConfig:
    def test_defaults(self):
        c = PnPConfig()
        assert (c.max_lm_iterations, c.lm_cost_tolerance, c.lm_initial_damping) == (50, 1e-10, 1e-3)
        assert (c.ransac_iterations, c.ransac_reprojection_threshold, c.min_inliers) == (100, 2.0, 4)

    @pytest.mark.parametrize("kw", [{"min_inliers": 3}, {"ransac_iterations": 0},
                                    {"lm_initial_damping": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PnPConfig(**kw)
