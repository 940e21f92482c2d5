"""Registration: coarse yaw sweep, planar covariances, GICP refinement."""

import math

import numpy as np
import pytest

from trajtransfer.errors import EmptyCloud, NoCorrespondences, TooFewPoints
from trajtransfer.registration import (
    EPS_PLANE,
    GicpParams,
    coarse_align,
    estimate_covariances,
    generalized_icp,
)
from trajtransfer.se3 import Pose, PointCloud, compose, invert, pose_distance, transform_cloud


def mug_cloud(n=800, seed=0):
    """Cylinder body plus a side handle; yaw-asymmetric."""
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, 2 * math.pi, n)
    z = rng.uniform(0, 0.10, n)
    body = np.stack([0.04 * np.cos(th), 0.04 * np.sin(th), z], axis=1)
    t = rng.uniform(0, 0.03, n // 4)
    handle = np.stack(
        [0.04 + t, 0.008 * np.sin(8 * t), 0.05 + 0.008 * np.cos(8 * t)], axis=1
    )
    return PointCloud(np.vstack([body, handle]))


def cylinder_cloud(n=600, seed=1):
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, 2 * math.pi, n)
    z = rng.uniform(0, 0.1, n)
    return PointCloud(np.stack([0.04 * np.cos(th), 0.04 * np.sin(th), z], axis=1))


class TestCoarseAlign:
    def test_identity(self):
        c = mug_cloud()
        delta = coarse_align(c, c)
        dt, dr = pose_distance(delta, Pose.identity())
        assert dt < 1e-6 and dr < 1e-6

    def test_known_transform_recovery(self):
        c = mug_cloud()
        g = Pose.from_yaw(math.radians(30.0), (0.10, 0.0, 0.0))
        moved = transform_cloud(g, c)
        delta = coarse_align(c, moved)
        dt, dr = pose_distance(delta, g)
        assert dt < 1e-3  # 1 mm
        assert dr < math.radians(2.5)  # half a sweep step

    def test_symmetric_cloud_lowest_angle(self):
        c = cylinder_cloud()
        delta = coarse_align(c, c)
        # every yaw ties on a surface of revolution: the sweep must keep 0
        _, dr = pose_distance(delta, Pose.identity())
        assert dr < math.radians(5.0) + 1e-9

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            coarse_align(PointCloud(np.zeros((0, 3))), mug_cloud())


class TestEstimateCovariances:
    def test_planar_clamp(self):
        rng = np.random.default_rng(4)
        pts = np.zeros((200, 3))
        pts[:, :2] = rng.uniform(-0.1, 0.1, size=(200, 2))
        cov = estimate_covariances(PointCloud(pts)).matrices
        w = np.linalg.eigvalsh(cov)
        np.testing.assert_allclose(w[:, 0], EPS_PLANE * w[:, 2], rtol=1e-9)

    def test_isotropic_blob(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(scale=0.05, size=(400, 3))
        cov = estimate_covariances(PointCloud(pts), k=40).matrices
        w = np.linalg.eigvalsh(cov)
        assert np.median(w[:, 0] / w[:, 2]) > 0.5

    def test_symmetric_psd(self):
        cov = estimate_covariances(mug_cloud()).matrices
        np.testing.assert_allclose(cov, np.transpose(cov, (0, 2, 1)), atol=1e-15)
        assert np.all(np.linalg.eigvalsh(cov) >= 0)

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            estimate_covariances(PointCloud(np.zeros((5, 3))), k=20)


class TestGeneralizedIcp:
    def test_identical_clouds_identity(self):
        c = mug_cloud()
        res = generalized_icp(c, c, Pose.identity())
        dt, dr = pose_distance(res.delta, Pose.identity())
        assert dt < 1e-9 and dr < 1e-9
        assert res.inlier_rmse < 1e-9
        assert res.fitness == 1.0
        assert res.iterations <= GicpParams().max_iterations

    def test_known_transform_from_coarse(self):
        c = mug_cloud(n=1600)
        g = Pose.from_yaw(math.radians(10.0), (0.05, 0.0, 0.0))
        moved = transform_cloud(g, c)
        init = coarse_align(c, moved)
        res = generalized_icp(c, moved, init)
        dt, dr = pose_distance(res.delta, g)
        assert dt < 2e-3
        assert dr < math.radians(1.0)

    def test_small_perturbation_refined(self):
        c = mug_cloud(n=1600)
        init = Pose.from_yaw(math.radians(3.0), (0.004, -0.003, 0.002))
        res = generalized_icp(c, c, init)
        dt, dr = pose_distance(res.delta, Pose.identity())
        assert dt < 2e-3
        assert dr < math.radians(1.0)

    def test_no_correspondences(self):
        c = mug_cloud()
        far = Pose(translation=np.array([10.0, 0.0, 0.0]))
        with pytest.raises(NoCorrespondences):
            generalized_icp(c, c, far)

    def test_consistency_random_inits(self, rng):
        c = mug_cloud(n=1200)
        good = 0
        for _ in range(20):
            init = Pose.from_yaw(
                rng.uniform(-math.radians(4), math.radians(4)),
                rng.uniform(-0.005, 0.005, size=3),
            )
            res = generalized_icp(c, c, init)
            dt, dr = pose_distance(res.delta, Pose.identity())
            if dt < 2e-3 and dr < math.radians(1.0):
                good += 1
        assert good >= 19  # >= 95%

    def test_symmetric_translation_only(self):
        # surface of revolution: yaw is unconstrained, translation is not
        c = cylinder_cloud(n=900)
        g = Pose(translation=np.array([0.03, 0.02, 0.0]))
        moved = transform_cloud(g, c)
        res = generalized_icp(c, moved, coarse_align(c, moved))
        assert np.linalg.norm(res.delta.translation - g.translation) < 2e-3

    def test_left_equivariance(self, rng):
        c = mug_cloud(n=1200)
        for _ in range(5):
            g = Pose.from_yaw(rng.uniform(-math.pi, math.pi), rng.uniform(-0.1, 0.1, size=3) * [1, 1, 0])
            moved = transform_cloud(g, c)
            res = generalized_icp(c, moved, coarse_align(c, moved))
            dt, dr = pose_distance(res.delta, g)
            assert dt < 2e-3 and dr < math.radians(1.0)

    def test_result_serializable(self):
        c = mug_cloud()
        res = generalized_icp(c, c, Pose.identity())
        d = res.to_dict()
        assert set(d) == {"delta", "inlier_rmse", "fitness", "iterations", "converged"}
        assert len(d["delta"]) == 7
