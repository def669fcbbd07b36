#  Copyright 2026 The svio authors
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#      https://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.

"""Tests quaternions, rotations and the pinhole camera."""

import pickle
import unittest

import numpy as np
from scipy.spatial.transform import Rotation

from svio.common import BehindCamera, InvalidConfig, relative_error
from svio.geometry import (
    PinholeCamera,
    UnitQuaternion,
    is_rotation,
    project,
    projection_jacobian,
    quat_error_compose,
    skew,
)
from svio.oracles import numeric_jacobian


class UnitQuaternionTest(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)

    def random_quaternion(self):
        return UnitQuaternion.exp(self.rng.normal(size=3))

    def test_normalized(self):
        q = UnitQuaternion(1.0, 2.0, 3.0, 4.0)
        self.assertAlmostEqual(float(np.linalg.norm(q.as_array())), 1.0, places=15)

    def test_zero_rejected(self):
        self.assertRaises(ValueError, UnitQuaternion, 0.0, 0.0, 0.0, 0.0)

    def test_matrix_matches_scipy(self):
        for _ in range(20):
            q = self.random_quaternion()
            expected = Rotation.from_quat([q.x, q.y, q.z, q.w]).as_matrix()
            np.testing.assert_allclose(q.to_matrix(), expected, atol=1e-12)
            self.assertTrue(is_rotation(q.to_matrix()))

    def test_product_is_matrix_product(self):
        for _ in range(20):
            a, b = self.random_quaternion(), self.random_quaternion()
            np.testing.assert_allclose(
                (a * b).to_matrix(), a.to_matrix() @ b.to_matrix(), atol=1e-12
            )

    def test_conjugate_inverts(self):
        q = self.random_quaternion()
        np.testing.assert_allclose((q * q.conjugate()).as_array(), [1, 0, 0, 0], atol=1e-15)

    def test_exp_log(self):
        for _ in range(20):
            theta = self.rng.uniform(-1.0, 1.0, size=3)
            np.testing.assert_allclose(UnitQuaternion.exp(theta).log(), theta, atol=1e-12)

    def test_exp_small_angle(self):
        theta = np.array([1e-10, -2e-10, 3e-10])
        np.testing.assert_allclose(UnitQuaternion.exp(theta).log(), theta, rtol=1e-6)

    def test_from_matrix(self):
        q = self.random_quaternion()
        self.assertLess(UnitQuaternion.from_matrix(q.to_matrix()).angle_to(q), 1e-12)

    def test_angle_to(self):
        a = UnitQuaternion.identity()
        b = UnitQuaternion.exp([0.0, 0.0, 0.3])
        self.assertAlmostEqual(b.angle_to(a), 0.3, places=12)

    def test_pickle(self):
        q = self.random_quaternion()
        self.assertEqual(q, pickle.loads(pickle.dumps(q)))

    def test_error_compose_is_global(self):
        # R(δq ⊗ q̂) ≈ (I + [δθ]ₓ) R̂ to first order.
        q_hat = self.random_quaternion()
        delta = np.array([1e-6, -2e-6, 3e-6])
        composed = quat_error_compose(delta, q_hat).to_matrix()
        expected = (np.eye(3) + skew(delta)) @ q_hat.to_matrix()
        np.testing.assert_allclose(composed, expected, atol=1e-11)


class SkewTest(unittest.TestCase):
    def test_cross_product(self):
        rng = np.random.default_rng(2)
        v, w = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-15)
        np.testing.assert_array_equal(skew(v).T, -skew(v))


class ProjectionTest(unittest.TestCase):
    def test_project(self):
        np.testing.assert_allclose(project([2.0, -1.0, 4.0]), [0.5, -0.25])

    def test_behind_camera(self):
        with self.assertRaises(BehindCamera) as context:
            project([0.0, 0.0, -1.0])
        self.assertEqual(context.exception.depth, -1.0)
        self.assertRaises(BehindCamera, projection_jacobian, [0.0, 0.0, 1e-9])

    def test_jacobian_matches_finite_differences(self):
        p_c = np.array([0.3, -0.2, 2.5])
        numeric = numeric_jacobian(project, p_c)
        np.testing.assert_allclose(projection_jacobian(p_c), numeric, atol=1e-7)

    def test_jacobian_over_random_geometries(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            depth = rng.uniform(0.2, 50.0)
            p_c = np.array([*(depth * rng.uniform(-1.5, 1.5, 2)), depth])
            numeric = numeric_jacobian(project, p_c)
            self.assertLess(relative_error(projection_jacobian(p_c), numeric), 1e-5)


class PinholeCameraTest(unittest.TestCase):
    def setUp(self):
        R_ic = Rotation.from_euler("xyz", [-90, 0, 0], degrees=True).as_matrix()
        self.cam = PinholeCamera(400.0, 410.0, 320.0, 240.0, 640, 480, R_ic=R_ic, p_ic=[0.1, 0, 0])

    def test_invalid(self):
        self.assertRaises(InvalidConfig, PinholeCamera, 0.0, 1.0, 0.0, 0.0, 10, 10)
        self.assertRaises(InvalidConfig, PinholeCamera, 1.0, 1.0, 0.0, 0.0, 0, 10)
        self.assertRaises(
            InvalidConfig, PinholeCamera, 1.0, 1.0, 0.0, 0.0, 10, 10, R_ic=2.0 * np.eye(3)
        )

    def test_pixel_roundtrip(self):
        z = np.array([0.1, -0.05])
        np.testing.assert_allclose(self.cam.to_normalized(self.cam.to_pixel(z)), z)

    def test_to_camera_consistent_with_pose(self):
        rng = np.random.default_rng(5)
        R_gi = UnitQuaternion.exp(rng.normal(size=3)).to_matrix()
        p_gi = rng.normal(size=3)
        p_g = rng.normal(size=3) * 4.0
        R_gc, p_gc = self.cam.pose_in_global(R_gi, p_gi)
        np.testing.assert_allclose(
            self.cam.to_camera(R_gi, p_gi, p_g), R_gc.T @ (p_g - p_gc), atol=1e-12
        )

    def test_in_image(self):
        self.assertTrue(self.cam.in_image(np.array([0.0, 0.0])))
        self.assertFalse(self.cam.in_image(np.array([640.0, 10.0])))
        self.assertFalse(self.cam.in_image(np.array([10.0, -0.5])))

    def test_normalized_sigma(self):
        self.assertAlmostEqual(self.cam.normalized_sigma(2.0), 0.005)

    def test_equality(self):
        self.assertEqual(self.cam, pickle.loads(pickle.dumps(self.cam)))
        self.assertNotEqual(self.cam, PinholeCamera(400.0, 410.0, 320.0, 240.0, 640, 480))
