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

"""Tests IMU propagation of the nominal state and the covariance."""

import unittest

import numpy as np

from svio.common import DimensionMismatch, InvalidConfig, InvalidDt, is_psd
from svio.geometry import UnitQuaternion
from svio.oracles import numeric_jacobian
from svio.propagation import (
    ImuSample,
    NoiseParams,
    discrete_noise,
    interpolate_sample,
    propagate,
    propagate_covariance,
    propagate_nominal,
    transition_matrix,
    transition_matrix_expm,
)
from svio.state import (
    IMU_DIM,
    ImuState,
    InitialSigmas,
    SlidingWindowState,
    apply_correction,
    augment,
    state_error,
)


def random_imu_state(rng):
    return ImuState(
        q=UnitQuaternion.exp(rng.normal(size=3)),
        p=rng.normal(size=3),
        v=rng.normal(size=3),
        ba=rng.normal(size=3) * 0.05,
        bg=rng.normal(size=3) * 0.01,
    )


def random_sample(rng):
    return ImuSample(0.0, rng.normal(size=3) * 0.3, rng.normal(size=3) + [0.0, 0.0, 9.81])


class NoiseParamsTest(unittest.TestCase):
    def test_defaults_valid(self):
        NoiseParams().validate()

    def test_zero_noise(self):
        noise = NoiseParams.zero()
        self.assertRaises(InvalidConfig, noise.validate)
        noise.validate(strict=False)

    def test_negative(self):
        self.assertRaises(InvalidConfig, NoiseParams(sigma_a=-1.0).validate, False)

    def test_bad_gravity(self):
        self.assertRaises(InvalidConfig, NoiseParams(gravity=(0.0, 9.81)).validate)  # type: ignore

    def test_continuous_covariance(self):
        noise = NoiseParams(sigma_a=1.0, sigma_ba=2.0, sigma_g=3.0, sigma_bg=4.0)
        Q = noise.continuous_covariance()
        np.testing.assert_array_equal(np.diag(Q), np.repeat([1.0, 4.0, 9.0, 16.0], 3))


class NominalTest(unittest.TestCase):
    def test_stationary(self):
        state = ImuState(p=np.array([1.0, 2.0, 3.0]))
        sample = ImuSample(0.0, np.zeros(3), [0.0, 0.0, 9.81])
        for _ in range(200):
            state = propagate_nominal(state, sample, 0.005, NoiseParams())
        np.testing.assert_allclose(state.p, [1.0, 2.0, 3.0], atol=1e-12)
        np.testing.assert_allclose(state.v, 0.0, atol=1e-12)
        self.assertAlmostEqual(state.t, 1.0, places=12)

    def test_constant_rate_rotation(self):
        sample = ImuSample(0.0, [0.0, 0.0, 1.0], [0.0, 0.0, 9.81])
        state = propagate_nominal(ImuState(), sample, 0.05, NoiseParams())
        self.assertLess(state.q.angle_to(UnitQuaternion.exp([0.0, 0.0, 0.05])), 1e-9)

    def test_free_fall_keeps_velocity_without_gravity(self):
        noise = NoiseParams(gravity=(0.0, 0.0, 0.0))
        state = ImuState(v=np.array([1.0, -2.0, 0.5]))
        moved = propagate_nominal(state, ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.01, noise)
        np.testing.assert_allclose(moved.v, state.v, atol=1e-15)
        np.testing.assert_allclose(moved.p, 0.01 * state.v, atol=1e-15)

    def test_invalid_dt(self):
        sample = ImuSample(0.0, np.zeros(3), np.zeros(3))
        for dt in (0.0, -0.01, 0.1, 0.5):
            self.assertRaises(InvalidDt, propagate_nominal, ImuState(), sample, dt, NoiseParams())

    def test_circle(self):
        """A level circle at constant speed, integrated for a minute."""

        radius, rate, dt = 5.0, 0.2, 0.005

        def truth(t):
            wt = rate * t
            return (
                UnitQuaternion.exp([0.0, 0.0, wt + np.pi / 2]),
                radius * np.array([np.cos(wt), np.sin(wt), 0.0]),
                radius * rate * np.array([-np.sin(wt), np.cos(wt), 0.0]),
            )

        # Heading along the tangent: body rate and specific force are constant.
        sample = ImuSample(0.0, [0.0, 0.0, rate], [0.0, radius * rate**2, 9.81])
        q, p, v = truth(0.0)
        state = ImuState(q=q, p=p, v=v)
        steps = 12000
        for _ in range(steps):
            state = propagate_nominal(state, sample, dt, NoiseParams())

        q, p, v = truth(steps * dt)
        self.assertLess(np.linalg.norm(state.p - p), 1e-6)
        self.assertLess(np.linalg.norm(state.v - v), 1e-6)
        self.assertLess(state.q.angle_to(q), 1e-8)


class TransitionTest(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(19)

    def test_series_matches_expm(self):
        for _ in range(10):
            state, sample = random_imu_state(self.rng), random_sample(self.rng)
            np.testing.assert_allclose(
                transition_matrix(state, sample, 0.005),
                transition_matrix_expm(state, sample, 0.005),
                atol=1e-12,
            )

    def test_euler_order(self):
        state, sample = random_imu_state(self.rng), random_sample(self.rng)
        Phi1 = transition_matrix(state, sample, 0.005, order=1)
        Phi3 = transition_matrix(state, sample, 0.005, order=3)
        self.assertLess(np.abs(Phi1 - Phi3).max(), 1e-3)
        self.assertGreater(np.abs(Phi1 - Phi3).max(), 0.0)
        self.assertRaises(ValueError, transition_matrix, state, sample, 0.005, 4)

    def test_matches_linearized_nominal(self):
        state, sample = random_imu_state(self.rng), random_sample(self.rng)
        window = SlidingWindowState(imu=state, clones=[], P=np.eye(IMU_DIM))
        dt = 0.005
        reference = propagate_nominal(state, sample, dt, NoiseParams())

        def propagated_error(dx):
            perturbed = apply_correction(window, dx).imu
            return state_error(propagate_nominal(perturbed, sample, dt, NoiseParams()), reference)

        numeric = numeric_jacobian(propagated_error, np.zeros(IMU_DIM))
        np.testing.assert_allclose(transition_matrix(state, sample, dt), numeric, atol=1e-3)


class CovarianceTest(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(23)
        self.rng = rng
        imu = random_imu_state(rng)
        A = rng.normal(size=(IMU_DIM, IMU_DIM))
        state = SlidingWindowState(imu=imu, clones=[], P=A @ A.T + np.eye(IMU_DIM))
        self.state = augment(augment(state))
        self.sample = random_sample(rng)

    def test_discrete_noise(self):
        Phi = transition_matrix(self.state.imu, self.sample, 0.005)
        Q = discrete_noise(self.state.imu, self.sample, Phi, 0.005, NoiseParams())
        np.testing.assert_array_equal(Q, Q.T)
        self.assertTrue(is_psd(Q))
        zero = discrete_noise(self.state.imu, self.sample, Phi, 0.005, NoiseParams.zero())
        np.testing.assert_array_equal(zero, 0.0)

    def test_clone_block_untouched(self):
        propagated = propagate(self.state, self.sample, 0.005, NoiseParams())
        np.testing.assert_array_equal(
            propagated.P[IMU_DIM:, IMU_DIM:], self.state.P[IMU_DIM:, IMU_DIM:]
        )
        Phi = transition_matrix(self.state.imu, self.sample, 0.005)
        np.testing.assert_allclose(
            propagated.P[:IMU_DIM, IMU_DIM:], Phi @ self.state.P[:IMU_DIM, IMU_DIM:], atol=1e-12
        )
        self.assertTrue(is_psd(propagated.P))
        self.assertEqual(propagated.clone_ids, self.state.clone_ids)

    def test_stays_psd(self):
        state = self.state
        for _ in range(400):
            state = propagate(state, random_sample(self.rng), 0.005, NoiseParams())
        np.testing.assert_array_equal(state.P, state.P.T)
        self.assertTrue(is_psd(state.P))

    def test_wrong_shape(self):
        self.assertRaises(
            DimensionMismatch, propagate_covariance, self.state, np.eye(3), np.eye(IMU_DIM)
        )


class MonteCarloTest(unittest.TestCase):
    def test_matches_sample_covariance(self):
        rng = np.random.default_rng(29)
        dt, steps, runs = 0.005, 40, 2000
        noise = NoiseParams(sigma_g=0.02, sigma_a=0.05, sigma_bg=2e-3, sigma_ba=0.02)
        P0 = InitialSigmas(theta=0.01, p=0.01, v=0.01, ba=0.01, bg=0.001).covariance()
        start = random_imu_state(rng)
        sample = random_sample(rng)

        nominal = SlidingWindowState(imu=start, clones=[], P=P0)
        for _ in range(steps):
            nominal = propagate(nominal, sample, dt, noise)

        sigma_g = noise.sigma_g / np.sqrt(dt)
        sigma_a = noise.sigma_a / np.sqrt(dt)
        errors = []
        for _ in range(runs):
            dx0 = rng.multivariate_normal(np.zeros(IMU_DIM), P0)
            truth = apply_correction(SlidingWindowState(imu=start, clones=[], P=P0), dx0).imu
            for _ in range(steps):
                noisy = ImuSample(
                    0.0,
                    sample.omega_m + rng.normal(scale=sigma_g, size=3),
                    sample.acc_m + rng.normal(scale=sigma_a, size=3),
                )
                truth = propagate_nominal(truth, noisy, dt, noise)
                truth.bg = truth.bg + rng.normal(scale=noise.sigma_bg * np.sqrt(dt), size=3)
                truth.ba = truth.ba + rng.normal(scale=noise.sigma_ba * np.sqrt(dt), size=3)
            errors.append(state_error(truth, nominal.imu))

        sampled = np.cov(np.array(errors), rowvar=False)
        deviation = np.linalg.norm(sampled - nominal.P) / np.linalg.norm(nominal.P)
        self.assertLess(deviation, 0.15)

    def test_trace_grows(self):
        state = SlidingWindowState(imu=ImuState(), clones=[], P=InitialSigmas().covariance())
        sample = ImuSample(0.0, np.zeros(3), np.array([0.0, 0.0, 9.81]))
        for _ in range(200):
            propagated = propagate(state, sample, 0.005, NoiseParams())
            self.assertGreater(np.trace(propagated.P), np.trace(state.P))
            state = propagated


class InterpolateTest(unittest.TestCase):
    def test_endpoints(self):
        a = ImuSample(1.0, [1.0, 0.0, 0.0], [0.0, 0.0, 9.0])
        b = ImuSample(2.0, [3.0, 0.0, 0.0], [0.0, 0.0, 11.0])
        np.testing.assert_array_equal(interpolate_sample(a, b, 1.0).omega_m, a.omega_m)
        np.testing.assert_array_equal(interpolate_sample(a, b, 2.0).acc_m, b.acc_m)

    def test_outside(self):
        a = ImuSample(1.0, np.zeros(3), np.zeros(3))
        b = ImuSample(2.0, np.zeros(3), np.zeros(3))
        self.assertRaises(ValueError, interpolate_sample, a, b, 2.5)
        self.assertRaises(ValueError, interpolate_sample, a, a, 1.0)

    def test_non_finite_sample(self):
        self.assertRaises(ValueError, ImuSample, 0.0, [np.nan, 0.0, 0.0], np.zeros(3))
