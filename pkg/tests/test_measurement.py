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

"""Tests residuals, stacking, gating and triangulation."""

import unittest

import numpy as np

from svio.common import InsufficientTrack, LowParallax, relative_error
from svio.geometry import project
from svio.measurement import (
    Frame,
    FrameObservation,
    Observation,
    chi2_threshold,
    gate_observations,
    max_parallax,
    residual_and_jacobians,
    stack,
    triangulate,
)
from svio.oracles import numeric_jacobian, random_problem
from svio.state import Landmark, apply_correction


def exact_observation(problem, lid, clone_id, cam_index, p_g=None):
    """A noise-free sighting of ``p_g`` (default: the true landmark)."""

    clone = problem.state.clone(clone_id)
    cam = problem.cams[cam_index]
    point = problem.truth[lid] if p_g is None else p_g
    z = project(cam.to_camera(clone.R, clone.p, point))
    return Observation(lid, clone_id, cam_index, z, cam.normalized_sigma(1.0))


class ObservationTest(unittest.TestCase):
    def test_validation(self):
        self.assertRaises(ValueError, Observation, 1, 2, 0, [0.1, np.inf], 1e-3)
        self.assertRaises(ValueError, Observation, 1, 2, 0, [0.1, 0.2, 0.3], 1e-3)
        self.assertRaises(ValueError, Observation, 1, 2, 0, [0.1, 0.2], 0.0)

    def test_frame_landmark_ids(self):
        frame = Frame(
            t=0.5,
            observations=[
                FrameObservation(3, 0, np.zeros(2)),
                FrameObservation(3, 1, np.zeros(2)),
                FrameObservation(8, 0, np.zeros(2)),
            ],
        )
        self.assertEqual(frame.landmark_ids, {3, 8})


class JacobianTest(unittest.TestCase):
    def setUp(self):
        self.problem = random_problem(np.random.default_rng(31), 4, 10)

    def predicted(self, obs, lm, dx):
        state = apply_correction(self.problem.state, dx)
        clone = state.clone(obs.clone_id)
        cam = self.problem.cams[obs.cam_index]
        return project(cam.to_camera(clone.R, clone.p, lm.p_G))

    def test_against_finite_differences(self):
        state = self.problem.state
        for obs in self.problem.observations[:12]:
            lm = self.problem.landmarks[obs.landmark_id]
            r, J_A, J_f = residual_and_jacobians(obs, state, lm, self.problem.cams[obs.cam_index])

            block = state.clone_slice(obs.clone_id)

            def clone_prediction(delta):
                dx = np.zeros(state.dim)
                dx[block] = delta
                return self.predicted(obs, lm, dx)

            def landmark_prediction(p_g):
                return self.predicted(obs, Landmark(id=lm.id, p_G=p_g), np.zeros(state.dim))

            numeric_A = numeric_jacobian(clone_prediction, np.zeros(6))
            numeric_f = numeric_jacobian(landmark_prediction, lm.p_G)
            np.testing.assert_allclose(J_A, numeric_A, atol=1e-6)
            np.testing.assert_allclose(J_f, numeric_f, atol=1e-6)
            np.testing.assert_allclose(r, obs.z - landmark_prediction(lm.p_G), atol=1e-12)

    def test_over_random_geometries(self):
        rng = np.random.default_rng(32)
        checked = 0
        while checked < 1000:
            self.problem = random_problem(rng, int(rng.integers(2, 7)), 5)
            state = self.problem.state
            for obs in self.problem.observations:
                lm = self.problem.landmarks[obs.landmark_id]
                cam = self.problem.cams[obs.cam_index]
                _, J_A, J_f = residual_and_jacobians(obs, state, lm, cam)
                block = state.clone_slice(obs.clone_id)

                def clone_prediction(delta):
                    dx = np.zeros(state.dim)
                    dx[block] = delta
                    return self.predicted(obs, lm, dx)

                def landmark_prediction(p_g):
                    return self.predicted(obs, Landmark(id=lm.id, p_G=p_g), np.zeros(state.dim))

                numeric_A = numeric_jacobian(clone_prediction, np.zeros(6))
                numeric_f = numeric_jacobian(landmark_prediction, lm.p_G)
                self.assertLess(relative_error(J_A, numeric_A), 1e-5)
                self.assertLess(relative_error(J_f, numeric_f), 1e-5)
                checked += 1


class StackTest(unittest.TestCase):
    def setUp(self):
        self.problem = random_problem(np.random.default_rng(37), 5, 12)

    def stacked(self, observations):
        p = self.problem
        return stack(observations, p.state, p.landmarks, p.cams)

    def test_shapes(self):
        model = self.stacked(self.problem.observations)
        self.assertEqual(model.M, 2 * len(self.problem.observations))
        self.assertEqual(model.Jx.shape, (model.M, self.problem.state.dim))
        self.assertEqual(model.Jf.shape, (model.M, 3 * 12))
        self.assertEqual(model.landmark_ids, sorted(self.problem.landmarks))
        self.assertEqual(model.skipped, {})

    def test_landmark_jacobian_block_diagonal(self):
        model = self.stacked(self.problem.observations)
        Jf = model.Jf
        for k, rows in enumerate(model.landmark_rows):
            outside = np.delete(Jf[rows], np.s_[3 * k : 3 * k + 3], axis=1)
            np.testing.assert_array_equal(outside, 0.0)

    def test_order_independent(self):
        shuffled = list(self.problem.observations)
        np.random.default_rng(1).shuffle(shuffled)
        a = self.stacked(self.problem.observations)
        b = self.stacked(shuffled)
        np.testing.assert_array_equal(a.r, b.r)
        np.testing.assert_array_equal(a.Jx, b.Jx)
        np.testing.assert_array_equal(a.jf_rows, b.jf_rows)

    def test_single_clone_landmark_skipped(self):
        clone_id = self.problem.state.clone_ids[0]
        observations = [obs for obs in self.problem.observations if obs.landmark_id != 0]
        observations.append(exact_observation(self.problem, 0, clone_id, 0))
        observations.append(exact_observation(self.problem, 0, clone_id, 1))
        model = self.stacked(observations)
        self.assertIn(0, model.skipped)
        self.assertNotIn(0, model.landmark_ids)

    def test_behind_camera_excluded(self):
        p = self.problem
        behind = Landmark(id=99, p_G=p.state.clones[0].p - 5.0 * p.state.clones[0].R[:, 2])
        landmarks = dict(p.landmarks)
        landmarks[99] = behind
        observations = [
            Observation(99, clone_id, 0, [0.0, 0.0], p.observations[0].u)
            for clone_id in p.state.clone_ids
        ]
        model = stack(observations + p.observations, p.state, landmarks, p.cams)
        self.assertEqual(len(model.excluded), len(p.state.clone_ids))
        self.assertIn(99, model.skipped)

    def test_mixed_noise_rejected(self):
        obs = self.problem.observations[0]
        odd = Observation(obs.landmark_id, obs.clone_id, obs.cam_index, obs.z, 2.0 * obs.u)
        self.assertRaises(ValueError, self.stacked, [obs, odd])

    def test_empty(self):
        model = self.stacked([])
        self.assertEqual(model.M, 0)
        self.assertEqual(model.Jx.shape, (0, self.problem.state.dim))

    def test_restricted(self):
        model = self.stacked(self.problem.observations)
        keep = [2, 5, 7]
        reduced = model.restricted(keep)
        self.assertEqual(reduced.landmark_ids, keep)
        rows = np.concatenate([np.arange(model.M)[model.landmark_rows[k]] for k in keep])
        np.testing.assert_array_equal(reduced.r, model.r[rows])
        np.testing.assert_array_equal(reduced.Jx, model.Jx[rows])
        self.assertEqual(reduced.M, rows.size)


class GateTest(unittest.TestCase):
    def test_threshold(self):
        self.assertAlmostEqual(chi2_threshold(0.95, 2), 5.991464547107979, places=9)
        self.assertGreater(chi2_threshold(0.99, 2), chi2_threshold(0.95, 2))

    def test_outlier_rejected(self):
        p = random_problem(np.random.default_rng(41), 3, 5)
        landmarks = {
            lid: Landmark(id=lid, p_G=p.truth[lid], P_f=lm.P_f) for lid, lm in p.landmarks.items()
        }
        clone_ids = p.state.clone_ids
        inliers = [exact_observation(p, lid, clone_ids[0], 0) for lid in range(5)]
        outlier = exact_observation(p, 3, clone_ids[1], 0)
        outlier = Observation(3, outlier.clone_id, 0, outlier.z + [0.3, -0.3], outlier.u)

        accepted, rejected = gate_observations(
            inliers + [outlier], p.state, landmarks, p.cams, chi2_threshold()
        )
        self.assertEqual([obs.landmark_id for obs in accepted], [0, 1, 2, 3, 4])
        self.assertEqual(len(rejected), 1)
        self.assertIs(rejected[0], outlier)


class TriangulationTest(unittest.TestCase):
    def setUp(self):
        self.problem = random_problem(np.random.default_rng(43), 4, 6, stereo=False)

    def test_exact(self):
        p = self.problem
        for lid in p.truth:
            track = [exact_observation(p, lid, clone_id, 0) for clone_id in p.state.clone_ids]
            p_g, P_f = triangulate(track, p.state, p.cams, min_parallax=np.radians(0.5))
            np.testing.assert_allclose(p_g, p.truth[lid], atol=1e-8)
            np.testing.assert_allclose(P_f, P_f.T)
            self.assertGreater(np.linalg.eigvalsh(P_f)[0], 0.0)

    def test_noisy_within_covariance(self):
        p = self.problem
        lid = 0
        track = [exact_observation(p, lid, clone_id, 0) for clone_id in p.state.clone_ids]
        rng = np.random.default_rng(0)
        noisy = [
            Observation(lid, obs.clone_id, 0, obs.z + rng.normal(scale=obs.u, size=2), obs.u)
            for obs in track
        ]
        p_g, P_f = triangulate(noisy, p.state, p.cams, min_parallax=np.radians(0.5))
        error = p_g - p.truth[lid]
        self.assertLess(float(error @ np.linalg.solve(P_f, error)), 30.0)

    def test_single_sighting(self):
        p = self.problem
        track = [exact_observation(p, 0, p.state.clone_ids[0], 0)]
        self.assertRaises(InsufficientTrack, triangulate, track, p.state, p.cams)

    def test_zero_parallax(self):
        p = self.problem
        clone_id = p.state.clone_ids[0]
        track = [exact_observation(p, 0, clone_id, 0), exact_observation(p, 0, clone_id, 0)]
        self.assertAlmostEqual(max_parallax(track, p.state, p.cams), 0.0, places=7)
        with self.assertRaises(LowParallax) as context:
            triangulate(track, p.state, p.cams)
        self.assertEqual(context.exception.landmark_id, 0)
