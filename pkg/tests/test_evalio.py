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

"""Tests dataset files, trajectory files and metrics."""

import os
import tempfile
import unittest

import numpy as np

from svio.common import InsufficientOverlap, MalformedRow, NonMonotonicTime
from svio.evalio import (
    TrajectoryRecord,
    align_rigid,
    associate,
    ate_rmse,
    error_summary,
    format_tum,
    load_euroc,
    read_groundtruth_csv,
    read_imu_csv,
    read_tum,
    write_tum,
)
from svio.geometry import UnitQuaternion


def write_file(directory, name, text):
    path = os.path.join(directory, name)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="ascii") as outfile:
        outfile.write(text)
    return path


def trajectory(n=20, seed=0):
    rng = np.random.default_rng(seed)
    return [
        TrajectoryRecord(
            t=0.05 * k, p=rng.normal(size=3) * 2.0, q=UnitQuaternion.exp(rng.normal(size=3))
        )
        for k in range(n)
    ]


class ImuCsvTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_read(self):
        path = write_file(
            self.tmp.name,
            "imu.csv",
            "#timestamp [ns],wx,wy,wz,ax,ay,az\n"
            "1403636579758555392,-0.1,0.2,0.03,8.1,-0.5,-3.0\n"
            "1403636579763555584,-0.1,0.2,0.03,8.2,-0.5,-3.1\n",
        )
        samples = list(read_imu_csv(path))
        self.assertEqual(len(samples), 2)
        self.assertAlmostEqual(samples[0].t, 1403636579.758555392, places=6)
        np.testing.assert_array_equal(samples[1].acc_m, [8.2, -0.5, -3.1])
        np.testing.assert_array_equal(samples[1].omega_m, [-0.1, 0.2, 0.03])

    def test_plain_header(self):
        path = write_file(
            self.tmp.name, "imu.csv", "timestamp,wx,wy,wz,ax,ay,az\n1,0,0,0,0,0,9.8\n"
        )
        self.assertEqual(len(list(read_imu_csv(path))), 1)

    def test_malformed(self):
        path = write_file(self.tmp.name, "imu.csv", "1,0,0,0,0,0,9.8\n2,0,0,zero,0,0,9.8\n")
        with self.assertRaises(MalformedRow) as context:
            list(read_imu_csv(path))
        self.assertEqual(context.exception.line_no, 2)

    def test_malformed_first_row(self):
        path = write_file(self.tmp.name, "imu.csv", "1,0,0,zero,0,0,9.8\n2,0,0,0,0,0,9.8\n")
        with self.assertRaises(MalformedRow) as context:
            list(read_imu_csv(path))
        self.assertEqual(context.exception.line_no, 1)

    def test_short_row(self):
        path = write_file(self.tmp.name, "imu.csv", "1,0,0,0,0,0\n")
        self.assertRaises(MalformedRow, list, read_imu_csv(path))

    def test_non_monotonic(self):
        path = write_file(self.tmp.name, "imu.csv", "2,0,0,0,0,0,9.8\n1,0,0,0,0,0,9.8\n")
        self.assertRaises(NonMonotonicTime, list, read_imu_csv(path))


class EurocTest(unittest.TestCase):
    def test_load_mav0_layout(self):
        with tempfile.TemporaryDirectory() as root:
            write_file(
                root, "mav0/imu0/data.csv", "#header\n1000,0,0,0,0,0,9.81\n2000,0,0,0,0,0,9.81\n"
            )
            write_file(
                root,
                "mav0/state_groundtruth_estimate0/data.csv",
                "#header\n1500,1,2,3,1,0,0,0,0.1,0.2,0.3,0.01,0.02,0.03,0.1,0.2,0.3\n",
            )
            imu, truth = load_euroc(root)
            self.assertEqual(len(imu), 2)
            self.assertEqual(len(truth), 1)
            state = truth[0]
            self.assertAlmostEqual(state.t, 1.5e-6)
            np.testing.assert_array_equal(state.p, [1, 2, 3])
            np.testing.assert_array_equal(state.v, [0.1, 0.2, 0.3])
            np.testing.assert_array_equal(state.bg, [0.01, 0.02, 0.03])
            np.testing.assert_array_equal(state.ba, [0.1, 0.2, 0.3])
            self.assertEqual(state.q, UnitQuaternion.identity())

            path = os.path.join(root, "mav0", "state_groundtruth_estimate0", "data.csv")
            self.assertEqual(len(read_groundtruth_csv(path)), 1)
            # So does the mav0 directory itself.
            self.assertEqual(len(load_euroc(os.path.join(root, "mav0"))[0]), 2)


class TumTest(unittest.TestCase):
    def test_format(self):
        record = TrajectoryRecord(
            1.5, np.array([1.0, -2.0, 0.25]), UnitQuaternion(0.0, 0.0, 1.0, 0.0)
        )
        self.assertEqual(format_tum(record), "1.500000000 1 -2 0.25 0 1 0 0")

    def test_roundtrip(self):
        records = trajectory()
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "traj.tum")
            write_tum(records, path)
            loaded = read_tum(path)
        self.assertEqual(len(loaded), len(records))
        for a, b in zip(loaded, records):
            self.assertAlmostEqual(a.t, b.t, places=9)
            np.testing.assert_allclose(a.p, b.p, rtol=1e-14)
            self.assertLess(a.q.angle_to(b.q), 1e-12)

    def test_unsorted(self):
        records = trajectory()[::-1]
        with tempfile.TemporaryDirectory() as directory:
            self.assertRaises(ValueError, write_tum, records, os.path.join(directory, "x.tum"))

    def test_malformed(self):
        with tempfile.TemporaryDirectory() as directory:
            path = write_file(directory, "bad.tum", "# comment\n0.0 1 2 3 0 0 0 1\n0.1 1 2 3\n")
            with self.assertRaises(MalformedRow) as context:
                read_tum(path)
            self.assertEqual(context.exception.line_no, 3)


class MetricsTest(unittest.TestCase):
    def test_associate(self):
        def records(times):
            return [TrajectoryRecord(t, np.zeros(3), UnitQuaternion.identity()) for t in times]

        truth = records((0.0, 0.1, 0.2))
        estimate = records((0.004, 0.15, 0.199))
        self.assertEqual(associate(estimate, truth), [(0, 0), (2, 2)])
        self.assertEqual(associate([], truth), [])

    def test_align_recovers_transform(self):
        rng = np.random.default_rng(8)
        points = rng.normal(size=(30, 3))
        R = UnitQuaternion.exp([0.3, -0.5, 1.2]).to_matrix()
        t = np.array([1.0, -2.0, 3.0])
        R_est, t_est = align_rigid(points, points @ R.T + t)
        np.testing.assert_allclose(R_est, R, atol=1e-12)
        np.testing.assert_allclose(t_est, t, atol=1e-12)

    def test_ate_invariant_to_rigid_motion(self):
        truth = trajectory(seed=1)
        R = UnitQuaternion.exp([0.0, 0.0, 0.7]).to_matrix()
        moved = [TrajectoryRecord(r.t, R @ r.p + [5.0, 1.0, -2.0], r.q) for r in truth]
        self.assertLess(ate_rmse(moved, truth), 1e-12)

    def test_ate_of_known_error(self):
        truth = [
            TrajectoryRecord(float(k), np.array([float(k), 0.0, 0.0]), UnitQuaternion.identity())
            for k in range(10)
        ]
        # Alternating vertical offsets cannot be aligned away.
        estimate = [
            TrajectoryRecord(r.t, r.p + [0.0, 0.0, 0.1 * (-1) ** k], r.q)
            for k, r in enumerate(truth)
        ]
        self.assertAlmostEqual(ate_rmse(estimate, truth), 0.1, places=2)
        summary = error_summary(estimate, truth)
        self.assertAlmostEqual(summary["ate_rmse"], ate_rmse(estimate, truth), places=12)
        self.assertGreaterEqual(summary["max"], summary["ate_rmse"])

    def test_insufficient_overlap(self):
        truth = trajectory(n=10)
        late = [TrajectoryRecord(r.t + 100.0, r.p, r.q) for r in truth]
        with self.assertRaises(InsufficientOverlap) as context:
            ate_rmse(late, truth)
        self.assertEqual(context.exception.pairs, 0)
