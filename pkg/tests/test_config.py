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

"""Tests reading and writing YAML run configurations."""

import dataclasses
import os.path
import tempfile
import unittest

from svio.common import InvalidConfig
from svio.config import build_config, default_config, load_config, save_config
from svio.filter import FilterConfig
from svio.propagation import NoiseParams
from svio.simulator import SimConfig

CONFIG_YAML = """\
filter:
  max_keyframe_clones: 3
  landmark_solver: gn
  initial_sigmas: {theta: 0.01}
sim:
  trajectory: sine-3d
  duration: 4.5
  bias_a: [0.01, 0.0, -0.02]
noise:
  sigma_g: 2.0e-4
camera:
  intrinsics: [400.0, 400.0, 320.0, 240.0, 640, 480]
  stereo: false
"""


class BuildConfigTest(unittest.TestCase):
    def test_defaults(self):
        filt, sim = default_config()
        self.assertEqual(sim, SimConfig())
        self.assertEqual(filt, FilterConfig(cams=SimConfig().cameras()))

    def test_sections(self):
        filt, sim = build_config(
            {
                "filter": {"max_temporal_clones": 3, "initial_sigmas": {"p": 0.5}},
                "sim": {"seed": 9},
                "noise": {"sigma_a": 0.01},
                "camera": {"stereo": False},
            }
        )
        self.assertEqual(filt.max_temporal_clones, 3)
        self.assertEqual(filt.initial_sigmas.p, 0.5)
        self.assertEqual(filt.initial_sigmas.v, 0.05)
        self.assertEqual(sim.seed, 9)
        self.assertEqual(sim.noise.sigma_a, 0.01)
        self.assertEqual(filt.noise.sigma_a, 0.01)
        self.assertEqual(len(filt.cams), 1)
        self.assertEqual(filt.cams, sim.cameras())

    def test_filter_noise_override(self):
        zero = {name: 0.0 for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba")}
        filt, sim = build_config({"noise": zero, "filter": {"noise": {"sigma_g": 1e-3}}})
        self.assertEqual(sim.noise, NoiseParams.zero())
        self.assertEqual(filt.noise.sigma_g, 1e-3)
        self.assertEqual(filt.noise.sigma_a, NoiseParams().sigma_a)

    def test_zero_noise_needs_filter_override(self):
        zero = {name: 0.0 for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba")}
        with self.assertRaises(InvalidConfig) as cm:
            build_config({"noise": zero})
        self.assertEqual(cm.exception.field, "sigma_g")

    def test_unknown_keys(self):
        for document, field in (
            ({"bogus": {}}, "<root>.bogus"),
            ({"filter": {"window": 4}}, "filter.window"),
            ({"filter": {"cams": []}}, "filter.cams"),
            ({"sim": {"noise": {}}}, "sim.noise"),
            ({"camera": {"fx": 400}}, "camera.fx"),
            ({"filter": {"initial_sigmas": {"yaw": 1.0}}}, "filter.initial_sigmas.yaw"),
        ):
            with self.subTest(document=document):
                with self.assertRaises(InvalidConfig) as cm:
                    build_config(document)
                self.assertEqual(cm.exception.field, field)

    def test_invalid_values(self):
        for document in (
            {"filter": {"landmark_solver": "qr"}},
            {"sim": {"trajectory": "figure-eight"}},
            {"noise": {"sigma_a": -1.0}},
            {"filter": "not a mapping"},
            ["not", "a", "mapping"],
        ):
            with self.subTest(document=document):
                self.assertRaises(InvalidConfig, build_config, document)

    def test_empty_sections(self):
        self.assertEqual(build_config({"filter": None, "sim": None}), default_config())


class LoadSaveTest(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmpdir.cleanup)
        self.path = os.path.join(self.tmpdir.name, "config.yaml")

    def write(self, contents):
        with open(self.path, "w", encoding="utf-8") as outfile:
            outfile.write(contents)

    def test_load(self):
        self.write(CONFIG_YAML)
        filt, sim = load_config(self.path)

        self.assertEqual(filt.max_keyframe_clones, 3)
        self.assertEqual(filt.landmark_solver, "gn")
        self.assertEqual(filt.initial_sigmas.theta, 0.01)
        self.assertEqual(filt.noise.sigma_g, 2.0e-4)
        self.assertEqual(sim.trajectory, "sine-3d")
        self.assertEqual(sim.duration, 4.5)
        self.assertEqual(sim.bias_a, (0.01, 0.0, -0.02))
        self.assertEqual(sim.intrinsics, (400.0, 400.0, 320.0, 240.0, 640, 480))
        self.assertFalse(sim.stereo)
        self.assertEqual(filt.cams[0].fx, 400.0)

    def test_empty_file(self):
        self.write("")
        self.assertEqual(load_config(self.path), default_config())

    def test_invalid_yaml(self):
        self.write("filter: [unclosed\n")
        with self.assertRaises(InvalidConfig) as cm:
            load_config(self.path)
        self.assertIn(self.path, str(cm.exception))

    def test_missing_file(self):
        self.assertRaises(OSError, load_config, self.path)

    def test_save_load(self):
        self.write(CONFIG_YAML)
        filt, sim = load_config(self.path)
        filt = dataclasses.replace(filt, chi2_probability=0.99, gating=False)

        saved = os.path.join(self.tmpdir.name, "saved.yaml")
        save_config(saved, filt, sim)
        self.assertEqual(load_config(saved), (filt, sim))
