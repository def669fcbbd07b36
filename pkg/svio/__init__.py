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

"""SVIO module

Sliding-window visual-inertial odometry with an error-state Kalman filter.
The landmark states are kept in the filter, and every update first
eliminates them with a Schur complement, so the pose update only ever sees
a small, square system.

Includes an IMU and feature-track simulator, reference implementations of
the update for verification, and trajectory evaluation tools.

"""

from svio.common import SvioError
from svio.config import load_config, save_config
from svio.filter import Filter, FilterConfig, FilterReport, run_filter
from svio.measurement import Frame, FrameObservation
from svio.propagation import ImuSample, NoiseParams
from svio.schur import build_equivalent, ekf_update_pose, schur_marginalize
from svio.simulator import SimConfig, generate
from svio.state import ImuState, InitialSigmas, SlidingWindowState

__date__ = "2026-10-19"
__version__ = "1.0-dev0"

# Do doctest if we're run directly
if __name__ == "__main__":
    import doctest

    doctest.testmod()

__all__ = [
    "Filter",
    "FilterConfig",
    "FilterReport",
    "run_filter",
    "Frame",
    "FrameObservation",
    "ImuSample",
    "NoiseParams",
    "ImuState",
    "InitialSigmas",
    "SlidingWindowState",
    "SimConfig",
    "generate",
    "build_equivalent",
    "schur_marginalize",
    "ekf_update_pose",
    "load_config",
    "save_config",
    "SvioError",
]
