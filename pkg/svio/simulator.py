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

"""Synthetic trajectories, IMU streams and feature tracks.

Trajectories are closed-form: position, velocity and acceleration are
analytic functions of time, and the attitude is given by yaw/pitch/roll
(Z-Y-X) angles with analytic rates. The IMU then measures::

    ω_m = ω_B + b_g + n_g
    a_m = Rᵀ (a_G - g) + b_a + n_a

A landmark field on a vertical cylinder around the trajectory is projected
into a camera rig that looks outward, to the right of the direction of
travel.
"""

import csv
import dataclasses
import logging
import os
import typing
import warnings

import numpy as np
from scipy.spatial.transform import Rotation

from svio.common import InvalidConfig
from svio.evalio import read_groundtruth_csv, read_imu_csv, write_groundtruth_csv, write_imu_csv
from svio.geometry import EPSILON_DEPTH, PinholeCamera, UnitQuaternion, project
from svio.measurement import Frame, FrameObservation
from svio.propagation import ImuSample, NoiseParams
from svio.state import ImuState, InitialSigmas, SlidingWindowState

log = logging.getLogger(__name__)

TRAJECTORIES = ("circle", "sine-3d", "stationary")

# Camera axes in the body frame: x along body x, y up, optical axis along -y.
CAMERA_ROTATION = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])

STEREO_BASELINE = 0.11

# Nearest depth at which a landmark counts as visible, metres.
MIN_VISIBLE_DEPTH = 0.1

# Pixel noise is resampled until it falls within this many sigmas.
NOISE_TRUNCATION = 4.0


@dataclasses.dataclass
class SimConfig:
    """Everything that defines a simulated run.

    :param trajectory: one of ``circle``, ``sine-3d`` or ``stationary``.
    :param radius: radius of the horizontal circle, metres.
    :param angular_rate: rate at which the circle is travelled, rad/s.
    :param wall_offset: distance from the trajectory to the landmark
        cylinder, metres.
    :param wall_height: vertical extent of the landmark field, metres.
    :param outlier_rate: fraction of sightings replaced by a uniformly
        random pixel.
    """

    trajectory: str = "circle"
    radius: float = 5.0
    angular_rate: float = 0.2
    height: float = 1.5
    duration: float = 10.0
    imu_rate: float = 200.0
    cam_rate: float = 20.0
    n_landmarks: int = 400
    wall_offset: float = 4.0
    wall_height: float = 4.0
    noise: NoiseParams = dataclasses.field(default_factory=NoiseParams)
    pixel_sigma: float = 1.0
    bias_a: typing.Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bias_g: typing.Tuple[float, float, float] = (0.0, 0.0, 0.0)
    outlier_rate: float = 0.0
    stereo: bool = True
    intrinsics: typing.Tuple[float, float, float, float, int, int] = (
        458.654,
        457.296,
        367.215,
        248.375,
        752,
        480,
    )
    seed: int = 0

    def validate(self) -> None:
        """:raise InvalidConfig: on any inconsistent setting."""

        if self.trajectory not in TRAJECTORIES:
            raise InvalidConfig(
                "trajectory",
                "trajectory must be one of %s, got %r" % (TRAJECTORIES, self.trajectory),
            )
        for name in ("imu_rate", "cam_rate", "duration", "radius", "wall_offset", "wall_height"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise InvalidConfig(name, "%s must be positive, got %r" % (name, value))
        if self.imu_rate < self.cam_rate:
            raise InvalidConfig("imu_rate", "imu_rate must not be below cam_rate")
        if self.n_landmarks < 0:
            raise InvalidConfig("n_landmarks", "n_landmarks must not be negative")
        if self.pixel_sigma < 0.0:
            raise InvalidConfig("pixel_sigma", "pixel_sigma must not be negative")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise InvalidConfig("outlier_rate", "outlier_rate must be in [0, 1)")
        self.noise.validate(strict=False)

    def cameras(self) -> typing.List[PinholeCamera]:
        """The camera rig: one outward-looking camera, plus its stereo partner."""

        fx, fy, cx, cy, width, height = self.intrinsics
        cams = [PinholeCamera(fx, fy, cx, cy, int(width), int(height), R_ic=CAMERA_ROTATION)]
        if self.stereo:
            cams.append(
                PinholeCamera(
                    fx,
                    fy,
                    cx,
                    cy,
                    int(width),
                    int(height),
                    R_ic=CAMERA_ROTATION,
                    p_ic=CAMERA_ROTATION @ np.array([STEREO_BASELINE, 0.0, 0.0]),
                )
            )
        return cams


class Kinematics(typing.NamedTuple):
    """True motion at one instant."""

    t: float
    q: UnitQuaternion
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    omega: np.ndarray


def _euler(config: SimConfig, t: float) -> typing.Tuple[np.ndarray, np.ndarray]:
    """(yaw, pitch, roll) and their time derivatives."""

    w = config.angular_rate
    if config.trajectory == "stationary":
        return np.zeros(3), np.zeros(3)
    angles = np.array([w * t + np.pi / 2.0, 0.0, 0.0])
    rates = np.array([w, 0.0, 0.0])
    if config.trajectory == "sine-3d":
        angles[1] = 0.1 * np.sin(2.0 * w * t)
        rates[1] = 0.2 * w * np.cos(2.0 * w * t)
        angles[2] = 0.1 * np.sin(3.0 * w * t)
        rates[2] = 0.3 * w * np.cos(3.0 * w * t)
    return angles, rates


def _body_rate(angles: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Body angular velocity from Z-Y-X Euler angles and their rates."""

    _, pitch, roll = angles
    dyaw, dpitch, droll = rates
    return np.array(
        [
            droll - dyaw * np.sin(pitch),
            dpitch * np.cos(roll) + dyaw * np.sin(roll) * np.cos(pitch),
            -dpitch * np.sin(roll) + dyaw * np.cos(roll) * np.cos(pitch),
        ]
    )


def kinematics(config: SimConfig, t: float) -> Kinematics:
    """The true pose and its derivatives at time ``t``."""

    r = config.radius
    w = config.angular_rate
    if config.trajectory == "stationary":
        p = np.array([r, 0.0, config.height])
        v = np.zeros(3)
        a = np.zeros(3)
    else:
        c, s = np.cos(w * t), np.sin(w * t)
        p = np.array([r * c, r * s, config.height])
        v = np.array([-r * w * s, r * w * c, 0.0])
        a = np.array([-r * w * w * c, -r * w * w * s, 0.0])
        if config.trajectory == "sine-3d":
            p[2] += 0.5 * np.sin(2.0 * w * t)
            v[2] = w * np.cos(2.0 * w * t)
            a[2] = -2.0 * w * w * np.sin(2.0 * w * t)

    angles, rates = _euler(config, t)
    rotation = Rotation.from_euler("ZYX", angles)
    return Kinematics(
        t=t,
        q=UnitQuaternion.from_matrix(rotation.as_matrix()),
        p=p,
        v=v,
        a=a,
        omega=_body_rate(angles, rates),
    )


def landmark_field(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Landmarks spread uniformly over a vertical cylinder, as an L×3 array."""

    if config.trajectory == "stationary":
        centre = np.array([config.radius, 0.0])
        radius = config.wall_offset
    else:
        centre = np.zeros(2)
        radius = config.radius + config.wall_offset
    azimuth = rng.uniform(0.0, 2.0 * np.pi, config.n_landmarks)
    z = config.height + rng.uniform(-0.5, 0.5, config.n_landmarks) * config.wall_height
    return np.column_stack(
        (centre[0] + radius * np.cos(azimuth), centre[1] + radius * np.sin(azimuth), z)
    )


def landmark_field_around(
    positions: np.ndarray,
    n_landmarks: int,
    rng: np.random.Generator,
    offset: float = 4.0,
    height: float = 4.0,
) -> np.ndarray:
    """Landmarks on a cylinder enclosing a given trajectory.

    The cylinder is centred on the mean horizontal position and reaches
    ``offset`` metres beyond the farthest point of the trajectory.
    """

    positions = np.asarray(positions, dtype=float)
    centre = positions[:, :2].mean(axis=0)
    reach = float(np.max(np.linalg.norm(positions[:, :2] - centre, axis=1)))
    radius = reach + offset
    z_mid = float(positions[:, 2].mean())
    azimuth = rng.uniform(0.0, 2.0 * np.pi, n_landmarks)
    z = z_mid + rng.uniform(-0.5, 0.5, n_landmarks) * height
    return np.column_stack(
        (centre[0] + radius * np.cos(azimuth), centre[1] + radius * np.sin(azimuth), z)
    )


def _pixel_noise(rng: np.random.Generator, sigma: float) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(2)
    while True:
        noise = rng.normal(scale=sigma, size=2)
        if np.linalg.norm(noise) <= NOISE_TRUNCATION * sigma:
            return noise


def synthesize_frames(
    poses: typing.Sequence[typing.Tuple[float, UnitQuaternion, np.ndarray]],
    landmarks: np.ndarray,
    cams: typing.Sequence[PinholeCamera],
    rng: np.random.Generator,
    pixel_sigma: float = 1.0,
    outlier_rate: float = 0.0,
) -> typing.Tuple[typing.List[Frame], typing.Set[typing.Tuple[int, int, int]]]:
    """Projects a landmark field into the rig at each given IMU pose.

    Only landmarks at least 10 cm in front of a camera and inside its image
    are reported. Pixel noise is Gaussian, truncated at four sigmas.

    :returns: the frames and the set of (frame index, landmark id, camera)
        triples that were replaced by outliers.
    """

    frames = []
    outliers = set()
    for index, (t, q, p) in enumerate(poses):
        R = q.to_matrix()
        observations = []
        for lid, p_g in enumerate(landmarks):
            for cam_index, cam in enumerate(cams):
                p_c = cam.to_camera(R, p, p_g)
                if p_c[2] < max(MIN_VISIBLE_DEPTH, EPSILON_DEPTH):
                    continue
                pixel = cam.to_pixel(project(p_c))
                if not cam.in_image(pixel):
                    continue
                if outlier_rate and rng.uniform() < outlier_rate:
                    pixel = rng.uniform([0.0, 0.0], [cam.width, cam.height])
                    outliers.add((index, lid, cam_index))
                else:
                    pixel = pixel + _pixel_noise(rng, pixel_sigma)
                observations.append(FrameObservation(lid, cam_index, cam.to_normalized(pixel)))
        frames.append(Frame(t=t, observations=observations))
    return frames, outliers


@dataclasses.dataclass
class SimOutput:
    """Ground truth and sensor streams of one simulated run.

    ``truth`` holds the true state at every IMU sample, ``frame_truth`` at
    every camera frame.
    """

    config: SimConfig
    truth: typing.List[ImuState]
    imu: typing.List[ImuSample]
    frame_truth: typing.List[ImuState]
    frames: typing.List[Frame]
    landmarks: np.ndarray
    cams: typing.List[PinholeCamera]
    outliers: typing.Set[typing.Tuple[int, int, int]] = dataclasses.field(default_factory=set)


def generate(config: SimConfig) -> SimOutput:
    """Simulates a complete run.

    The same config, seed included, always produces the same output.

    :raise InvalidConfig: when the config does not validate.
    """

    config.validate()
    rng = np.random.default_rng(config.seed)
    noise = config.noise
    g = noise.g
    dt = 1.0 / config.imu_rate

    n_imu = int(np.floor(config.duration * config.imu_rate + 1e-9)) + 1
    sigma_g = noise.sigma_g * np.sqrt(config.imu_rate)
    sigma_a = noise.sigma_a * np.sqrt(config.imu_rate)
    walk_g = noise.sigma_bg * np.sqrt(dt)
    walk_a = noise.sigma_ba * np.sqrt(dt)

    bg = np.array(config.bias_g, dtype=float)
    ba = np.array(config.bias_a, dtype=float)
    truth = []
    imu = []
    for k in range(n_imu):
        t = k / config.imu_rate
        state = kinematics(config, t)
        R = state.q.to_matrix()
        omega_m = state.omega + bg + rng.normal(scale=sigma_g, size=3)
        acc_m = R.T @ (state.a - g) + ba + rng.normal(scale=sigma_a, size=3)
        truth.append(ImuState(q=state.q, p=state.p, v=state.v, ba=ba.copy(), bg=bg.copy(), t=t))
        imu.append(ImuSample(t, omega_m, acc_m))
        bg = bg + rng.normal(scale=walk_g, size=3)
        ba = ba + rng.normal(scale=walk_a, size=3)

    landmarks = landmark_field(config, rng)
    cams = config.cameras()

    n_frames = int(np.floor(config.duration * config.cam_rate + 1e-9)) + 1
    frame_truth = []
    for k in range(n_frames):
        t = k / config.cam_rate
        state = kinematics(config, t)
        index = min(int(np.floor(t * config.imu_rate + 1e-9)), n_imu - 1)
        frame_truth.append(
            ImuState(
                q=state.q,
                p=state.p,
                v=state.v,
                ba=truth[index].ba.copy(),
                bg=truth[index].bg.copy(),
                t=t,
            )
        )

    frames, outliers = synthesize_frames(
        [(s.t, s.q, s.p) for s in frame_truth],
        landmarks,
        cams,
        rng,
        pixel_sigma=config.pixel_sigma,
        outlier_rate=config.outlier_rate,
    )
    if config.n_landmarks and not any(frame.observations for frame in frames):
        warnings.warn("no landmark is visible in any frame", UserWarning)

    log.info(
        "simulated %s: %i IMU samples, %i frames, %i landmarks",
        config.trajectory,
        len(imu),
        len(frames),
        len(landmarks),
    )
    return SimOutput(
        config=config,
        truth=truth,
        imu=imu,
        frame_truth=frame_truth,
        frames=frames,
        landmarks=landmarks,
        cams=cams,
        outliers=outliers,
    )


def perturb_initialization(
    truth: ImuState,
    sigmas: InitialSigmas,
    rng: typing.Union[np.random.Generator, int],
) -> SlidingWindowState:
    """An initial window state drawn around the truth.

    The error δx = truth ⊖ estimate is drawn from N(0, diag(σ²)) and the
    covariance is set to exactly that diagonal, so that the initial error is
    consistent with P. Variances are floored at 1e-12.
    """

    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    sigma = sigmas.as_vector()
    if not np.all(np.isfinite(sigma)):
        raise InvalidConfig("sigmas", "initial sigmas must be finite")
    error = rng.normal(size=15) * sigma

    estimate = ImuState(
        q=UnitQuaternion.exp(error[0:3]).conjugate() * truth.q,
        p=truth.p - error[3:6],
        v=truth.v - error[6:9],
        ba=truth.ba - error[9:12],
        bg=truth.bg - error[12:15],
        t=truth.t,
    )
    return SlidingWindowState(imu=estimate, clones=[], P=sigmas.covariance())


TRACKS_FILE = "tracks.csv"
LANDMARKS_FILE = "landmarks.csv"
IMU_FILE = os.path.join("imu0", "data.csv")
GROUNDTRUTH_FILE = os.path.join("state_groundtruth_estimate0", "data.csv")


def save_output(output: SimOutput, directory: str) -> None:
    """Writes a run in the EuRoC layout, plus track and landmark tables.

    ``tracks.csv`` holds one row ``t_ns,frame,landmark_id,cam,x,y`` per
    sighting, in normalized coordinates.
    """

    for sub in (os.path.dirname(IMU_FILE), os.path.dirname(GROUNDTRUTH_FILE)):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)

    write_imu_csv(output.imu, os.path.join(directory, IMU_FILE))
    write_groundtruth_csv(output.truth, os.path.join(directory, GROUNDTRUTH_FILE))

    with open(os.path.join(directory, TRACKS_FILE), "w", newline="") as outfile:
        writer = csv.writer(outfile)
        writer.writerow(["t_ns", "frame", "landmark_id", "cam", "x", "y"])
        for index, frame in enumerate(output.frames):
            t_ns = int(round(frame.t * 1e9))
            for obs in frame.observations:
                writer.writerow(
                    [t_ns, index, obs.landmark_id, obs.cam_index, repr(obs.z[0]), repr(obs.z[1])]
                )

    with open(os.path.join(directory, LANDMARKS_FILE), "w", newline="") as outfile:
        writer = csv.writer(outfile)
        writer.writerow(["landmark_id", "x", "y", "z"])
        for lid, p in enumerate(output.landmarks):
            writer.writerow([lid] + [repr(float(value)) for value in p])


def load_output(directory: str, config: typing.Optional[SimConfig] = None) -> SimOutput:
    """Reads back a run written by :py:func:`save_output`.

    The camera rig is rebuilt from ``config``; ``frame_truth`` holds the
    ground-truth rows nearest to each frame time. Frames without any
    sighting leave no row in the track table and are not restored.
    """

    if config is None:
        config = SimConfig()

    imu = list(read_imu_csv(os.path.join(directory, IMU_FILE)))
    truth = read_groundtruth_csv(os.path.join(directory, GROUNDTRUTH_FILE))

    frames_by_index: typing.Dict[int, Frame] = {}
    with open(os.path.join(directory, TRACKS_FILE), newline="") as infile:
        reader = csv.reader(infile)
        next(reader, None)
        for row in reader:
            t_ns, index, lid, cam_index, x, y = row
            frame = frames_by_index.setdefault(int(index), Frame(t=int(t_ns) / 1e9))
            frame.observations.append(
                FrameObservation(int(lid), int(cam_index), np.array([float(x), float(y)]))
            )

    with open(os.path.join(directory, LANDMARKS_FILE), newline="") as infile:
        reader = csv.reader(infile)
        next(reader, None)
        rows = [[float(value) for value in row[1:]] for row in reader]
    landmarks = np.array(rows, dtype=float).reshape(-1, 3)

    frames = [frames_by_index[k] for k in sorted(frames_by_index)]
    times = np.array([s.t for s in truth])
    frame_truth = []
    for frame in frames:
        nearest = int(np.argmin(np.abs(times - frame.t))) if len(times) else None
        if nearest is not None:
            frame_truth.append(truth[nearest])

    return SimOutput(
        config=config,
        truth=truth,
        imu=imu,
        frame_truth=frame_truth,
        frames=frames,
        landmarks=landmarks,
        cams=config.cameras(),
    )


__all__ = [
    "TRAJECTORIES",
    "SimConfig",
    "Kinematics",
    "kinematics",
    "landmark_field",
    "landmark_field_around",
    "synthesize_frames",
    "SimOutput",
    "generate",
    "perturb_initialization",
    "save_output",
    "load_output",
]
