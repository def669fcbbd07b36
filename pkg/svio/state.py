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

"""Nominal and error-state containers.

The error state of the IMU is ordered (δθ, δp, δv, δb_a, δb_g); each cloned
pose contributes (δθ, δp). The covariance of a window with N clones is
therefore (15 + 6N) square, with the clone blocks following the IMU block
in clone order.

Every operation here returns a new :py:class:`SlidingWindowState`; covariance
results are symmetrized before they are returned.
"""

import dataclasses
import enum
import logging
import typing

import numpy as np

from svio.common import DimensionMismatch, UnknownClone, symmetrize
from svio.geometry import UnitQuaternion, quat_error_compose

log = logging.getLogger(__name__)

IMU_DIM = 15
CLONE_DIM = 6

THETA = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)


@dataclasses.dataclass
class ImuState:
    """Nominal IMU state: attitude, position, velocity, biases and time."""

    q: UnitQuaternion = dataclasses.field(default_factory=UnitQuaternion.identity)
    p: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    @property
    def R(self) -> np.ndarray:
        return self.q.to_matrix()

    def copy(self) -> "ImuState":
        return ImuState(
            q=self.q,
            p=self.p.copy(),
            v=self.v.copy(),
            ba=self.ba.copy(),
            bg=self.bg.copy(),
            t=self.t,
        )


@dataclasses.dataclass
class ClonePose:
    """A stochastic clone of the IMU pose at time ``t``."""

    id: int
    q: UnitQuaternion
    p: np.ndarray
    t: float
    is_keyframe: bool = False

    @property
    def R(self) -> np.ndarray:
        return self.q.to_matrix()

    def copy(self) -> "ClonePose":
        return dataclasses.replace(self, p=self.p.copy())


@dataclasses.dataclass
class SlidingWindowState:
    """IMU state, the window of cloned poses and the joint error covariance."""

    imu: ImuState
    clones: typing.List[ClonePose]
    P: np.ndarray

    def __post_init__(self) -> None:
        expected = IMU_DIM + CLONE_DIM * len(self.clones)
        if self.P.shape != (expected, expected):
            raise DimensionMismatch(expected, self.P.shape[0])

    @property
    def dim(self) -> int:
        return IMU_DIM + CLONE_DIM * len(self.clones)

    @property
    def clone_ids(self) -> typing.List[int]:
        return [clone.id for clone in self.clones]

    def clone_index(self, clone_id: int) -> int:
        """Position of a clone in the window.

        :raise UnknownClone: when the clone is not in the window.
        """

        for index, clone in enumerate(self.clones):
            if clone.id == clone_id:
                return index
        raise UnknownClone(clone_id)

    def clone(self, clone_id: int) -> ClonePose:
        return self.clones[self.clone_index(clone_id)]

    def clone_slice(self, clone_id: int) -> slice:
        """Rows/columns of a clone's (δθ, δp) block in P."""

        start = IMU_DIM + CLONE_DIM * self.clone_index(clone_id)
        return slice(start, start + CLONE_DIM)

    def copy(self) -> "SlidingWindowState":
        return SlidingWindowState(
            imu=self.imu.copy(), clones=[c.copy() for c in self.clones], P=self.P.copy()
        )


class LandmarkStatus(enum.Enum):
    CANDIDATE = "candidate"
    ESTIMATING = "estimating"
    REJECTED = "rejected"


class TrackEntry(typing.NamedTuple):
    """One sighting of a landmark: which clone, which camera, where."""

    clone_id: int
    cam_index: int
    z: np.ndarray


@dataclasses.dataclass
class Landmark:
    """A point landmark with its own 3×3 covariance.

    Landmark covariances never enter the window covariance P.
    """

    id: int
    p_G: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))
    P_f: np.ndarray = dataclasses.field(default_factory=lambda: np.eye(3))
    track: typing.List[TrackEntry] = dataclasses.field(default_factory=list)
    status: LandmarkStatus = LandmarkStatus.CANDIDATE

    @property
    def clone_ids(self) -> typing.Set[int]:
        return {entry.clone_id for entry in self.track}

    def copy(self) -> "Landmark":
        return dataclasses.replace(
            self, p_G=self.p_G.copy(), P_f=self.P_f.copy(), track=list(self.track)
        )


def augment(
    state: SlidingWindowState,
    clone_id: typing.Optional[int] = None,
    is_keyframe: bool = False,
) -> SlidingWindowState:
    """Clones the current IMU pose into the window.

    The covariance grows by the (δθ, δp) rows of the IMU block::

        P ← [[P,      P J_aᵀ    ],
             [J_a P,  J_a P J_aᵀ]]

    :param clone_id: id for the new clone; defaults to one above the largest
        id in the window.
    """

    if clone_id is None:
        clone_id = max(state.clone_ids, default=-1) + 1
    if clone_id in state.clone_ids:
        raise ValueError("clone id %r already in the window" % clone_id)

    n = state.dim
    J_a = np.zeros((CLONE_DIM, n))
    J_a[0:3, THETA] = np.eye(3)
    J_a[3:6, POS] = np.eye(3)

    P21 = J_a @ state.P
    P22 = P21 @ J_a.T
    P = np.block([[state.P, P21.T], [P21, P22]])

    clone = ClonePose(
        id=clone_id, q=state.imu.q, p=state.imu.p.copy(), t=state.imu.t, is_keyframe=is_keyframe
    )
    return SlidingWindowState(
        imu=state.imu.copy(), clones=[c.copy() for c in state.clones] + [clone], P=symmetrize(P)
    )


def prune_tracks(landmarks: typing.Mapping[int, Landmark], clone_id: int) -> typing.List[int]:
    """Removes a clone's sightings from all landmark tracks, in place.

    :returns: ids of the landmarks whose track is now empty.
    """

    emptied = []
    for landmark in landmarks.values():
        if not any(entry.clone_id == clone_id for entry in landmark.track):
            continue
        landmark.track = [entry for entry in landmark.track if entry.clone_id != clone_id]
        if not landmark.track:
            emptied.append(landmark.id)
    return emptied


def marginalize_clone(
    state: SlidingWindowState,
    clone_id: int,
    landmarks: typing.Optional[typing.Mapping[int, Landmark]] = None,
) -> SlidingWindowState:
    """Marginalizes a clone out of the window.

    For a jointly Gaussian state this is deletion of the clone's rows and
    columns. When ``landmarks`` is given, their tracks are pruned in place.

    :raise UnknownClone: when the clone is not in the window.
    """

    index = state.clone_index(clone_id)
    rows = state.clone_slice(clone_id)
    P = np.delete(state.P, rows, axis=0)
    P = np.delete(P, rows, axis=1)

    if landmarks is not None:
        prune_tracks(landmarks, clone_id)

    clones = [c.copy() for i, c in enumerate(state.clones) if i != index]
    log.debug("marginalized clone %i, %i clones left", clone_id, len(clones))
    return SlidingWindowState(imu=state.imu.copy(), clones=clones, P=symmetrize(P))


def apply_correction(state: SlidingWindowState, dx: np.ndarray) -> SlidingWindowState:
    """Composes an error-state correction onto the nominal state.

    Positions, velocity and biases are corrected additively, attitudes with
    :py:func:`svio.geometry.quat_error_compose`. The covariance is untouched.

    :raise DimensionMismatch: when ``dx`` does not match the window.
    """

    dx = np.asarray(dx, dtype=float)
    if dx.shape != (state.dim,):
        raise DimensionMismatch(state.dim, dx.size)

    imu = state.imu
    corrected = ImuState(
        q=quat_error_compose(dx[THETA], imu.q),
        p=imu.p + dx[POS],
        v=imu.v + dx[VEL],
        ba=imu.ba + dx[BA],
        bg=imu.bg + dx[BG],
        t=imu.t,
    )

    clones = []
    for index, clone in enumerate(state.clones):
        offset = IMU_DIM + CLONE_DIM * index
        clones.append(
            dataclasses.replace(
                clone,
                q=quat_error_compose(dx[offset : offset + 3], clone.q),
                p=clone.p + dx[offset + 3 : offset + 6],
            )
        )

    return SlidingWindowState(imu=corrected, clones=clones, P=state.P.copy())


def state_error(truth: ImuState, estimate: ImuState) -> np.ndarray:
    """The 15-dim error taking ``estimate`` to ``truth``.

    The attitude part is the global-frame rotation vector of
    ``q_truth ⊗ q_estimate⁻¹``, matching the error convention of the filter.
    """

    return np.concatenate(
        (
            (truth.q * estimate.q.conjugate()).log(),
            truth.p - estimate.p,
            truth.v - estimate.v,
            truth.ba - estimate.ba,
            truth.bg - estimate.bg,
        )
    )


@dataclasses.dataclass
class InitialSigmas:
    """Standard deviations of the initial IMU error, one per error block.

    Attitude in radians, position in metres, velocity in m/s, biases in the
    sensor units.
    """

    theta: float = 0.017453292519943295  # 1 deg
    p: float = 0.05
    v: float = 0.05
    ba: float = 0.02
    bg: float = 0.002

    def as_vector(self) -> np.ndarray:
        """The 15 standard deviations in error-state order."""

        return np.repeat([self.theta, self.p, self.v, self.ba, self.bg], 3).astype(float)

    def covariance(self, floor: float = 1e-12) -> np.ndarray:
        """Diagonal covariance, with variances floored at ``floor``."""

        return np.diag(np.maximum(self.as_vector() ** 2, floor))


__all__ = [
    "IMU_DIM",
    "CLONE_DIM",
    "ImuState",
    "ClonePose",
    "SlidingWindowState",
    "LandmarkStatus",
    "TrackEntry",
    "Landmark",
    "augment",
    "prune_tracks",
    "marginalize_clone",
    "apply_correction",
    "state_error",
    "InitialSigmas",
]
