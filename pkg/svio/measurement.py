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

"""Reprojection residuals, their Jacobians, and landmark triangulation.

A sighting of landmark j from clone i predicts::

    p_I = R_GIᵀ (p_G - p_GI)          landmark in the IMU frame
    p_C = R_ICᵀ (p_I - p_IC)          landmark in the camera frame
    ẑ   = (X/Z, Y/Z)

and the residual r = z - ẑ is linearized as r ≈ J_A (δθ_i, δp_i) + J_f δp_G.
"""

import collections
import dataclasses
import logging
import typing

import numpy as np
import scipy.linalg
import scipy.stats

from svio.common import (
    BehindCamera,
    IllConditioned,
    InsufficientTrack,
    LowParallax,
)
from svio.geometry import PinholeCamera, project, projection_jacobian, skew
from svio.state import Landmark, SlidingWindowState

log = logging.getLogger(__name__)

DEFAULT_MIN_PARALLAX = np.radians(1.0)
DEFAULT_MAX_CONDITION = 1e8


@dataclasses.dataclass(frozen=True)
class Observation:
    """A landmark seen by one camera of one clone.

    :param z: normalized image coordinates.
    :param u: noise standard deviation in normalized units.
    """

    landmark_id: int
    clone_id: int
    cam_index: int
    z: np.ndarray
    u: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if self.z.shape != (2,) or not np.all(np.isfinite(self.z)):
            raise ValueError("observation of landmark %r has a bad measurement" % self.landmark_id)
        if not self.u > 0.0:
            raise ValueError("observation noise must be positive, got %r" % self.u)

    @property
    def sort_key(self) -> typing.Tuple[int, int, int]:
        return self.landmark_id, self.clone_id, self.cam_index


def observations_of(landmark: Landmark, u: float) -> typing.List[Observation]:
    """Turns a landmark's track into observations."""

    return [
        Observation(landmark.id, entry.clone_id, entry.cam_index, entry.z, u)
        for entry in landmark.track
    ]


class FrameObservation(typing.NamedTuple):
    """A feature in an incoming camera frame, before any clone exists for it.

    ``z`` is in normalized image coordinates.
    """

    landmark_id: int
    cam_index: int
    z: np.ndarray


@dataclasses.dataclass
class Frame:
    """All features tracked in the images taken at time ``t``."""

    t: float
    observations: typing.List[FrameObservation] = dataclasses.field(default_factory=list)

    @property
    def landmark_ids(self) -> typing.Set[int]:
        return {obs.landmark_id for obs in self.observations}


@dataclasses.dataclass
class StackedResidualModel:
    """All residual rows of one update, grouped by landmark.

    The landmark Jacobian is block diagonal; only its M×3 row blocks are
    stored. ``landmark_rows[k]`` is the row range of landmark
    ``landmark_ids[k]``, whose columns in the dense Jf are 3k..3k+3.
    """

    r: np.ndarray
    Jx: np.ndarray
    jf_rows: np.ndarray
    u: float
    landmark_ids: typing.List[int]
    landmark_rows: typing.List[slice]
    observations: typing.List[Observation] = dataclasses.field(default_factory=list)
    skipped: typing.Dict[int, str] = dataclasses.field(default_factory=dict)
    excluded: typing.List[Observation] = dataclasses.field(default_factory=list)

    @property
    def M(self) -> int:
        return int(self.r.size)

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_ids)

    @property
    def Jf(self) -> np.ndarray:
        """The dense M×3L landmark Jacobian."""

        dense = np.zeros((self.M, 3 * self.n_landmarks))
        for k, rows in enumerate(self.landmark_rows):
            dense[rows, 3 * k : 3 * k + 3] = self.jf_rows[rows]
        return dense

    def landmark_index(self) -> typing.Dict[int, int]:
        """Maps landmark id to its column block."""

        return {lid: k for k, lid in enumerate(self.landmark_ids)}

    def restricted(self, landmark_ids: typing.Iterable[int]) -> "StackedResidualModel":
        """The model reduced to a subset of its landmarks, order preserved."""

        keep = set(landmark_ids)
        rows = []
        ids = []
        slices = []
        start = 0
        for lid, lm_rows in zip(self.landmark_ids, self.landmark_rows):
            if lid not in keep:
                continue
            count = lm_rows.stop - lm_rows.start
            rows.extend(range(lm_rows.start, lm_rows.stop))
            ids.append(lid)
            slices.append(slice(start, start + count))
            start += count
        index = np.array(rows, dtype=int)
        observations = [obs for obs in self.observations if obs.landmark_id in keep]
        return StackedResidualModel(
            r=self.r[index],
            Jx=self.Jx[index],
            jf_rows=self.jf_rows[index],
            u=self.u,
            landmark_ids=ids,
            landmark_rows=slices,
            observations=observations,
        )


def _camera_point(
    state: SlidingWindowState, clone_id: int, p_g: np.ndarray, cam: PinholeCamera
) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    clone = state.clone(clone_id)
    R_gi = clone.R
    p_i = R_gi.T @ (p_g - clone.p)
    p_c = cam.R_ic.T @ (p_i - cam.p_ic)
    return R_gi, p_i, p_c


def residual_and_jacobians(
    obs: Observation, state: SlidingWindowState, lm: Landmark, cam: PinholeCamera
) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual of one sighting and its Jacobians.

    :returns: (r, J_A, J_f) with r = z - ẑ, J_A the 2×6 Jacobian with
        respect to the observing clone's (δθ, δp) and J_f the 2×3 Jacobian
        with respect to the landmark position.
    :raise BehindCamera: when the landmark is not in front of the camera.
    """

    R_gi, p_i, p_c = _camera_point(state, obs.clone_id, lm.p_G, cam)
    J_proj = projection_jacobian(p_c)
    r = obs.z - project(p_c)

    R_gc_t = cam.R_ic.T @ R_gi.T
    J_A = J_proj @ np.hstack((cam.R_ic.T @ skew(p_i) @ R_gi.T, -R_gc_t))
    J_f = J_proj @ R_gc_t
    return r, J_A, J_f


def stack(
    observations: typing.Iterable[Observation],
    state: SlidingWindowState,
    landmarks: typing.Mapping[int, Landmark],
    cams: typing.Sequence[PinholeCamera],
) -> StackedResidualModel:
    """Stacks the residuals of many sightings into one model.

    Rows are ordered by landmark id, then clone id, then camera index, so the
    result does not depend on the input order. Sightings behind their camera
    are excluded; a landmark left without sightings from two distinct clones
    is skipped and reported in ``skipped``.
    """

    by_landmark: typing.DefaultDict[int, typing.List[Observation]] = collections.defaultdict(list)
    u_values = set()
    for obs in observations:
        by_landmark[obs.landmark_id].append(obs)
        u_values.add(obs.u)
    if len(u_values) > 1:
        raise ValueError("observations carry different noise levels: %s" % sorted(u_values))
    u = u_values.pop() if u_values else 0.0

    n = state.dim
    r_blocks = []
    jx_blocks = []
    jf_blocks = []
    ids = []
    slices = []
    used: typing.List[Observation] = []
    skipped: typing.Dict[int, str] = {}
    excluded: typing.List[Observation] = []
    row = 0

    for lid in sorted(by_landmark):
        lm = landmarks[lid]
        rows = []
        kept = []
        for obs in sorted(by_landmark[lid], key=lambda o: o.sort_key):
            try:
                r, J_A, J_f = residual_and_jacobians(obs, state, lm, cams[obs.cam_index])
            except BehindCamera:
                excluded.append(obs)
                continue
            jx = np.zeros((2, n))
            jx[:, state.clone_slice(obs.clone_id)] = J_A
            rows.append((r, jx, J_f))
            kept.append(obs)

        if len({obs.clone_id for obs in kept}) < 2:
            skipped[lid] = str(InsufficientTrack(lid))
            log.debug("landmark %i skipped: %s", lid, skipped[lid])
            continue

        for r, jx, J_f in rows:
            r_blocks.append(r)
            jx_blocks.append(jx)
            jf_blocks.append(J_f)
        ids.append(lid)
        slices.append(slice(row, row + 2 * len(rows)))
        used.extend(kept)
        row += 2 * len(rows)

    if r_blocks:
        r_all = np.concatenate(r_blocks)
        jx_all = np.vstack(jx_blocks)
        jf_all = np.vstack(jf_blocks)
    else:
        r_all = np.zeros(0)
        jx_all = np.zeros((0, n))
        jf_all = np.zeros((0, 3))

    return StackedResidualModel(
        r=r_all,
        Jx=jx_all,
        jf_rows=jf_all,
        u=u,
        landmark_ids=ids,
        landmark_rows=slices,
        observations=used,
        skipped=skipped,
        excluded=excluded,
    )


def chi2_threshold(probability: float = 0.95, dof: int = 2) -> float:
    """Chi-square quantile used to gate residuals.

    >>> round(chi2_threshold(), 3)
    5.991
    """

    return float(scipy.stats.chi2.ppf(probability, dof))


def gate_observations(
    observations: typing.Iterable[Observation],
    state: SlidingWindowState,
    landmarks: typing.Mapping[int, Landmark],
    cams: typing.Sequence[PinholeCamera],
    threshold: float,
) -> typing.Tuple[typing.List[Observation], typing.List[Observation]]:
    """Splits sightings into accepted and rejected by a Mahalanobis test.

    Each sighting is tested on its own marginal: the innovation covariance
    is J_A P_ii J_Aᵀ + J_f P_f J_fᵀ + u²I, with P_ii the covariance of the
    observing clone. Sightings behind the camera are rejected as well.
    """

    accepted = []
    rejected = []
    for obs in observations:
        lm = landmarks[obs.landmark_id]
        try:
            r, J_A, J_f = residual_and_jacobians(obs, state, lm, cams[obs.cam_index])
        except BehindCamera:
            rejected.append(obs)
            continue
        block = state.clone_slice(obs.clone_id)
        S = J_A @ state.P[block, block] @ J_A.T + J_f @ lm.P_f @ J_f.T
        S = S + obs.u**2 * np.eye(2)
        distance = float(r @ np.linalg.solve(S, r))
        if distance > threshold:
            rejected.append(obs)
        else:
            accepted.append(obs)
    return accepted, rejected


def _camera_poses(
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
) -> typing.List[typing.Tuple[np.ndarray, np.ndarray]]:
    poses = []
    for obs in track:
        clone = state.clone(obs.clone_id)
        poses.append(cams[obs.cam_index].pose_in_global(clone.R, clone.p))
    return poses


def max_parallax(
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
) -> float:
    """Largest angle, in radians, between any two viewing rays of a track."""

    bearings = []
    for obs, (R_gc, _) in zip(track, _camera_poses(track, state, cams)):
        ray = R_gc @ np.array([obs.z[0], obs.z[1], 1.0])
        bearings.append(ray / np.linalg.norm(ray))
    best = 0.0
    for i in range(len(bearings)):
        for j in range(i + 1, len(bearings)):
            cosine = float(np.clip(bearings[i] @ bearings[j], -1.0, 1.0))
            best = max(best, float(np.arccos(cosine)))
    return best


def landmark_normal_equations(
    p_g: np.ndarray,
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
) -> typing.Tuple[np.ndarray, np.ndarray, float]:
    """JfᵀJf, Jfᵀr and the squared residual norm at a landmark position."""

    H = np.zeros((3, 3))
    g = np.zeros(3)
    cost = 0.0
    for obs in track:
        cam = cams[obs.cam_index]
        R_gi, _, p_c = _camera_point(state, obs.clone_id, p_g, cam)
        J_f = projection_jacobian(p_c) @ cam.R_ic.T @ R_gi.T
        r = obs.z - project(p_c)
        H += J_f.T @ J_f
        g += J_f.T @ r
        cost += float(r @ r)
    return H, g, cost


def refine_landmark(
    p_g: np.ndarray,
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
    iterations: int = 5,
    max_condition: float = DEFAULT_MAX_CONDITION,
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton refinement of a landmark on its reprojection error.

    :returns: the refined position and JfᵀJf evaluated there.
    :raise IllConditioned: when JfᵀJf is too poorly conditioned to solve.
    :raise BehindCamera: when an iterate leaves the field of a camera.
    """

    p = np.array(p_g, dtype=float)
    for _ in range(iterations):
        H, g, _ = landmark_normal_equations(p, track, state, cams)
        condition = float(np.linalg.cond(H))
        if not condition <= max_condition:
            raise IllConditioned(condition)
        step = scipy.linalg.solve(H, g, assume_a="pos")
        p = p + step
        if np.linalg.norm(step) < 1e-12:
            break

    H, _, _ = landmark_normal_equations(p, track, state, cams)
    condition = float(np.linalg.cond(H))
    if not condition <= max_condition:
        raise IllConditioned(condition)
    return p, H


def _linear_triangulation(
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
) -> np.ndarray:
    rows = []
    for obs, (R_gc, p_gc) in zip(track, _camera_poses(track, state, cams)):
        R_cg = R_gc.T
        projection = np.hstack((R_cg, (-R_cg @ p_gc)[:, None]))
        rows.append(obs.z[0] * projection[2] - projection[0])
        rows.append(obs.z[1] * projection[2] - projection[1])
    _, _, vh = np.linalg.svd(np.array(rows))
    homogeneous = vh[-1]
    if abs(homogeneous[3]) < 1e-12 * np.linalg.norm(homogeneous):
        raise IllConditioned(np.inf)
    return homogeneous[:3] / homogeneous[3]


def triangulate(
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
    min_parallax: float = DEFAULT_MIN_PARALLAX,
    max_condition: float = DEFAULT_MAX_CONDITION,
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Triangulates a landmark from its track.

    A linear (DLT) solution is refined with up to five Gauss-Newton steps.
    The returned covariance is u²(JfᵀJf)⁻¹ at the solution.

    :returns: (p_G, P_f0).
    :raise InsufficientTrack: with fewer than two sightings.
    :raise LowParallax: when the viewing rays are nearly parallel.
    :raise IllConditioned: when the solution is poorly constrained.
    """

    landmark_id = track[0].landmark_id if track else -1
    if len(track) < 2:
        raise InsufficientTrack(landmark_id)

    parallax = max_parallax(track, state, cams)
    if parallax < min_parallax:
        raise LowParallax(parallax, landmark_id)

    p0 = _linear_triangulation(track, state, cams)
    p_g, H = refine_landmark(p0, track, state, cams, iterations=5, max_condition=max_condition)
    u = track[0].u
    P_f0 = u**2 * np.linalg.inv(H)
    return p_g, 0.5 * (P_f0 + P_f0.T)


__all__ = [
    "DEFAULT_MIN_PARALLAX",
    "DEFAULT_MAX_CONDITION",
    "Observation",
    "FrameObservation",
    "Frame",
    "StackedResidualModel",
    "observations_of",
    "residual_and_jacobians",
    "stack",
    "chi2_threshold",
    "gate_observations",
    "max_parallax",
    "landmark_normal_equations",
    "refine_landmark",
    "triangulate",
]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
