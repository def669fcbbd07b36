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

"""Per-landmark EKF updates after the pose update.

Once the pose correction δx is known, the landmark rows of the equivalent
model decouple into one small system per landmark::

    b2_i - C2_iᵀ δx = C3_i δp_i + n_i,    cov(n_i) = C3_i u²

Each landmark keeps its own 3×3 covariance; updating one never touches
another landmark or the window covariance.
"""

import dataclasses
import logging
import typing

import numpy as np
import scipy.linalg

from svio.common import (
    BehindCamera,
    InnovationNotInvertible,
    MeasurementError,
    clamp_eigenvalues,
    symmetrize,
)
from svio.geometry import EPSILON_DEPTH, PinholeCamera
from svio.measurement import Observation, refine_landmark
from svio.schur import SchurSystem
from svio.state import Landmark, LandmarkStatus, SlidingWindowState

log = logging.getLogger(__name__)

# Eigenvalue bounds for landmark covariances, m².
COVARIANCE_FLOOR = 1e-6
COVARIANCE_CAP = 1e2


@dataclasses.dataclass
class LandmarkResidual:
    """Decoupled residual model of one landmark."""

    landmark_id: int
    r: np.ndarray
    C3: np.ndarray
    R: np.ndarray
    u: float


def split_landmark_system(system: SchurSystem, dx: np.ndarray) -> typing.List[LandmarkResidual]:
    """One residual model per landmark, given the pose correction ``dx``."""

    residuals = []
    for k, lid in enumerate(system.landmark_ids):
        block = SchurSystem.block(k)
        C3 = system.C3[k]
        residuals.append(
            LandmarkResidual(
                landmark_id=lid,
                r=system.b2[block] - system.C2[:, block].T @ dx,
                C3=C3,
                R=C3 * system.u**2,
                u=system.u,
            )
        )
    return residuals


def ekf_update_landmark(lm: Landmark, res: LandmarkResidual) -> Landmark:
    """EKF update of a single landmark.

    K = P_f C3 (C3 P_f C3 + C3 u²)⁻¹, evaluated as P_f (C3 P_f + u² I)⁻¹,
    followed by a Joseph-form covariance update. A landmark whose innovation
    cannot be factorized comes back flagged REJECTED and otherwise unchanged.
    """

    updated = lm.copy()
    P_f = lm.P_f
    try:
        K = scipy.linalg.solve(P_f @ res.C3 + res.u**2 * np.eye(3), P_f).T
    except (np.linalg.LinAlgError, ValueError) as ex:
        log.debug("landmark %i rejected: %s", lm.id, InnovationNotInvertible(str(ex)))
        updated.status = LandmarkStatus.REJECTED
        return updated

    I_KC = np.eye(3) - K @ res.C3
    updated.p_G = lm.p_G + K @ res.r
    updated.P_f = symmetrize(I_KC @ P_f @ I_KC.T + K @ res.R @ K.T)
    return updated


def clamp_covariance(lm: Landmark) -> None:
    """Keeps the eigenvalues of P_f within the configured bounds, in place."""

    lm.P_f = clamp_eigenvalues(lm.P_f, COVARIANCE_FLOOR, COVARIANCE_CAP)


def in_front_of_cameras(
    lm: Landmark, state: SlidingWindowState, cams: typing.Sequence[PinholeCamera]
) -> bool:
    """True if every camera that sees the landmark has it at positive depth."""

    for entry in lm.track:
        if entry.clone_id not in state.clone_ids:
            continue
        clone = state.clone(entry.clone_id)
        p_c = cams[entry.cam_index].to_camera(clone.R, clone.p, lm.p_G)
        if p_c[2] <= EPSILON_DEPTH:
            return False
    return True


def relinearize_landmark(
    lm: Landmark,
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
    iterations: int = 5,
) -> Landmark:
    """Gauss-Newton re-estimation of a landmark from its window sightings.

    The covariance is reset to u²(JfᵀJf)⁻¹ at the new estimate. This is the
    alternative to :py:func:`ekf_update_landmark` that carries no prior.
    A landmark that cannot be refined, because it leaves a camera's field
    or its information matrix is ill conditioned, comes back REJECTED and
    otherwise unchanged.
    """

    updated = lm.copy()
    try:
        p_g, H = refine_landmark(lm.p_G, track, state, cams, iterations=iterations)
    except (BehindCamera, MeasurementError, np.linalg.LinAlgError) as ex:
        log.debug("landmark %i rejected: %s", lm.id, ex)
        updated.status = LandmarkStatus.REJECTED
        return updated
    u = track[0].u
    updated.p_G = p_g
    updated.P_f = symmetrize(u**2 * np.linalg.inv(H))
    return updated


__all__ = [
    "COVARIANCE_FLOOR",
    "COVARIANCE_CAP",
    "LandmarkResidual",
    "split_landmark_system",
    "ekf_update_landmark",
    "clamp_covariance",
    "in_front_of_cameras",
    "relinearize_landmark",
]
