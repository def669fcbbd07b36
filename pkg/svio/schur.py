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

"""Pose update through the Schur complement of the landmark block.

The stacked model r = Jx δx + Jf δp_f + n is moved into information form::

    [b1]   [C1   C2] [δx  ]          b1 = Jxᵀr   C1 = JxᵀJx
    [b2] = [C2ᵀ  C3] [δp_f] + n'     b2 = Jfᵀr   C2 = JxᵀJf   C3 = JfᵀJf

with cov(n') = [C1 C2; C2ᵀ C3] u². Eliminating the landmarks leaves an
equivalent pose-only model b_s = S δx + n_s with::

    S   = C1 - C2 C3⁻¹ C2ᵀ
    b_s = b1 - C2 C3⁻¹ b2
    cov(n_s) = S u²

C3 is block diagonal with one 3×3 block per landmark, so the elimination is
a sum of rank-3 downdates.
"""

import dataclasses
import logging
import typing

import numpy as np
import scipy.linalg

from svio.common import (
    DimensionMismatch,
    EmptyModel,
    InnovationNotInvertible,
    SingularLandmarkBlock,
    symmetrize,
)
from svio.measurement import StackedResidualModel
from svio.state import SlidingWindowState, apply_correction

log = logging.getLogger(__name__)

DEFAULT_C3_EPS = 1e-9


@dataclasses.dataclass
class SchurSystem:
    """Gradient and Hessian blocks of the equivalent residual model.

    ``C3`` holds the L diagonal 3×3 blocks; ``c1_parts`` and ``b1_parts``
    keep each landmark's contribution to C1 and b1 so that a landmark can be
    dropped from the system exactly.
    """

    b1: np.ndarray
    b2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    u: float
    landmark_ids: typing.List[int]
    c1_parts: np.ndarray
    b1_parts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.b1.size)

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_ids)

    @staticmethod
    def block(k: int) -> slice:
        return slice(3 * k, 3 * k + 3)

    def c3_dense(self) -> np.ndarray:
        """C3 as a dense block-diagonal 3L×3L matrix."""

        if not self.n_landmarks:
            return np.zeros((0, 0))
        return scipy.linalg.block_diag(*self.C3)

    def without(self, landmark_ids: typing.Iterable[int]) -> "SchurSystem":
        """The system with some landmarks' rows removed entirely."""

        drop = set(landmark_ids)
        keep = [k for k, lid in enumerate(self.landmark_ids) if lid not in drop]
        columns = np.array([3 * k + i for k in keep for i in range(3)], dtype=int)
        c1_parts = self.c1_parts[keep]
        b1_parts = self.b1_parts[keep]
        return SchurSystem(
            b1=b1_parts.sum(axis=0) if keep else np.zeros(self.n),
            b2=self.b2[columns],
            C1=c1_parts.sum(axis=0) if keep else np.zeros((self.n, self.n)),
            C2=self.C2[:, columns],
            C3=self.C3[keep],
            u=self.u,
            landmark_ids=[self.landmark_ids[k] for k in keep],
            c1_parts=c1_parts,
            b1_parts=b1_parts,
        )


@dataclasses.dataclass
class PoseResidualModel:
    """Equivalent pose-only model b_s = S δx + n_s, cov(n_s) = R1 = S u².

    ``system`` is the Schur system actually eliminated, after removal of the
    landmarks listed in ``removed``.
    """

    b_s: np.ndarray
    S: np.ndarray
    R1: np.ndarray
    u: float
    system: SchurSystem
    removed: typing.List[int] = dataclasses.field(default_factory=list)


def build_equivalent(model: StackedResidualModel) -> SchurSystem:
    """Projects a stacked model into gradient/Hessian form.

    Works landmark by landmark on the stored row blocks of Jf; the dense
    landmark Jacobian is never formed.

    :raise EmptyModel: when the model has no rows.
    """

    if model.M == 0 or model.n_landmarks == 0:
        raise EmptyModel()

    n = model.Jx.shape[1]
    L = model.n_landmarks
    c1_parts = np.zeros((L, n, n))
    b1_parts = np.zeros((L, n))
    C2 = np.zeros((n, 3 * L))
    C3 = np.zeros((L, 3, 3))
    b2 = np.zeros(3 * L)

    for k, rows in enumerate(model.landmark_rows):
        jx = model.Jx[rows]
        jf = model.jf_rows[rows]
        r = model.r[rows]
        block = SchurSystem.block(k)
        c1_parts[k] = jx.T @ jx
        b1_parts[k] = jx.T @ r
        C2[:, block] = jx.T @ jf
        C3[k] = jf.T @ jf
        b2[block] = jf.T @ r

    return SchurSystem(
        b1=b1_parts.sum(axis=0),
        b2=b2,
        C1=c1_parts.sum(axis=0),
        C2=C2,
        C3=C3,
        u=model.u,
        landmark_ids=list(model.landmark_ids),
        c1_parts=c1_parts,
        b1_parts=b1_parts,
    )


def inverse_sym3(
    block: np.ndarray, c3_eps: float = DEFAULT_C3_EPS, landmark_id: int = -1
) -> np.ndarray:
    """Inverse of a symmetric 3×3 matrix by its adjugate.

    :raise SingularLandmarkBlock: when the smallest eigenvalue is not above
        ``c3_eps``.

    >>> inverse_sym3(np.diag([2.0, 4.0, 8.0])).diagonal().tolist()
    [0.5, 0.25, 0.125]
    """

    lowest = float(np.linalg.eigvalsh(block)[0])
    if not lowest > c3_eps:
        raise SingularLandmarkBlock(landmark_id, lowest)

    a, b, c = block[0]
    d, e = block[1, 1:]
    f = block[2, 2]
    A = d * f - e * e
    B = c * e - b * f
    C = b * e - c * d
    D = a * f - c * c
    E = b * c - a * e
    F = a * d - b * b
    det = a * A + b * B + c * C
    return np.array([[A, B, C], [B, D, E], [C, E, F]]) / det


def _eliminate(system: SchurSystem, c3_eps: float) -> typing.Tuple[np.ndarray, np.ndarray]:
    S = system.C1.copy()
    b_s = system.b1.copy()
    for k, lid in enumerate(system.landmark_ids):
        block = SchurSystem.block(k)
        C2_k = system.C2[:, block]
        W = C2_k @ inverse_sym3(system.C3[k], c3_eps, lid)
        S -= W @ C2_k.T
        b_s -= W @ system.b2[block]
    return symmetrize(S), b_s


def schur_marginalize(system: SchurSystem, c3_eps: float = DEFAULT_C3_EPS) -> PoseResidualModel:
    """Eliminates all landmarks, leaving the equivalent pose model.

    Landmarks whose Hessian block is singular are removed from the system and
    the elimination is repeated; their ids are listed in ``removed``.

    :raise EmptyModel: when no landmark survives.
    """

    removed: typing.List[int] = []
    while True:
        if system.n_landmarks == 0:
            raise EmptyModel("every landmark block was singular")
        try:
            S, b_s = _eliminate(system, c3_eps)
        except SingularLandmarkBlock as ex:
            log.debug("%s; removing it and retrying", ex)
            removed.append(ex.landmark_id)
            system = system.without([ex.landmark_id])
            continue
        break

    return PoseResidualModel(
        b_s=b_s, S=S, R1=S * system.u**2, u=system.u, system=system, removed=removed
    )


def ekf_update_pose(
    state: SlidingWindowState, prm: PoseResidualModel
) -> typing.Tuple[SlidingWindowState, np.ndarray]:
    """EKF update of the window from the equivalent pose model.

    With measurement matrix S and noise S u², the gain is::

        K = P Sᵀ (S P Sᵀ + S u²)⁻¹ = P (S P + u² I)⁻¹

    where the right-hand form is also valid when S is rank deficient, as it
    always is for the velocity and bias rows. The covariance update uses the
    Joseph form.

    :returns: the corrected state and the applied correction δx.
    :raise DimensionMismatch: when S does not match the window.
    :raise InnovationNotInvertible: when S P + u² I cannot be factorized.
    """

    n = state.dim
    if prm.S.shape != (n, n):
        raise DimensionMismatch(n, prm.S.shape[0])

    P = state.P
    identity = np.eye(n)
    try:
        K = scipy.linalg.solve(P @ prm.S + prm.u**2 * identity, P).T
    except (np.linalg.LinAlgError, ValueError) as ex:
        raise InnovationNotInvertible(str(ex)) from ex
    if not np.all(np.isfinite(K)):
        raise InnovationNotInvertible("gain has non-finite entries")

    dx = K @ prm.b_s
    I_KS = identity - K @ prm.S
    P_post = I_KS @ P @ I_KS.T + K @ prm.R1 @ K.T

    corrected = apply_correction(state, dx)
    return (
        SlidingWindowState(imu=corrected.imu, clones=corrected.clones, P=symmetrize(P_post)),
        dx,
    )


__all__ = [
    "DEFAULT_C3_EPS",
    "SchurSystem",
    "PoseResidualModel",
    "build_equivalent",
    "inverse_sym3",
    "schur_marginalize",
    "ekf_update_pose",
]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
