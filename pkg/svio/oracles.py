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

"""Brute-force reference implementations.

Nothing in the filter calls into this module. The functions here recompute
the results of the Schur update path the slow, obvious way so that tests and
the ``svio-verify`` command can compare the two. Apart from the camera
projection primitives they share no code with the production path.
"""

import dataclasses
import itertools
import typing

import numpy as np
import scipy.linalg

from svio.common import IllConditioned, SingularSystem, relative_error
from svio.geometry import PinholeCamera, UnitQuaternion, project, projection_jacobian
from svio.measurement import Observation, StackedResidualModel, stack
from svio.schur import build_equivalent, ekf_update_pose, schur_marginalize
from svio.state import ClonePose, ImuState, Landmark, LandmarkStatus, SlidingWindowState

# Largest condition number of JfᵀJf the dense oracle accepts.
MAX_ORACLE_CONDITION = 1e12


def euroc_like_camera(p_ic: typing.Optional[typing.Sequence[float]] = None) -> PinholeCamera:
    """A 752×480 pinhole camera with EuRoC-like intrinsics."""

    return PinholeCamera(458.654, 457.296, 367.215, 248.375, 752, 480, p_ic=p_ic)


def _ekf_update(
    P: np.ndarray, H: np.ndarray, r: np.ndarray, u: float
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Textbook EKF update with noise u²I, Joseph form."""

    n = P.shape[0]
    if H.shape[0] == 0:
        return np.zeros(n), P.copy()
    R = u**2 * np.eye(H.shape[0])
    innovation = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(innovation)
    I_KH = np.eye(n) - K @ H
    P_post = I_KH @ P @ I_KH.T + K @ R @ K.T
    return K @ r, 0.5 * (P_post + P_post.T)


def direct_marginalized_update(
    model: StackedResidualModel, state: SlidingWindowState
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Dense reference for the Schur pose update.

    The landmark columns are eliminated from the dense system with the
    projector Q = I - Jf (JfᵀJf)⁻¹ Jfᵀ, giving the marginalized measurement
    (Q r, Q Jx) that the raw-residual EKF then consumes. Q is idempotent, so
    (Q Jx)ᵀ(Q Jx) and (Q Jx)ᵀ(Q r) are exactly the Schur complement S and
    the reduced gradient b_s.

    :returns: (dx, P_post).
    :raise SingularSystem: when JfᵀJf is singular.
    """

    Jf = model.Jf
    H_ff = Jf.T @ Jf
    if H_ff.size == 0:
        raise SingularSystem("model has no landmark columns")
    condition = np.linalg.cond(H_ff)
    if not condition < MAX_ORACLE_CONDITION:
        raise SingularSystem("JfᵀJf condition number %.3g" % condition)
    try:
        Q = np.eye(model.M) - Jf @ np.linalg.solve(H_ff, Jf.T)
    except np.linalg.LinAlgError as ex:
        raise SingularSystem(str(ex)) from ex

    return _ekf_update(state.P, Q @ model.Jx, Q @ model.r, model.u)


def nullspace_update(
    model: StackedResidualModel, state: SlidingWindowState
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Left-nullspace (MSCKF-style) reference update.

    Each landmark's rows are projected onto the left nullspace of its Jf
    block, obtained from a full QR decomposition.

    :returns: (dx, P_post).
    :raise SingularSystem: when a landmark block is rank deficient.
    """

    residuals = []
    jacobians = []
    for lid, rows in zip(model.landmark_ids, model.landmark_rows):
        jf = model.jf_rows[rows]
        if jf.shape[0] <= 3:
            raise SingularSystem("landmark %i has only %i rows" % (lid, jf.shape[0]))
        Q, R = scipy.linalg.qr(jf)
        diagonal = np.abs(np.diag(R))
        if diagonal.min() <= 1e-12 * max(diagonal.max(), 1e-300):
            raise SingularSystem("Jf block of landmark %i is rank deficient" % lid)
        nullspace = Q[:, 3:]
        residuals.append(nullspace.T @ model.r[rows])
        jacobians.append(nullspace.T @ model.Jx[rows])

    if not residuals:
        return np.zeros(state.dim), state.P.copy()
    return _ekf_update(state.P, np.vstack(jacobians), np.concatenate(residuals), model.u)


def gauss_newton_landmark(
    track: typing.Sequence[Observation],
    state: SlidingWindowState,
    cams: typing.Sequence[PinholeCamera],
    p0: np.ndarray,
    max_iterations: int = 20,
    tolerance: float = 1e-10,
) -> np.ndarray:
    """Solves for a landmark position by plain Gauss-Newton iteration.

    Iterates Δp = (JfᵀJf)⁻¹ Jfᵀ r until ‖Δp‖ < ``tolerance`` metres or
    ``max_iterations`` steps.

    :raise IllConditioned: when JfᵀJf is numerically singular.
    """

    if len(track) < 2:
        raise IllConditioned(np.inf)

    poses = {clone.id: (clone.q.to_matrix(), clone.p) for clone in state.clones}
    p = np.array(p0, dtype=float)
    for _ in range(max_iterations):
        H = np.zeros((3, 3))
        g = np.zeros(3)
        for obs in track:
            cam = cams[obs.cam_index]
            R_gi, p_gi = poses[obs.clone_id]
            R_cg = cam.R_ic.T @ R_gi.T
            p_c = R_cg @ (p - p_gi) - cam.R_ic.T @ cam.p_ic
            J = projection_jacobian(p_c) @ R_cg
            H += J.T @ J
            g += J.T @ (obs.z - project(p_c))
        condition = np.linalg.cond(H)
        if not condition < MAX_ORACLE_CONDITION:
            raise IllConditioned(condition)
        step = np.linalg.solve(H, g)
        p = p + step
        if np.linalg.norm(step) < tolerance:
            break
    return p


def numeric_jacobian(
    f: typing.Callable[[np.ndarray], np.ndarray], x0: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x0``.

    Component i is stepped by ``eps·max(1, |x0ᵢ|)``.

    >>> numeric_jacobian(lambda x: 2.0 * x, np.array([1.0, 2.0]), eps=1e-3).round(9)
    array([[2., 0.],
           [0., 2.]])
    """

    x0 = np.asarray(x0, dtype=float)
    columns = []
    for i in range(x0.size):
        h = eps * max(1.0, abs(float(x0[i])))
        step = np.zeros_like(x0)
        step[i] = h
        forward = np.atleast_1d(np.asarray(f(x0 + step), dtype=float))
        backward = np.atleast_1d(np.asarray(f(x0 - step), dtype=float))
        columns.append((forward - backward) / (2.0 * h))
    return np.column_stack(columns)


@dataclasses.dataclass
class Problem:
    """A self-contained update problem with known ground truth."""

    state: SlidingWindowState
    landmarks: typing.Dict[int, Landmark]
    observations: typing.List[Observation]
    cams: typing.List[PinholeCamera]
    truth: typing.Dict[int, np.ndarray]
    adversarial: typing.List[int]


def default_rig(stereo: bool = True) -> typing.List[PinholeCamera]:
    """Forward-looking camera, plus a right camera 11 cm along x for stereo."""

    cams = [euroc_like_camera()]
    if stereo:
        cams.append(euroc_like_camera(p_ic=[0.11, 0.0, 0.0]))
    return cams


def _random_covariance(rng: np.random.Generator, n_clones: int) -> np.ndarray:
    variances = np.concatenate(
        (
            np.repeat([1e-4, 1e-3, 1e-3, 1e-4, 1e-6], 3),
            np.tile(np.repeat([1e-4, 1e-3], 3), n_clones),
        )
    )
    n = variances.size
    A = rng.normal(scale=0.3, size=(n, n)) / np.sqrt(n)
    correlation = A @ A.T + np.eye(n)
    d = np.sqrt(variances / np.diag(correlation))
    P = d[:, None] * correlation * d[None, :]
    return 0.5 * (P + P.T)


def random_problem(
    rng: np.random.Generator,
    n_clones: int,
    n_landmarks: int,
    min_observations: int = 2,
    max_observations: int = 8,
    pixel_sigma: float = 1.0,
    stereo: bool = True,
    adversarial: bool = False,
) -> Problem:
    """Builds a random window, landmark field and noisy sightings.

    With ``adversarial`` set, the second clone is an exact copy of the first
    and one extra landmark is seen only by the left camera of those two
    clones, so its Hessian block is singular.
    """

    if n_clones < (3 if adversarial else 2):
        raise ValueError("not enough clones for a well-posed problem")

    cams = default_rig(stereo)
    u = cams[0].normalized_sigma(pixel_sigma)

    clones = []
    for i in range(n_clones):
        q = UnitQuaternion.exp(rng.normal(scale=0.05, size=3))
        p = np.array([0.1 * i, 0.0, 0.0]) + rng.uniform(-0.03, 0.03, 3)
        clones.append(ClonePose(id=10 + 3 * i, q=q, p=p, t=0.05 * i))
    if adversarial:
        clones[1] = dataclasses.replace(clones[1], q=clones[0].q, p=clones[0].p.copy())

    imu = ImuState(
        q=clones[-1].q,
        p=clones[-1].p.copy(),
        v=rng.normal(scale=0.5, size=3),
        ba=rng.normal(scale=0.01, size=3),
        bg=rng.normal(scale=0.001, size=3),
        t=clones[-1].t,
    )
    state = SlidingWindowState(imu=imu, clones=clones, P=_random_covariance(rng, n_clones))

    # Twin clones count as one viewpoint.
    viewpoint = {c.id: (0 if adversarial and i == 1 else i) for i, c in enumerate(clones)}
    slots = list(itertools.product([c.id for c in clones], range(len(cams))))

    R0 = clones[0].q.to_matrix()
    landmarks: typing.Dict[int, Landmark] = {}
    truth: typing.Dict[int, np.ndarray] = {}
    observations: typing.List[Observation] = []

    def sight(lid: int, chosen: typing.Sequence[typing.Tuple[int, int]]) -> None:
        for clone_id, cam_index in chosen:
            clone = state.clone(clone_id)
            p_c = cams[cam_index].to_camera(clone.q.to_matrix(), clone.p, truth[lid])
            z = project(p_c) + rng.normal(scale=u, size=2)
            observations.append(Observation(lid, clone_id, cam_index, z, u))

    for lid in range(n_landmarks):
        depth = rng.uniform(3.0, 10.0)
        p_c0 = np.array([*(depth * rng.uniform(-0.4, 0.4, 2)), depth])
        truth[lid] = clones[0].p + R0 @ p_c0
        count = int(rng.integers(min_observations, min(max_observations, len(slots)) + 1))
        while True:
            picks = rng.choice(len(slots), size=count, replace=False)
            chosen = [slots[k] for k in sorted(picks)]
            if len({viewpoint[clone_id] for clone_id, _ in chosen}) >= 2:
                break
        sight(lid, chosen)

    adversarial_ids = []
    if adversarial:
        lid = n_landmarks
        truth[lid] = clones[0].p + R0 @ np.array([0.3, -0.2, 6.0])
        sight(lid, [(clones[0].id, 0), (clones[1].id, 0)])
        adversarial_ids.append(lid)

    for lid, p_true in truth.items():
        landmarks[lid] = Landmark(
            id=lid,
            p_G=p_true + rng.normal(scale=0.05, size=3),
            P_f=0.05**2 * np.eye(3),
            status=LandmarkStatus.ESTIMATING,
        )

    return Problem(
        state=state,
        landmarks=landmarks,
        observations=observations,
        cams=cams,
        truth=truth,
        adversarial=adversarial_ids,
    )


@dataclasses.dataclass
class TrialResult:
    """Maximal relative deviations of one equivalence trial."""

    seed: int
    n_clones: int
    n_landmarks: int
    dense_deviation: float
    nullspace_deviation: float
    removed: typing.List[int]

    @property
    def worst(self) -> float:
        return max(self.dense_deviation, self.nullspace_deviation)


def equivalence_trial(seed: int) -> TrialResult:
    """Compares the Schur update with both oracles on one random problem.

    Every fourth seed carries an adversarial zero-parallax landmark, which
    the Schur path must drop; the oracles then run on the retained landmarks.
    """

    rng = np.random.default_rng(seed)
    adversarial = seed % 4 == 0
    n_clones = int(rng.integers(3 if adversarial else 2, 7))
    n_landmarks = int(rng.integers(1, 51))
    problem = random_problem(rng, n_clones, n_landmarks, adversarial=adversarial)

    model = stack(problem.observations, problem.state, problem.landmarks, problem.cams)
    prm = schur_marginalize(build_equivalent(model))
    posterior, dx = ekf_update_pose(problem.state, prm)

    retained = model.restricted(prm.system.landmark_ids)
    dx_dense, P_dense = direct_marginalized_update(retained, problem.state)
    dx_null, P_null = nullspace_update(retained, problem.state)

    return TrialResult(
        seed=seed,
        n_clones=n_clones,
        n_landmarks=len(problem.landmarks),
        dense_deviation=max(relative_error(dx, dx_dense), relative_error(posterior.P, P_dense)),
        nullspace_deviation=max(relative_error(dx, dx_null), relative_error(posterior.P, P_null)),
        removed=list(prm.removed),
    )


__all__ = [
    "MAX_ORACLE_CONDITION",
    "direct_marginalized_update",
    "nullspace_update",
    "gauss_newton_landmark",
    "numeric_jacobian",
    "Problem",
    "euroc_like_camera",
    "default_rig",
    "random_problem",
    "TrialResult",
    "equivalence_trial",
]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
