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

"""IMU propagation of the nominal state and the error covariance.

Each IMU sample is held constant over the interval that follows it
(zero-order hold). The continuous error dynamics are::

    δθ' = -R δb_g - R n_g
    δp' = δv
    δv' = -[R â]ₓ δθ - R δb_a - R n_a
    δb_a' = n_aw
    δb_g' = n_gw

with the noise vector ordered [n_a, n_aw, n_g, n_gw].
"""

import dataclasses
import typing

import numpy as np
import scipy.linalg

from svio.common import DimensionMismatch, InvalidConfig, InvalidDt, symmetrize
from svio.geometry import UnitQuaternion, skew
from svio.state import BA, BG, IMU_DIM, POS, THETA, VEL, ImuState, SlidingWindowState

# Upper bound on a single integration step, seconds.
MAX_DT = 0.1

GRAVITY = (0.0, 0.0, -9.81)


@dataclasses.dataclass(frozen=True)
class ImuSample:
    """Gyroscope and accelerometer reading at time ``t``."""

    t: float
    omega_m: np.ndarray
    acc_m: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "omega_m", np.asarray(self.omega_m, dtype=float))
        object.__setattr__(self, "acc_m", np.asarray(self.acc_m, dtype=float))
        if not (
            np.isfinite(self.t)
            and np.all(np.isfinite(self.omega_m))
            and np.all(np.isfinite(self.acc_m))
        ):
            raise ValueError("IMU sample at t=%r has non-finite values" % self.t)


@dataclasses.dataclass
class NoiseParams:
    """Continuous-time IMU noise densities and the gravity vector.

    :param sigma_g: gyroscope white noise, rad/s/√Hz.
    :param sigma_a: accelerometer white noise, m/s²/√Hz.
    :param sigma_bg: gyroscope bias random walk, rad/s²/√Hz.
    :param sigma_ba: accelerometer bias random walk, m/s³/√Hz.
    """

    sigma_g: float = 1.7e-4
    sigma_a: float = 2.0e-3
    sigma_bg: float = 1.9e-5
    sigma_ba: float = 3.0e-3
    gravity: typing.Tuple[float, float, float] = GRAVITY

    def validate(self, strict: bool = True) -> None:
        """Checks the densities.

        :param strict: require strictly positive densities (as a filter
            does); otherwise zero is allowed, for noise-free simulation.
        :raise InvalidConfig: on a bad density or gravity vector.
        """

        for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0 or (strict and value == 0.0):
                qualifier = "positive" if strict else "non-negative"
                raise InvalidConfig(name, "%s must be %s, got %r" % (name, qualifier, value))
        if len(self.gravity) != 3:
            raise InvalidConfig("gravity", "gravity must be a 3-vector")

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)

    def continuous_covariance(self) -> np.ndarray:
        """Q_I = diag(σ_a², σ_aw², σ_g², σ_gw²), each repeated over three axes."""

        sigmas = np.repeat([self.sigma_a, self.sigma_ba, self.sigma_g, self.sigma_bg], 3)
        return np.diag(sigmas**2)

    @classmethod
    def zero(cls) -> "NoiseParams":
        return cls(sigma_g=0.0, sigma_a=0.0, sigma_bg=0.0, sigma_ba=0.0)


def _check_dt(dt: float) -> None:
    if not (0.0 < dt < MAX_DT):
        raise InvalidDt(dt)


def propagate_nominal(
    state: ImuState, sample: ImuSample, dt: float, noise: NoiseParams
) -> ImuState:
    """Integrates the nominal IMU state over ``dt`` with the sample held.

    The attitude is advanced with the exact exponential of the held body
    rate, ``q ⊗ exp(ω̂ dt)``. Velocity and position use RK4 with the rotation
    taken at the start, midpoint and end of the step.

    :raise InvalidDt: unless 0 < dt < 0.1 s.
    """

    _check_dt(dt)

    omega = sample.omega_m - state.bg
    acc = sample.acc_m - state.ba
    g = noise.g

    q0 = state.q
    q_half = q0 * UnitQuaternion.exp(0.5 * dt * omega)
    q1 = q0 * UnitQuaternion.exp(dt * omega)
    a0 = q0.to_matrix() @ acc + g
    a_half = q_half.to_matrix() @ acc + g
    a1 = q1.to_matrix() @ acc + g

    v = state.v
    k1v, k1p = a0, v
    k2v, k2p = a_half, v + 0.5 * dt * k1v
    k3v, k3p = a_half, v + 0.5 * dt * k2v
    k4v, k4p = a1, v + dt * k3v

    return ImuState(
        q=q1,
        p=state.p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        v=v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        ba=state.ba.copy(),
        bg=state.bg.copy(),
        t=state.t + dt,
    )


def error_state_jacobians(
    state: ImuState, sample: ImuSample
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Continuous-time error dynamics F (15×15) and noise input G (15×12)."""

    R = state.q.to_matrix()
    acc = sample.acc_m - state.ba

    F = np.zeros((IMU_DIM, IMU_DIM))
    F[THETA, BG] = -R
    F[POS, VEL] = np.eye(3)
    F[VEL, THETA] = -skew(R @ acc)
    F[VEL, BA] = -R

    G = np.zeros((IMU_DIM, 12))
    G[VEL, 0:3] = -R
    G[BA, 3:6] = np.eye(3)
    G[THETA, 6:9] = -R
    G[BG, 9:12] = np.eye(3)
    return F, G


def transition_matrix(state: ImuState, sample: ImuSample, dt: float, order: int = 3) -> np.ndarray:
    """Error-state transition matrix over one step.

    Φ = I + F dt + ½F²dt² + ⅙F³dt³, truncated after ``order`` terms. F is
    nilpotent of degree four, so the third-order series equals expm(F dt)
    up to roundoff.

    :param order: 1 (Euler), 2 or 3.
    :raise InvalidDt: unless 0 < dt < 0.1 s.
    """

    _check_dt(dt)
    if order not in (1, 2, 3):
        raise ValueError("unsupported series order %r" % order)

    F, _ = error_state_jacobians(state, sample)
    Fdt = F * dt
    Phi = np.eye(IMU_DIM)
    term = np.eye(IMU_DIM)
    for k in range(1, order + 1):
        term = term @ Fdt / k
        Phi = Phi + term
    return Phi


def transition_matrix_expm(state: ImuState, sample: ImuSample, dt: float) -> np.ndarray:
    """Φ = expm(F dt) by scaling and squaring."""

    _check_dt(dt)
    F, _ = error_state_jacobians(state, sample)
    return scipy.linalg.expm(F * dt)


def discrete_noise(
    state: ImuState, sample: ImuSample, Phi: np.ndarray, dt: float, noise: NoiseParams
) -> np.ndarray:
    """Discrete process noise Q = Φ G Q_I Gᵀ Φᵀ dt."""

    _check_dt(dt)
    _, G = error_state_jacobians(state, sample)
    Q = Phi @ G @ noise.continuous_covariance() @ G.T @ Phi.T * dt
    return symmetrize(Q)


def propagate_covariance(
    state: SlidingWindowState, Phi: np.ndarray, Qd: np.ndarray
) -> SlidingWindowState:
    """Propagates the window covariance with the IMU transition.

    Only the IMU block and the IMU-clone cross blocks change; the clone block
    is untouched.

    :raise DimensionMismatch: unless Φ and Q are 15×15.
    """

    for matrix in (Phi, Qd):
        if matrix.shape != (IMU_DIM, IMU_DIM):
            raise DimensionMismatch(IMU_DIM, matrix.shape[0])

    P = state.P.copy()
    P[:IMU_DIM, :IMU_DIM] = Phi @ state.P[:IMU_DIM, :IMU_DIM] @ Phi.T + Qd
    P_ia = Phi @ state.P[:IMU_DIM, IMU_DIM:]
    P[:IMU_DIM, IMU_DIM:] = P_ia
    P[IMU_DIM:, :IMU_DIM] = P_ia.T
    return SlidingWindowState(imu=state.imu, clones=state.clones, P=symmetrize(P))


def propagate(
    state: SlidingWindowState,
    sample: ImuSample,
    dt: float,
    noise: NoiseParams,
    order: int = 3,
) -> SlidingWindowState:
    """One full step: nominal state, transition, process noise and covariance.

    Jacobians are evaluated at the state before the step.
    """

    Phi = transition_matrix(state.imu, sample, dt, order=order)
    Qd = discrete_noise(state.imu, sample, Phi, dt, noise)
    imu = propagate_nominal(state.imu, sample, dt, noise)
    propagated = propagate_covariance(state, Phi, Qd)
    return SlidingWindowState(imu=imu, clones=propagated.clones, P=propagated.P)


def interpolate_sample(before: ImuSample, after: ImuSample, t: float) -> ImuSample:
    """Linear interpolation between two bracketing samples.

    >>> s = interpolate_sample(ImuSample(0.0, [0, 0, 0], [0, 0, 0]),
    ...                        ImuSample(1.0, [2, 0, 0], [0, 0, 4]), 0.25)
    >>> s.omega_m.tolist(), s.acc_m.tolist()
    ([0.5, 0.0, 0.0], [0.0, 0.0, 1.0])
    """

    if not before.t <= t <= after.t or before.t == after.t:
        raise ValueError("t=%r not within [%r, %r]" % (t, before.t, after.t))
    alpha = (t - before.t) / (after.t - before.t)
    return ImuSample(
        t=t,
        omega_m=(1.0 - alpha) * before.omega_m + alpha * after.omega_m,
        acc_m=(1.0 - alpha) * before.acc_m + alpha * after.acc_m,
    )


__all__ = [
    "MAX_DT",
    "GRAVITY",
    "ImuSample",
    "NoiseParams",
    "propagate_nominal",
    "error_state_jacobians",
    "transition_matrix",
    "transition_matrix_expm",
    "discrete_noise",
    "propagate_covariance",
    "propagate",
    "interpolate_sample",
]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
