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

"""Rotations, quaternions and the pinhole camera.

Quaternions follow the Hamilton convention and are stored as (w, x, y, z).
A quaternion ``q_GI`` rotates vectors from the IMU frame {I} into the global
frame {G}: ``v_G = R(q_GI) v_I``.

Attitude errors are defined in the global frame and composed on the left::

    q = δq ⊗ q̂,    δq ≈ [1, ½δθ],    R ≈ (I + [δθ]ₓ) R̂

Note that many codebases use the local (right-multiplied) convention instead;
all Jacobians in this package assume the global one.
"""

import typing

import numpy as np
from scipy.spatial.transform import Rotation

from svio.common import BehindCamera, InvalidConfig

# Guards the 1/Z² singularity of the projection Jacobian.
EPSILON_DEPTH = 1e-6

Vector = typing.Union[np.ndarray, typing.Sequence[float]]


class UnitQuaternion:
    """Unit quaternion in Hamilton convention.

    The components are normalized on construction.

    >>> q = UnitQuaternion(2.0, 0.0, 0.0, 0.0)
    >>> q
    UnitQuaternion(1.0, 0.0, 0.0, 0.0)
    >>> q == UnitQuaternion.identity()
    True
    """

    __slots__ = ("w", "x", "y", "z")

    def __init__(self, w: float, x: float, y: float, z: float) -> None:
        norm = np.sqrt(w * w + x * x + y * y + z * z)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("cannot normalize quaternion (%r, %r, %r, %r)" % (w, x, y, z))
        self.w = float(w / norm)
        self.x = float(x / norm)
        self.y = float(y / norm)
        self.z = float(z / norm)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, wxyz: Vector) -> "UnitQuaternion":
        """Creates a quaternion from a (w, x, y, z) sequence."""

        w, x, y, z = (float(c) for c in wxyz)
        return cls(w, x, y, z)

    @classmethod
    def exp(cls, rotvec: Vector) -> "UnitQuaternion":
        """Quaternion of the rotation by ``‖rotvec‖`` radians about ``rotvec``.

        >>> q = UnitQuaternion.exp([0.0, 0.0, np.pi])
        >>> np.allclose(q.as_array(), [0.0, 0.0, 0.0, 1.0])
        True
        """

        theta = np.asarray(rotvec, dtype=float)
        angle = float(np.linalg.norm(theta))
        half = 0.5 * angle
        if angle < 1e-8:
            # sin(a/2)/a ≈ 1/2 - a²/48
            scale = 0.5 - angle * angle / 48.0
        else:
            scale = np.sin(half) / angle
        return cls(np.cos(half), *(scale * theta))

    @classmethod
    def from_matrix(cls, rotation: np.ndarray) -> "UnitQuaternion":
        """Converts a rotation matrix into a quaternion."""

        x, y, z, w = Rotation.from_matrix(rotation).as_quat()
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        """Returns the components as a (w, x, y, z) array."""

        return np.array([self.w, self.x, self.y, self.z])

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def conjugate(self) -> "UnitQuaternion":
        """The inverse rotation."""

        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        """Hamilton product ``self ⊗ other``."""

        if not isinstance(other, UnitQuaternion):
            return NotImplemented
        return UnitQuaternion(*hamilton_product(self.as_array(), other.as_array()))

    def to_matrix(self) -> np.ndarray:
        """Rotation matrix R(q)."""

        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def rotate(self, vector: Vector) -> np.ndarray:
        return self.to_matrix() @ np.asarray(vector, dtype=float)

    def log(self) -> np.ndarray:
        """Rotation vector of this quaternion, on the shortest path.

        >>> np.allclose(UnitQuaternion.exp([0.1, -0.2, 0.3]).log(), [0.1, -0.2, 0.3])
        True
        """

        w, v = self.w, self.vec
        if w < 0.0:
            w, v = -w, -v
        norm_v = float(np.linalg.norm(v))
        if norm_v < 1e-12:
            return 2.0 * v
        return 2.0 * np.arctan2(norm_v, w) / norm_v * v

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Angle in radians of the rotation taking ``other`` to ``self``."""

        return float(np.linalg.norm((self * other.conjugate()).log()))

    def __repr__(self) -> str:
        return "UnitQuaternion(%r, %r, %r, %r)" % (self.w, self.x, self.y, self.z)

    def __getstate__(self) -> typing.Tuple[float, float, float, float]:
        """Returns the quaternion for pickling/copying."""
        return self.w, self.x, self.y, self.z

    def __setstate__(self, state: typing.Tuple[float, float, float, float]) -> None:
        """Sets the quaternion when unpickling/copying."""
        self.w, self.x, self.y, self.z = state

    def __eq__(self, other: typing.Any) -> bool:
        if other is None:
            return False

        if not isinstance(other, UnitQuaternion):
            return False

        return self.__getstate__() == other.__getstate__()

    def __ne__(self, other: typing.Any) -> bool:
        return not (self == other)

    def __hash__(self) -> int:
        return hash(self.__getstate__())


def hamilton_product(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) arrays, without normalization.

    >>> hamilton_product(np.array([0.0, 1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0, 0.0]))
    array([0., 0., 0., 1.])
    """

    w1, x1, y1, z1 = left
    w2, x2, y2, z2 = right
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def error_quaternion(delta_theta: Vector) -> np.ndarray:
    """The unnormalized small-angle error quaternion [1, ½δθ].

    >>> error_quaternion([2e-3, 0.0, 0.0])
    array([1.   , 0.001, 0.   , 0.   ])
    """

    theta = np.asarray(delta_theta, dtype=float)
    return np.concatenate(([1.0], 0.5 * theta))


def quat_error_compose(delta_theta: Vector, q_hat: UnitQuaternion) -> UnitQuaternion:
    """Composes a global-frame attitude error onto an estimate.

    Returns ``normalize(δq ⊗ q̂)`` with ``δq = [1, ½δθ]``.

    :param delta_theta: attitude error in radians, ‖δθ‖ < π.
    :param q_hat: the current estimate.
    :returns: the corrected quaternion.

    >>> quat_error_compose([0.0, 0.0, 0.0], UnitQuaternion.identity())
    UnitQuaternion(1.0, 0.0, 0.0, 0.0)
    """

    return UnitQuaternion(*hamilton_product(error_quaternion(delta_theta), q_hat.as_array()))


def skew(v: Vector) -> np.ndarray:
    """Skew-symmetric cross-product matrix, ``skew(v) @ w == cross(v, w)``.

    >>> skew([1.0, 0.0, 0.0]) @ np.array([0.0, 1.0, 0.0])
    array([0., 0., 1.])
    """

    x, y, z = (float(c) for c in v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def project(p_c: Vector, epsilon_depth: float = EPSILON_DEPTH) -> np.ndarray:
    """Projects a camera-frame point onto the normalized image plane.

    :raise BehindCamera: when the depth is not above ``epsilon_depth``.

    >>> project([1.0, 2.0, 2.0])
    array([0.5, 1. ])
    """

    x, y, z = (float(c) for c in p_c)
    if z <= epsilon_depth:
        raise BehindCamera(z)
    return np.array([x / z, y / z])


def projection_jacobian(p_c: Vector, epsilon_depth: float = EPSILON_DEPTH) -> np.ndarray:
    """Jacobian of :py:func:`project` with respect to the camera-frame point.

    ::

        J = 1/Z² [[Z, 0, -X],
                  [0, Z, -Y]]

    >>> projection_jacobian([0.0, 0.0, 1.0])
    array([[ 1.,  0., -0.],
           [ 0.,  1., -0.]])
    """

    x, y, z = (float(c) for c in p_c)
    if z <= epsilon_depth:
        raise BehindCamera(z)
    inv_z2 = 1.0 / (z * z)
    return inv_z2 * np.array([[z, 0.0, -x], [0.0, z, -y]])


def is_rotation(rotation: np.ndarray, tol: float = 1e-10) -> bool:
    """Checks RᵀR = I and det(R) = +1 within ``tol``."""

    rotation = np.asarray(rotation, dtype=float)
    if rotation.shape != (3, 3):
        return False
    orthonormal = np.allclose(rotation.T @ rotation, np.eye(3), rtol=0.0, atol=tol)
    return bool(orthonormal and abs(np.linalg.det(rotation) - 1.0) <= tol)


class PinholeCamera:
    """Pinhole camera rigidly mounted on the IMU.

    :param fx, fy, cx, cy: intrinsics in pixels.
    :param width, height: image size in pixels.
    :param R_ic: rotation of the camera frame into the IMU frame.
    :param p_ic: position of the camera centre in the IMU frame, metres.
    """

    __slots__ = ("fx", "fy", "cx", "cy", "width", "height", "R_ic", "p_ic")

    def __init__(
        self,
        fx: float,
        fy: float,
        cx: float,
        cy: float,
        width: int,
        height: int,
        R_ic: typing.Optional[np.ndarray] = None,
        p_ic: typing.Optional[Vector] = None,
    ) -> None:
        if fx <= 0.0 or fy <= 0.0:
            raise InvalidConfig("fx/fy", "focal lengths must be positive, got %r, %r" % (fx, fy))
        if width <= 0 or height <= 0:
            raise InvalidConfig("width/height", "image size must be positive")
        R_ic = np.eye(3) if R_ic is None else np.asarray(R_ic, dtype=float)
        if not is_rotation(R_ic, 1e-9):
            raise InvalidConfig("R_ic", "extrinsic rotation is not orthonormal")

        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.width = int(width)
        self.height = int(height)
        self.R_ic = R_ic
        self.p_ic = np.zeros(3) if p_ic is None else np.asarray(p_ic, dtype=float)

    def __repr__(self) -> str:
        return "PinholeCamera(fx=%r, fy=%r, cx=%r, cy=%r, width=%i, height=%i, p_ic=%r)" % (
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            self.p_ic.tolist(),
        )

    def to_camera(self, R_gi: np.ndarray, p_gi: np.ndarray, p_g: np.ndarray) -> np.ndarray:
        """Transforms a global point into this camera's frame."""

        p_i = R_gi.T @ (p_g - p_gi)
        return self.R_ic.T @ (p_i - self.p_ic)

    def pose_in_global(
        self, R_gi: np.ndarray, p_gi: np.ndarray
    ) -> typing.Tuple[np.ndarray, np.ndarray]:
        """Rotation and centre of the camera in the global frame."""

        return R_gi @ self.R_ic, p_gi + R_gi @ self.p_ic

    def to_pixel(self, z: np.ndarray) -> np.ndarray:
        return np.array([self.fx * z[0] + self.cx, self.fy * z[1] + self.cy])

    def to_normalized(self, pixel: np.ndarray) -> np.ndarray:
        return np.array([(pixel[0] - self.cx) / self.fx, (pixel[1] - self.cy) / self.fy])

    def in_image(self, pixel: np.ndarray) -> bool:
        return bool(0.0 <= pixel[0] < self.width and 0.0 <= pixel[1] < self.height)

    def normalized_sigma(self, sigma_px: float) -> float:
        """Converts a pixel noise sigma into normalized image units."""

        return sigma_px / self.fx

    def __getstate__(self) -> typing.Dict[str, typing.Any]:
        return {name: getattr(self, name) for name in self.__slots__}

    def __setstate__(self, state: typing.Dict[str, typing.Any]) -> None:
        for name, value in state.items():
            setattr(self, name, value)

    def __eq__(self, other: typing.Any) -> bool:
        if not isinstance(other, PinholeCamera):
            return False
        mine, theirs = self.__getstate__(), other.__getstate__()
        return all(np.array_equal(mine[name], theirs[name]) for name in self.__slots__)

    def __ne__(self, other: typing.Any) -> bool:
        return not (self == other)

    __hash__ = None  # type: ignore


__all__ = [
    "EPSILON_DEPTH",
    "UnitQuaternion",
    "PinholeCamera",
    "hamilton_product",
    "error_quaternion",
    "quat_error_compose",
    "skew",
    "project",
    "projection_jacobian",
    "is_rotation",
]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
