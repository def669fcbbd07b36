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

"""Common functionality shared by several modules.

Holds the exception hierarchy and a handful of small numerical helpers for
covariance bookkeeping.
"""

import typing

import numpy as np


class SvioError(Exception):
    """Base class for all errors raised by svio."""


class GeometryError(SvioError):
    """Base class for camera-geometry failures."""


class BehindCamera(GeometryError):
    def __init__(self, depth: float, msg: str = "") -> None:
        super().__init__(msg or "point depth %.3g is not in front of the camera" % depth)
        self.depth = depth


class StateError(SvioError):
    """Base class for state bookkeeping failures."""


class DimensionMismatch(StateError):
    def __init__(self, expected: int, actual: int, msg: str = "") -> None:
        super().__init__(msg or "expected dimension %i, got %i" % (expected, actual))
        self.expected = expected
        self.actual = actual


class UnknownClone(StateError, KeyError):
    def __init__(self, clone_id: int) -> None:
        super().__init__("no clone with id %r in the window" % clone_id)
        self.clone_id = clone_id

    def __str__(self) -> str:
        # KeyError would otherwise quote the whole message.
        return str(self.args[0])


class InvalidDt(SvioError, ValueError):
    def __init__(self, dt: float) -> None:
        super().__init__("integration step %r s is outside (0, 0.1)" % dt)
        self.dt = dt


class MeasurementError(SvioError):
    """Base class for failures while building residual models."""


class InsufficientTrack(MeasurementError):
    def __init__(self, landmark_id: int, msg: str = "") -> None:
        super().__init__(
            msg or "landmark %i is not seen from two distinct clones" % landmark_id
        )
        self.landmark_id = landmark_id


class LowParallax(MeasurementError):
    def __init__(self, parallax: float, landmark_id: typing.Optional[int] = None) -> None:
        super().__init__(
            "parallax %.4f deg of landmark %r is below the threshold"
            % (np.degrees(parallax), landmark_id)
        )
        self.parallax = parallax
        self.landmark_id = landmark_id


class IllConditioned(MeasurementError):
    def __init__(self, condition: float) -> None:
        super().__init__("landmark information matrix is ill conditioned (cond=%.3g)" % condition)
        self.condition = condition


class UpdateError(SvioError):
    """Base class for measurement-update failures."""


class EmptyModel(UpdateError):
    def __init__(self, msg: str = "") -> None:
        super().__init__(msg or "residual model has no rows")


class SingularLandmarkBlock(UpdateError):
    def __init__(self, landmark_id: int, min_eigenvalue: float) -> None:
        super().__init__(
            "Hessian block of landmark %i is singular (min eigenvalue %.3g)"
            % (landmark_id, min_eigenvalue)
        )
        self.landmark_id = landmark_id
        self.min_eigenvalue = min_eigenvalue


class InnovationNotInvertible(UpdateError):
    def __init__(self, msg: str = "") -> None:
        super().__init__(msg or "innovation matrix could not be factorized")


class SingularSystem(UpdateError):
    def __init__(self, msg: str = "") -> None:
        super().__init__(msg or "landmark normal equations are singular")


class InvalidConfig(SvioError, ValueError):
    def __init__(self, field: str, msg: str = "") -> None:
        super().__init__(msg or "invalid value for %r" % field)
        self.field = field


class DataError(SvioError):
    """Base class for dataset and file-format failures."""


class MalformedRow(DataError):
    def __init__(self, path: str, line_no: int, msg: str = "") -> None:
        super().__init__("%s:%i: %s" % (path, line_no, msg or "malformed row"))
        self.path = path
        self.line_no = line_no


class NonMonotonicTime(DataError):
    def __init__(self, previous: float, offending: float) -> None:
        super().__init__(
            "timestamp %.9f does not come after %.9f" % (offending, previous)
        )
        self.previous = previous
        self.offending = offending


class InsufficientOverlap(DataError):
    def __init__(self, pairs: int) -> None:
        super().__init__("only %i associated pose pairs, need at least 3" % pairs)
        self.pairs = pairs


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Returns (M + Mᵀ) / 2.

    >>> symmetrize(np.array([[1.0, 2.0], [0.0, 1.0]]))
    array([[1., 1.],
           [1., 1.]])
    """

    return 0.5 * (matrix + matrix.T)


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """Frobenius norm of the difference, relative to the expected value.

    A zero expected value falls back to the absolute difference.

    >>> relative_error(np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    0.0
    >>> relative_error(np.array([2.0]), np.array([1.0]))
    1.0
    """

    diff = float(np.linalg.norm(np.asarray(actual) - np.asarray(expected)))
    scale = float(np.linalg.norm(expected))
    if scale == 0.0:
        return diff
    return diff / scale


def clamp_eigenvalues(matrix: np.ndarray, floor: float, cap: float) -> np.ndarray:
    """Clamps the eigenvalues of a symmetric matrix into [floor, cap].

    >>> clamped = clamp_eigenvalues(np.diag([1e-9, 1.0, 1e4]), 1e-6, 1e2)
    >>> np.allclose(clamped, np.diag([1e-6, 1.0, 1e2]), rtol=1e-12, atol=0.0)
    True
    """

    values, vectors = np.linalg.eigh(symmetrize(matrix))
    values = np.clip(values, floor, cap)
    return symmetrize((vectors * values) @ vectors.T)


def is_psd(matrix: np.ndarray, rtol: float = 1e-10) -> bool:
    """Tests for positive semi-definiteness up to roundoff.

    The smallest eigenvalue may be negative by at most rtol·trace.

    >>> is_psd(np.eye(3))
    True
    >>> is_psd(np.diag([1.0, -1.0]))
    False
    """

    if matrix.size == 0:
        return True
    trace = float(np.trace(matrix))
    lowest = float(np.linalg.eigvalsh(symmetrize(matrix))[0])
    return lowest >= -rtol * max(abs(trace), 1e-300)


__all__ = [
    "SvioError",
    "GeometryError",
    "BehindCamera",
    "StateError",
    "DimensionMismatch",
    "UnknownClone",
    "InvalidDt",
    "MeasurementError",
    "InsufficientTrack",
    "LowParallax",
    "IllConditioned",
    "UpdateError",
    "EmptyModel",
    "SingularLandmarkBlock",
    "InnovationNotInvertible",
    "SingularSystem",
    "InvalidConfig",
    "DataError",
    "MalformedRow",
    "NonMonotonicTime",
    "InsufficientOverlap",
    "symmetrize",
    "relative_error",
    "clamp_eigenvalues",
    "is_psd",
]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
