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

"""Dataset ingestion, trajectory files and accuracy metrics.

Reads the CSV files of the EuRoC ASL layout (IMU and ground truth) and
reads and writes trajectories in the TUM text format::

    timestamp tx ty tz qx qy qz qw

Timestamps in the CSV files are integer nanoseconds; everywhere else they
are seconds.
"""

import dataclasses
import logging
import os
import typing

import numpy as np

from svio.common import InsufficientOverlap, MalformedRow, NonMonotonicTime
from svio.geometry import UnitQuaternion
from svio.propagation import ImuSample
from svio.state import ImuState

log = logging.getLogger(__name__)

# Largest time difference at which two poses are associated, seconds.
MAX_ASSOCIATION_DT = 0.01

IMU_HEADER = (
    "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
    "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]"
)
GROUNDTRUTH_HEADER = (
    "#timestamp, p_RS_R_x [m], p_RS_R_y [m], p_RS_R_z [m], q_RS_w [], q_RS_x [], q_RS_y [], "
    "q_RS_z [], v_RS_R_x [m s^-1], v_RS_R_y [m s^-1], v_RS_R_z [m s^-1], b_w_RS_S_x [rad s^-1], "
    "b_w_RS_S_y [rad s^-1], b_w_RS_S_z [rad s^-1], b_a_RS_S_x [m s^-2], b_a_RS_S_y [m s^-2], "
    "b_a_RS_S_z [m s^-2]"
)


@dataclasses.dataclass
class TrajectoryRecord:
    """One pose of a trajectory."""

    t: float
    p: np.ndarray
    q: UnitQuaternion

    @classmethod
    def from_state(cls, state: ImuState) -> "TrajectoryRecord":
        return cls(t=state.t, p=np.array(state.p, dtype=float), q=state.q)


def _is_number(field: str) -> bool:
    try:
        float(field)
    except ValueError:
        return False
    return True


def _csv_rows(
    path: str, columns: int
) -> typing.Iterator[typing.Tuple[int, int, typing.List[float]]]:
    """Generator over (line number, timestamp in ns, values) of a CSV file.

    Blank lines and lines starting with ``#`` are skipped. A first line none
    of whose fields is a number is taken as a header; any other line that
    does not parse is malformed.
    """

    previous: typing.Optional[int] = None
    with open(path, "r", encoding="ascii") as infile:
        for line_no, line in enumerate(infile, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [field.strip() for field in line.split(",")]
            try:
                t_ns = int(fields[0])
                values = [float(field) for field in fields[1:]]
            except ValueError:
                if line_no == 1 and not any(_is_number(field) for field in fields):
                    continue
                raise MalformedRow(path, line_no, "cannot parse %r" % line) from None
            if len(values) < columns:
                raise MalformedRow(
                    path, line_no, "expected %i values, found %i" % (columns, len(values))
                )
            if not np.all(np.isfinite(values)):
                raise MalformedRow(path, line_no, "non-finite value")
            if previous is not None and t_ns <= previous:
                raise NonMonotonicTime(previous / 1e9, t_ns / 1e9)
            previous = t_ns
            yield line_no, t_ns, values


def read_imu_csv(path: str) -> typing.Iterator[ImuSample]:
    """Streams the samples of an EuRoC ``imu0/data.csv`` file.

    Rows are ``timestamp[ns],wx,wy,wz,ax,ay,az``.

    :raise MalformedRow: on a row that does not parse.
    :raise NonMonotonicTime: when timestamps do not strictly increase.
    """

    for _, t_ns, values in _csv_rows(path, 6):
        yield ImuSample(t_ns / 1e9, np.array(values[0:3]), np.array(values[3:6]))


def read_groundtruth_csv(path: str) -> typing.List[ImuState]:
    """Reads an EuRoC ``state_groundtruth_estimate0/data.csv`` file.

    Rows are ``t[ns], p(3), q(w,x,y,z), v(3), b_ω(3), b_a(3)``.
    """

    states = []
    for _, t_ns, values in _csv_rows(path, 16):
        states.append(
            ImuState(
                q=UnitQuaternion.from_array(values[3:7]),
                p=np.array(values[0:3]),
                v=np.array(values[7:10]),
                ba=np.array(values[13:16]),
                bg=np.array(values[10:13]),
                t=t_ns / 1e9,
            )
        )
    return states


def _ns(t: float) -> int:
    return int(round(t * 1e9))


def write_imu_csv(samples: typing.Iterable[ImuSample], path: str) -> None:
    """Writes samples in the EuRoC IMU layout."""

    with open(path, "w", encoding="ascii") as outfile:
        outfile.write(IMU_HEADER + "\n")
        for sample in samples:
            values = [repr(float(x)) for x in (*sample.omega_m, *sample.acc_m)]
            outfile.write("%i,%s\n" % (_ns(sample.t), ",".join(values)))


def write_groundtruth_csv(states: typing.Iterable[ImuState], path: str) -> None:
    """Writes states in the EuRoC ground-truth layout."""

    with open(path, "w", encoding="ascii") as outfile:
        outfile.write(GROUNDTRUTH_HEADER + "\n")
        for state in states:
            values = np.concatenate((state.p, state.q.as_array(), state.v, state.bg, state.ba))
            outfile.write("%i,%s\n" % (_ns(state.t), ",".join(repr(float(x)) for x in values)))


def format_tum(record: TrajectoryRecord) -> str:
    """One line of a TUM trajectory file.

    >>> format_tum(TrajectoryRecord(0.0, np.zeros(3), UnitQuaternion.identity()))
    '0.000000000 0 0 0 0 0 0 1'
    """

    q = record.q
    values = (*record.p, q.x, q.y, q.z, q.w)
    return "%.9f %s" % (record.t, " ".join("%.15g" % value for value in values))


def write_tum(records: typing.Iterable[TrajectoryRecord], path: str) -> None:
    """Writes a trajectory in the TUM format.

    :raise ValueError: when the records are not sorted by time.
    """

    previous = -np.inf
    with open(path, "w", encoding="ascii") as outfile:
        for record in records:
            if record.t < previous:
                raise ValueError("trajectory records are not sorted at t=%.9f" % record.t)
            previous = record.t
            outfile.write(format_tum(record) + "\n")


def read_tum(path: str) -> typing.List[TrajectoryRecord]:
    """Reads a TUM trajectory file; ``#`` comment lines are skipped.

    :raise MalformedRow: on a line without eight numbers.
    """

    records = []
    with open(path, "r", encoding="ascii") as infile:
        for line_no, line in enumerate(infile, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values = [float(field) for field in line.split()]
            except ValueError:
                raise MalformedRow(path, line_no, "cannot parse %r" % line) from None
            if len(values) != 8:
                raise MalformedRow(path, line_no, "expected 8 values, found %i" % len(values))
            t, tx, ty, tz, qx, qy, qz, qw = values
            records.append(
                TrajectoryRecord(t=t, p=np.array([tx, ty, tz]), q=UnitQuaternion(qw, qx, qy, qz))
            )
    return records


def associate(
    estimate: typing.Sequence[TrajectoryRecord],
    truth: typing.Sequence[TrajectoryRecord],
    max_dt: float = MAX_ASSOCIATION_DT,
) -> typing.List[typing.Tuple[int, int]]:
    """Pairs each estimated pose with the nearest ground-truth pose in time.

    :returns: (estimate index, truth index) pairs whose time difference does
        not exceed ``max_dt``.
    """

    if not estimate or not truth:
        return []
    times = np.array([record.t for record in truth])
    order = np.argsort(times, kind="stable")
    sorted_times = times[order]

    pairs = []
    for i, record in enumerate(estimate):
        k = int(np.searchsorted(sorted_times, record.t))
        candidates = [c for c in (k - 1, k) if 0 <= c < len(sorted_times)]
        best = min(candidates, key=lambda c: abs(sorted_times[c] - record.t))
        if abs(sorted_times[best] - record.t) <= max_dt:
            pairs.append((i, int(order[best])))
    return pairs


def align_rigid(
    estimate: np.ndarray, truth: np.ndarray
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid alignment of two point sets, without scale.

    Finds R and t minimizing Σ‖truth_k - (R estimate_k + t)‖² in closed form
    (Horn/Umeyama), with a reflection guard.

    :param estimate: N×3 points.
    :param truth: N×3 points.
    :returns: (R, t).
    """

    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mu_e = estimate.mean(axis=0)
    mu_t = truth.mean(axis=0)
    W = (truth - mu_t).T @ (estimate - mu_e)
    U, _, Vh = np.linalg.svd(W)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vh) < 0.0:
        D[2, 2] = -1.0
    R = U @ D @ Vh
    return R, mu_t - R @ mu_e


def position_errors(
    estimate: typing.Sequence[TrajectoryRecord],
    truth: typing.Sequence[TrajectoryRecord],
    max_dt: float = MAX_ASSOCIATION_DT,
) -> np.ndarray:
    """Per-pose position errors after rigid alignment, as a K×3 array.

    :raise InsufficientOverlap: with fewer than three associated pairs.
    """

    pairs = associate(estimate, truth, max_dt)
    if len(pairs) < 3:
        raise InsufficientOverlap(len(pairs))
    est_xyz = np.array([estimate[i].p for i, _ in pairs])
    gt_xyz = np.array([truth[j].p for _, j in pairs])
    R, t = align_rigid(est_xyz, gt_xyz)
    return gt_xyz - (est_xyz @ R.T + t)


def ate_rmse(
    estimate: typing.Sequence[TrajectoryRecord],
    truth: typing.Sequence[TrajectoryRecord],
    max_dt: float = MAX_ASSOCIATION_DT,
) -> float:
    """Absolute trajectory error: RMS position error after rigid alignment.

    :raise InsufficientOverlap: with fewer than three associated pairs.
    """

    errors = position_errors(estimate, truth, max_dt)
    return float(np.sqrt(np.mean(np.sum(errors**2, axis=1))))


def error_summary(
    estimate: typing.Sequence[TrajectoryRecord],
    truth: typing.Sequence[TrajectoryRecord],
    max_dt: float = MAX_ASSOCIATION_DT,
) -> typing.Dict[str, float]:
    """RMSE overall and per axis, and the largest position error."""

    errors = position_errors(estimate, truth, max_dt)
    rms = np.sqrt(np.mean(errors**2, axis=0))
    return {
        "ate_rmse": float(np.sqrt(np.sum(rms**2))),
        "rmse_x": float(rms[0]),
        "rmse_y": float(rms[1]),
        "rmse_z": float(rms[2]),
        "max": float(np.max(np.linalg.norm(errors, axis=1))),
    }


def nees(error: np.ndarray, P: np.ndarray) -> float:
    """Normalized estimation error squared, eᵀ P⁻¹ e.

    >>> nees(np.array([1.0, 2.0]), np.diag([1.0, 4.0]))
    2.0
    """

    error = np.asarray(error, dtype=float)
    return float(error @ np.linalg.solve(P, error))


def load_euroc(root: str) -> typing.Tuple[typing.List[ImuSample], typing.List[ImuState]]:
    """IMU stream and ground truth of an EuRoC sequence.

    ``root`` is either the sequence directory or its ``mav0`` subdirectory.
    """

    if os.path.isdir(os.path.join(root, "mav0")):
        root = os.path.join(root, "mav0")
    imu = list(read_imu_csv(os.path.join(root, "imu0", "data.csv")))
    truth = read_groundtruth_csv(os.path.join(root, "state_groundtruth_estimate0", "data.csv"))
    log.info("loaded %i IMU samples and %i ground-truth poses from %s", len(imu), len(truth), root)
    return imu, truth


__all__ = [
    "MAX_ASSOCIATION_DT",
    "TrajectoryRecord",
    "read_imu_csv",
    "read_groundtruth_csv",
    "write_imu_csv",
    "write_groundtruth_csv",
    "format_tum",
    "write_tum",
    "read_tum",
    "associate",
    "align_rigid",
    "position_errors",
    "ate_rmse",
    "error_summary",
    "nees",
    "load_euroc",
]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
