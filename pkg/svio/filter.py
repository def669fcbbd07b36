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

"""The sliding-window filter.

Create a :py:class:`Filter` from a :py:class:`FilterConfig`, feed it IMU
samples with :py:meth:`Filter.process_imu` and feature tracks with
:py:meth:`Filter.process_frame`, or hand both streams to
:py:func:`run_filter`.

Every frame the filter clones the current pose, triangulates new landmarks,
and updates with all sightings in the window of every estimated landmark.
The landmarks are marginalized through the Schur complement, so the window
covariance only ever holds the IMU state and the cloned poses; each landmark
keeps its own 3×3 covariance.

The window holds at most ``max_temporal_clones`` recent frames plus
``max_keyframe_clones`` older keyframes. When a recent frame leaves the
temporal part it is kept as a keyframe if it was selected as one, and
marginalized otherwise; the oldest keyframe goes first when there are too
many.
"""

import dataclasses
import logging
import time
import typing

import numpy as np
from scipy.spatial.transform import Rotation

from svio.common import (
    GeometryError,
    InvalidConfig,
    MeasurementError,
    NonMonotonicTime,
    StateError,
    UpdateError,
)
from svio.evalio import TrajectoryRecord
from svio.geometry import PinholeCamera, UnitQuaternion
from svio.landmark import (
    clamp_covariance,
    ekf_update_landmark,
    in_front_of_cameras,
    relinearize_landmark,
    split_landmark_system,
)
from svio.measurement import (
    DEFAULT_MAX_CONDITION,
    DEFAULT_MIN_PARALLAX,
    Frame,
    FrameObservation,
    Observation,
    chi2_threshold,
    gate_observations,
    observations_of,
    stack,
    triangulate,
)
from svio.propagation import (
    MAX_DT,
    ImuSample,
    NoiseParams,
    interpolate_sample,
    propagate,
)
from svio.schur import DEFAULT_C3_EPS, build_equivalent, ekf_update_pose, schur_marginalize
from svio.state import (
    ImuState,
    InitialSigmas,
    Landmark,
    LandmarkStatus,
    SlidingWindowState,
    TrackEntry,
    augment,
    marginalize_clone,
    prune_tracks,
)

log = logging.getLogger(__name__)

LANDMARK_SOLVERS = ("ekf", "gn")

# How far a frame may precede the filter time, seconds.
TIME_TOLERANCE = 1e-6

STAGES = (
    "propagate",
    "triangulate",
    "stack",
    "schur",
    "pose_update",
    "landmark_update",
    "window",
)


@dataclasses.dataclass
class FilterConfig:
    """Tuning of the filter.

    :param pixel_sigma: standard deviation of a feature position, pixels;
        the normalized noise u is this divided by the focal length of the
        first camera.
    :param keyframe_parallax_px: average feature displacement against the
        latest keyframe at which a frame becomes a keyframe.
    :param min_tracked_landmarks: a frame tracking fewer known landmarks
        becomes a keyframe.
    :param max_pose_gap_rot: a frame further than this from every keyframe,
        in radians, becomes a keyframe.
    :param max_pose_gap_trans: likewise, in metres.
    :param landmark_solver: ``ekf`` to update each landmark with its own
        EKF, ``gn`` to re-estimate it by Gauss-Newton every frame.
    :param init_samples: number of IMU samples averaged for the static
        initialization.
    """

    noise: NoiseParams = dataclasses.field(default_factory=NoiseParams)
    cams: typing.List[PinholeCamera] = dataclasses.field(default_factory=list)
    pixel_sigma: float = 1.0
    initial_sigmas: InitialSigmas = dataclasses.field(default_factory=InitialSigmas)
    max_keyframe_clones: int = 2
    max_temporal_clones: int = 2
    chi2_probability: float = 0.95
    gating: bool = True
    min_parallax: float = float(DEFAULT_MIN_PARALLAX)
    max_condition: float = DEFAULT_MAX_CONDITION
    keyframe_parallax_px: float = 15.0
    min_tracked_landmarks: int = 20
    max_pose_gap_rot: float = 0.25
    max_pose_gap_trans: float = 1.0
    c3_eps: float = DEFAULT_C3_EPS
    landmark_solver: str = "ekf"
    init_samples: int = 50
    transition_order: int = 3

    @property
    def u(self) -> float:
        return self.cams[0].normalized_sigma(self.pixel_sigma)

    def validate(self) -> None:
        """:raise InvalidConfig: on any setting the filter cannot run with."""

        self.noise.validate(strict=True)
        if not self.cams:
            raise InvalidConfig("cams", "at least one camera is required")
        for name in (
            "pixel_sigma",
            "min_parallax",
            "max_condition",
            "keyframe_parallax_px",
            "max_pose_gap_rot",
            "max_pose_gap_trans",
            "c3_eps",
        ):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise InvalidConfig(name, "%s must be positive, got %r" % (name, value))
        for name in ("max_keyframe_clones", "max_temporal_clones", "min_tracked_landmarks"):
            if getattr(self, name) < 1:
                raise InvalidConfig(name, "%s must be at least 1" % name)
        if not 0.0 < self.chi2_probability < 1.0:
            raise InvalidConfig("chi2_probability", "chi2_probability must be in (0, 1)")
        if self.landmark_solver not in LANDMARK_SOLVERS:
            raise InvalidConfig(
                "landmark_solver", "landmark_solver must be one of %s" % (LANDMARK_SOLVERS,)
            )
        if self.init_samples < 1:
            raise InvalidConfig("init_samples", "init_samples must be at least 1")
        if self.transition_order not in (1, 2, 3):
            raise InvalidConfig("transition_order", "transition_order must be 1, 2 or 3")


@dataclasses.dataclass
class KeyframeDecision:
    """Whether a frame was selected as a keyframe, and why."""

    is_keyframe: bool
    reason: str
    parallax_px: float = 0.0
    tracked: int = 0
    rotation_gap: float = 0.0
    translation_gap: float = 0.0


@dataclasses.dataclass
class FilterReport:
    """What happened while processing one frame."""

    t: float
    clone_id: int
    update_performed: bool = False
    dx_norm: float = 0.0
    landmarks_used: int = 0
    observations_used: int = 0
    gated: int = 0
    skipped: int = 0
    removed: int = 0
    triangulated: int = 0
    rejected: int = 0
    window_size: int = 0
    keyframe: typing.Optional[KeyframeDecision] = None
    timing: typing.Dict[str, float] = dataclasses.field(
        default_factory=lambda: dict.fromkeys(STAGES, 0.0)
    )


def select_keyframe(
    state: SlidingWindowState,
    tracks: typing.Sequence[FrameObservation],
    landmarks: typing.Mapping[int, Landmark],
    config: FilterConfig,
) -> KeyframeDecision:
    """Decides whether the newest clone in the window is a keyframe.

    The frame becomes a keyframe when any of these holds:

    - the average displacement, in pixels of the first camera, of the
      landmarks it shares with the latest keyframe reaches
      ``keyframe_parallax_px`` (the comparison is inclusive);
    - it tracks fewer than ``min_tracked_landmarks`` known landmarks;
    - its rotation or translation to every keyframe exceeds the pose gap.

    With no keyframe in the window yet, the frame is a keyframe.
    """

    candidate = state.clones[-1]
    keyframes = [c for c in state.clones[:-1] if c.is_keyframe]

    tracked_ids = set()
    for obs in tracks:
        lm = landmarks.get(obs.landmark_id)
        if lm is None or lm.status is LandmarkStatus.REJECTED:
            continue
        if any(entry.clone_id != candidate.id for entry in lm.track):
            tracked_ids.add(obs.landmark_id)
    tracked = len(tracked_ids)

    if not keyframes:
        return KeyframeDecision(True, "first keyframe", tracked=tracked)

    latest = keyframes[-1]
    fx = config.cams[0].fx
    displacements = []
    for obs in tracks:
        if obs.cam_index != 0 or obs.landmark_id not in landmarks:
            continue
        for entry in landmarks[obs.landmark_id].track:
            if entry.clone_id == latest.id and entry.cam_index == 0:
                displacements.append(fx * float(np.linalg.norm(obs.z - entry.z)))
                break
    parallax = float(np.mean(displacements)) if displacements else 0.0

    gaps = [
        (candidate.q.angle_to(kf.q), float(np.linalg.norm(candidate.p - kf.p))) for kf in keyframes
    ]
    rotation_gap, translation_gap = min(gaps, key=lambda gap: (gap[1], gap[0]))
    out_of_range = all(
        rot > config.max_pose_gap_rot or trans > config.max_pose_gap_trans for rot, trans in gaps
    )

    decision = KeyframeDecision(
        False,
        "",
        parallax_px=parallax,
        tracked=tracked,
        rotation_gap=rotation_gap,
        translation_gap=translation_gap,
    )
    if displacements and parallax >= config.keyframe_parallax_px:
        decision.is_keyframe, decision.reason = True, "parallax"
    elif tracked < config.min_tracked_landmarks:
        decision.is_keyframe, decision.reason = True, "few tracked landmarks"
    elif out_of_range:
        decision.is_keyframe, decision.reason = True, "pose gap"
    return decision


def static_initialization(
    samples: typing.Sequence[ImuSample], noise: NoiseParams, sigmas: InitialSigmas
) -> SlidingWindowState:
    """Initial state of a sensor at rest.

    The attitude aligns the mean specific force with -g; yaw is left at the
    smallest rotation that does so. Position, velocity and biases are zero.
    """

    if not samples:
        raise StateError("no IMU samples to initialize from")
    mean_acc = np.mean([s.acc_m for s in samples], axis=0)
    up = -noise.g / np.linalg.norm(noise.g)
    rotation, _ = Rotation.align_vectors([up], [mean_acc])
    imu = ImuState(
        q=UnitQuaternion.from_matrix(rotation.as_matrix()),
        t=samples[-1].t,
    )
    return SlidingWindowState(imu=imu, clones=[], P=sigmas.covariance())


class Filter:
    """The sliding-window visual-inertial filter.

    One instance processes one stream. It holds no reference to global state
    and may be handed between threads, but must not be used by two at once.
    """

    def __init__(self, config: FilterConfig) -> None:
        config.validate()
        self.config = config
        self.state: typing.Optional[SlidingWindowState] = None
        self.landmarks: typing.Dict[int, Landmark] = {}
        self.dropped_samples = 0
        self._last_sample: typing.Optional[ImuSample] = None
        self._init_buffer: typing.List[ImuSample] = []
        self._temporal: typing.List[int] = []
        self._keyframes: typing.List[int] = []
        self._next_clone_id = 0
        self._threshold = chi2_threshold(config.chi2_probability, 2)
        self._u = config.u

    def __repr__(self) -> str:
        t = self.state.imu.t if self.state is not None else None
        return "Filter(t=%r, clones=%r, landmarks=%i)" % (
            t,
            self.state.clone_ids if self.state is not None else [],
            len(self.landmarks),
        )

    @property
    def initialized(self) -> bool:
        return self.state is not None

    @property
    def t(self) -> float:
        if self.state is None:
            raise StateError("filter is not initialized")
        return self.state.imu.t

    def initialize(self, state: SlidingWindowState) -> None:
        """Starts the filter from a given window state, clones included."""

        self.state = state.copy()
        self._temporal = [c.id for c in state.clones]
        self._keyframes = []
        self._next_clone_id = max(state.clone_ids, default=-1) + 1
        self._last_sample = None
        self._init_buffer = []

    def _integrate(self, sample: ImuSample, t_end: float) -> None:
        """Propagates to ``t_end`` with ``sample`` held."""

        assert self.state is not None
        gap = t_end - self.state.imu.t
        if gap <= 0.0:
            return
        steps = int(np.ceil(gap / (0.5 * MAX_DT)))
        start = self.state.imu.t
        for k in range(1, steps + 1):
            target = t_end if k == steps else start + gap * k / steps
            dt = target - self.state.imu.t
            if dt <= 0.0:
                continue
            self.state = propagate(
                self.state, sample, dt, self.config.noise, order=self.config.transition_order
            )
        # Pin the clock to the target, free of summation roundoff.
        self.state.imu.t = t_end

    def process_imu(self, sample: ImuSample) -> None:
        """Takes one IMU sample.

        The previous sample is held constant up to this sample's time. Until
        ``init_samples`` samples have been seen (and unless
        :py:meth:`initialize` was called) the samples only feed the static
        initialization. A sample not after its predecessor is dropped and
        counted in ``dropped_samples``.
        """

        reference = self._last_sample.t if self._last_sample is not None else None
        if reference is None and self._init_buffer:
            reference = self._init_buffer[-1].t
        if reference is None and self.state is not None:
            reference = self.state.imu.t - TIME_TOLERANCE
        if reference is not None and not sample.t > reference:
            self.dropped_samples += 1
            log.debug("dropped IMU sample: %s", NonMonotonicTime(reference, sample.t))
            return

        if self.state is None:
            self._init_buffer.append(sample)
            if len(self._init_buffer) >= self.config.init_samples:
                self.state = static_initialization(
                    self._init_buffer, self.config.noise, self.config.initial_sigmas
                )
                self._last_sample = sample
                self._init_buffer = []
                log.info(
                    "initialized at t=%.6f from %i samples", sample.t, self.config.init_samples
                )
            return

        held = self._last_sample if self._last_sample is not None else sample
        self._integrate(held, sample.t)
        self._last_sample = sample

    def propagate_to(self, t: float) -> None:
        """Integrates the held IMU sample up to ``t``.

        :raise NonMonotonicTime: when ``t`` lies before the filter time.
        """

        if self.state is None:
            raise StateError("filter is not initialized")
        if t < self.state.imu.t - TIME_TOLERANCE:
            raise NonMonotonicTime(self.state.imu.t, t)
        if t > self.state.imu.t:
            if self._last_sample is None:
                raise StateError("no IMU sample to propagate with")
            self._integrate(self._last_sample, t)

    def _observation(self, lid: int, entry: TrackEntry) -> Observation:
        return Observation(lid, entry.clone_id, entry.cam_index, entry.z, self._u)

    def _add_sightings(self, clone_id: int, tracks: typing.Sequence[FrameObservation]) -> None:
        for obs in tracks:
            lm = self.landmarks.get(obs.landmark_id)
            if lm is None or lm.status is LandmarkStatus.REJECTED:
                lm = Landmark(id=obs.landmark_id)
                self.landmarks[obs.landmark_id] = lm
            lm.track.append(TrackEntry(clone_id, obs.cam_index, np.asarray(obs.z, dtype=float)))

    def _gate_sightings(self, clone_id: int, report: FilterReport) -> None:
        assert self.state is not None
        fresh = []
        for lid in sorted(self.landmarks):
            lm = self.landmarks[lid]
            if lm.status is not LandmarkStatus.ESTIMATING:
                continue
            fresh.extend(
                self._observation(lid, entry) for entry in lm.track if entry.clone_id == clone_id
            )
        if not fresh:
            return
        _, rejected = gate_observations(
            fresh, self.state, self.landmarks, self.config.cams, self._threshold
        )
        for obs in rejected:
            lm = self.landmarks[obs.landmark_id]
            lm.track = [
                e
                for e in lm.track
                if not (e.clone_id == obs.clone_id and e.cam_index == obs.cam_index)
            ]
        report.gated = len(rejected)

    def _triangulate_candidates(self, report: FilterReport) -> None:
        assert self.state is not None
        for lid in sorted(self.landmarks):
            lm = self.landmarks[lid]
            if lm.status is not LandmarkStatus.CANDIDATE or len(lm.clone_ids) < 2:
                continue
            track = [self._observation(lid, entry) for entry in lm.track]
            try:
                p_g, P_f = triangulate(
                    track,
                    self.state,
                    self.config.cams,
                    min_parallax=self.config.min_parallax,
                    max_condition=self.config.max_condition,
                )
            except (MeasurementError, GeometryError) as ex:
                log.debug("landmark %i stays a candidate: %s", lid, ex)
                continue
            lm.p_G = p_g
            lm.P_f = P_f
            clamp_covariance(lm)
            lm.status = LandmarkStatus.ESTIMATING
            report.triangulated += 1

    def _update(self, report: FilterReport) -> None:
        assert self.state is not None
        timing = report.timing

        if not any(report.clone_id in lm.clone_ids for lm in self.landmarks.values()):
            log.debug("no update at t=%.6f: frame has no sightings", self.state.imu.t)
            return

        started = time.perf_counter()
        observations: typing.List[Observation] = []
        for lid in sorted(self.landmarks):
            lm = self.landmarks[lid]
            if lm.status is LandmarkStatus.ESTIMATING:
                observations.extend(observations_of(lm, self._u))
        model = stack(observations, self.state, self.landmarks, self.config.cams)
        timing["stack"] = time.perf_counter() - started
        report.skipped = len(model.skipped)
        if model.M == 0:
            return

        started = time.perf_counter()
        try:
            prm = schur_marginalize(build_equivalent(model), c3_eps=self.config.c3_eps)
        except UpdateError as ex:
            log.debug("no pose update at t=%.6f: %s", self.state.imu.t, ex)
            return
        finally:
            timing["schur"] = time.perf_counter() - started
        for lid in prm.removed:
            self.landmarks[lid].status = LandmarkStatus.CANDIDATE
        report.removed = len(prm.removed)

        started = time.perf_counter()
        try:
            self.state, dx = ekf_update_pose(self.state, prm)
        except UpdateError as ex:
            log.warning("pose update failed at t=%.6f: %s", self.state.imu.t, ex)
            return
        finally:
            timing["pose_update"] = time.perf_counter() - started

        report.update_performed = True
        report.dx_norm = float(np.linalg.norm(dx))
        report.landmarks_used = prm.system.n_landmarks
        used = set(prm.system.landmark_ids)
        report.observations_used = sum(1 for obs in model.observations if obs.landmark_id in used)

        started = time.perf_counter()
        if self.config.landmark_solver == "ekf":
            updated = [
                ekf_update_landmark(self.landmarks[res.landmark_id], res)
                for res in split_landmark_system(prm.system, dx)
            ]
        else:
            updated = [
                relinearize_landmark(
                    self.landmarks[lid],
                    observations_of(self.landmarks[lid], self._u),
                    self.state,
                    self.config.cams,
                )
                for lid in prm.system.landmark_ids
            ]
        for lm in updated:
            if lm.status is not LandmarkStatus.REJECTED:
                clamp_covariance(lm)
                if not in_front_of_cameras(lm, self.state, self.config.cams):
                    lm.status = LandmarkStatus.REJECTED
            if lm.status is LandmarkStatus.REJECTED:
                report.rejected += 1
                log.debug("landmark %i rejected", lm.id)
            self.landmarks[lm.id] = lm
        timing["landmark_update"] = time.perf_counter() - started

    def _maintain_window(self, is_keyframe: bool) -> None:
        assert self.state is not None
        self.state.clones[-1].is_keyframe = is_keyframe
        self._temporal.append(self.state.clones[-1].id)

        retired = []
        while len(self._temporal) > self.config.max_temporal_clones:
            oldest = self._temporal.pop(0)
            if self.state.clone(oldest).is_keyframe:
                self._keyframes.append(oldest)
            else:
                retired.append(oldest)
        while len(self._keyframes) > self.config.max_keyframe_clones:
            retired.append(self._keyframes.pop(0))

        for clone_id in retired:
            self.state = marginalize_clone(self.state, clone_id)
            for lid in prune_tracks(self.landmarks, clone_id):
                del self.landmarks[lid]

    def process_frame(
        self, tracks: typing.Sequence[FrameObservation], t: float
    ) -> FilterReport:
        """Processes the features tracked in the images taken at ``t``.

        A frame without sightings is cloned and passed to window maintenance,
        but no update is performed.

        :raise StateError: when the filter is not initialized.
        :raise NonMonotonicTime: when ``t`` lies before the filter time.
        """

        if self.state is None:
            raise StateError("filter is not initialized")

        started = time.perf_counter()
        self.propagate_to(t)
        propagate_time = time.perf_counter() - started

        clone_id = self._next_clone_id
        self._next_clone_id += 1
        self.state = augment(self.state, clone_id=clone_id)
        report = FilterReport(t=t, clone_id=clone_id)
        report.timing["propagate"] = propagate_time

        self._add_sightings(clone_id, tracks)
        if self.config.gating:
            self._gate_sightings(clone_id, report)

        started = time.perf_counter()
        self._triangulate_candidates(report)
        report.timing["triangulate"] = time.perf_counter() - started

        self._update(report)

        started = time.perf_counter()
        decision = select_keyframe(self.state, tracks, self.landmarks, self.config)
        self._maintain_window(decision.is_keyframe)
        report.timing["window"] = time.perf_counter() - started
        report.keyframe = decision
        report.window_size = len(self.state.clones)

        log.debug(
            "frame t=%.6f: %i landmarks, |dx|=%.3g, keyframe=%s",
            t,
            report.landmarks_used,
            report.dx_norm,
            decision.is_keyframe,
        )
        return report

    def record(self) -> TrajectoryRecord:
        """The current IMU pose as a trajectory record."""

        if self.state is None:
            raise StateError("filter is not initialized")
        return TrajectoryRecord.from_state(self.state.imu)


@dataclasses.dataclass
class RunResult:
    """Output of :py:func:`run_filter`."""

    trajectory: typing.List[TrajectoryRecord]
    reports: typing.List[FilterReport]
    states: typing.List[SlidingWindowState]


def run_filter(
    filt: Filter,
    imu_samples: typing.Iterable[ImuSample],
    frames: typing.Iterable[Frame],
    keep_states: bool = False,
) -> RunResult:
    """Runs a filter over time-ordered IMU and camera streams.

    Every IMU sample up to a frame's time is processed before the frame.
    When a frame falls strictly between two samples, a sample interpolated
    to the frame time is inserted. Frames arriving before the filter is
    initialized are skipped. The trajectory holds one pose per processed
    frame.

    :param keep_states: also return a copy of the window state after every
        frame.
    """

    samples = iter(imu_samples)
    pending = next(samples, None)
    previous: typing.Optional[ImuSample] = None
    trajectory = []
    reports = []
    states = []

    for frame in frames:
        while pending is not None and pending.t <= frame.t:
            filt.process_imu(pending)
            previous = pending
            pending = next(samples, None)
        if (
            filt.initialized
            and previous is not None
            and pending is not None
            and previous.t < frame.t < pending.t
        ):
            filt.process_imu(interpolate_sample(previous, pending, frame.t))
        if not filt.initialized:
            log.debug("frame at t=%.6f skipped, filter not initialized", frame.t)
            continue
        reports.append(filt.process_frame(frame.observations, frame.t))
        trajectory.append(filt.record())
        if keep_states:
            assert filt.state is not None
            states.append(filt.state.copy())

    while pending is not None:
        filt.process_imu(pending)
        pending = next(samples, None)

    return RunResult(trajectory=trajectory, reports=reports, states=states)


__all__ = [
    "LANDMARK_SOLVERS",
    "STAGES",
    "FilterConfig",
    "KeyframeDecision",
    "FilterReport",
    "select_keyframe",
    "static_initialization",
    "Filter",
    "RunResult",
    "run_filter",
]
