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

"""Commandline scripts.

These scripts are called by the executables defined in pyproject.toml.
Status messages go to stderr; tables go to files, or to stdout when no
output file is given. Set the ``SV_LOG`` environment variable to DEBUG,
INFO, WARNING or ERROR to see the library's log messages.

Exit status is 0 on success, 1 when a run fails or a check is violated,
and 2 on a usage error.
"""

import abc
import csv
import dataclasses
import logging
import optparse
import os
import sys
import time
import typing

import numpy as np

from svio.common import SvioError
from svio.config import default_config, load_config
from svio.evalio import (
    TrajectoryRecord,
    ate_rmse,
    load_euroc,
    nees,
    write_tum,
)
from svio.filter import STAGES, Filter, FilterConfig, FilterReport, run_filter
from svio.landmark import ekf_update_landmark, split_landmark_system
from svio.measurement import stack
from svio.oracles import (
    TrialResult,
    direct_marginalized_update,
    equivalence_trial,
    random_problem,
)
from svio.parallel import map_seeds
from svio.schur import build_equivalent, ekf_update_pose, schur_marginalize
from svio.simulator import (
    SimConfig,
    generate,
    landmark_field_around,
    perturb_initialization,
    synthesize_frames,
)
from svio.state import ImuState, SlidingWindowState, state_error

log = logging.getLogger(__name__)

# Largest relative deviation tolerated between the Schur path and the oracles.
EQUIVALENCE_TOLERANCE = 1e-8

# ATE RMSE bound of a EuRoC run with synthetic tracks, metres.
DEFAULT_MAX_ATE = 0.5

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def configure_logging() -> None:
    """Sets the root log level from ``SV_LOG``; unknown values mean WARNING."""

    level = os.environ.get("SV_LOG", "WARNING").strip().upper()
    if level not in LOG_LEVELS:
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def parse_seeds(text: str) -> typing.List[int]:
    """Parses a seed list such as ``1,2,5`` or ``0-9``.

    >>> parse_seeds("0-2,7")
    [0, 1, 2, 7]
    """

    seeds: typing.List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part.lstrip("-"):
            first, last = part.split("-", 1)
            seeds.extend(range(int(first), int(last) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


@dataclasses.dataclass
class RunMetrics:
    """Accuracy and bookkeeping figures of one filter run."""

    seed: int
    frames: int
    updates: int
    ate_rmse: float
    nees_pose: float
    final_position_error: float
    dropped_samples: int
    timing: typing.Dict[str, float]

    def row(self) -> typing.Dict[str, typing.Any]:
        return {
            "seed": self.seed,
            "frames": self.frames,
            "updates": self.updates,
            "ate_rmse": "%.9g" % self.ate_rmse,
            "nees_pose": "%.9g" % self.nees_pose,
            "final_position_error": "%.9g" % self.final_position_error,
            "dropped_samples": self.dropped_samples,
        }


def evaluate_run(
    seed: int,
    filt: Filter,
    trajectory: typing.Sequence[TrajectoryRecord],
    states: typing.Sequence[SlidingWindowState],
    reports: typing.Sequence[FilterReport],
    truth: typing.Sequence[ImuState],
) -> RunMetrics:
    """Compares a run with the ground truth at the frame times."""

    by_time = {round(s.t, 6): s for s in truth}
    pose_nees = []
    final_error = float("nan")
    for state in states:
        reference = by_time.get(round(state.imu.t, 6))
        if reference is None:
            continue
        error = state_error(reference, state.imu)[:6]
        pose_nees.append(nees(error, state.P[:6, :6]))
        final_error = float(np.linalg.norm(error[3:6]))

    timing = dict.fromkeys(STAGES, 0.0)
    for report in reports:
        for stage, seconds in report.timing.items():
            timing[stage] += seconds

    return RunMetrics(
        seed=seed,
        frames=len(reports),
        updates=sum(1 for report in reports if report.update_performed),
        ate_rmse=ate_rmse(trajectory, [TrajectoryRecord.from_state(s) for s in truth]),
        nees_pose=float(np.mean(pose_nees)) if pose_nees else float("nan"),
        final_position_error=final_error,
        dropped_samples=filt.dropped_samples,
        timing=timing,
    )


def simulate_and_run(
    filter_config: FilterConfig, sim_config: SimConfig, seed: int
) -> typing.Tuple[RunMetrics, typing.List[TrajectoryRecord], typing.List[ImuState]]:
    """Simulates one seed and runs the filter on it.

    The filter starts from the true initial state, perturbed according to
    ``filter_config.initial_sigmas``.
    """

    output = generate(dataclasses.replace(sim_config, seed=seed))
    filt = Filter(filter_config)
    filt.initialize(
        perturb_initialization(
            output.truth[0], filter_config.initial_sigmas, np.random.default_rng([seed, 1])
        )
    )
    result = run_filter(filt, output.imu, output.frames, keep_states=True)
    metrics = evaluate_run(
        seed, filt, result.trajectory, result.states, result.reports, output.frame_truth
    )
    return metrics, result.trajectory, output.frame_truth


def write_table(
    rows: typing.Sequence[typing.Mapping[str, typing.Any]],
    outname: typing.Optional[str],
) -> None:
    """Writes rows as CSV to a file, or to stdout."""

    if not rows:
        return
    if outname:
        print("Writing table to %s" % outname, file=sys.stderr)
        with open(outname, "w", newline="") as outfile:
            writer = csv.DictWriter(outfile, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


class Command(metaclass=abc.ABCMeta):
    """CLI callable that parses options, reads a config and performs a run."""

    usage = "usage: %prog [options]"
    description = ""
    operation_progressive = ""
    expected_cli_args = 0
    config_required = False

    def __call__(self) -> None:
        """Runs the program."""

        configure_logging()
        (cli, cli_args) = self.parse_cli()

        try:
            configs = load_config(cli.config) if cli.config else default_config()
            if self.operation_progressive:
                print(self.operation_progressive, file=sys.stderr)
            status = self.perform_operation(cli, cli_args, *configs)
        except (SvioError, OSError) as ex:
            print("Error: %s" % ex, file=sys.stderr)
            raise SystemExit(1) from ex

        if status:
            raise SystemExit(status)

    def add_options(self, parser: optparse.OptionParser) -> None:
        """Adds command-specific options; override in a subclass."""

    def check_options(self, parser: optparse.OptionParser, cli: optparse.Values) -> None:
        """Validates the parsed options; calls ``parser.error`` on misuse."""

    def parse_cli(self) -> typing.Tuple[optparse.Values, typing.List[str]]:
        """Parse the CLI options

        :returns: (cli_opts, cli_args)
        """

        parser = optparse.OptionParser(usage=self.usage, description=self.description)
        parser.add_option("-c", "--config", type="string", help="YAML configuration file.")
        parser.add_option("--seed", type="int", default=0, help="Random seed - default 0.")
        self.add_options(parser)

        (cli, cli_args) = parser.parse_args(sys.argv[1:])

        if len(cli_args) != self.expected_cli_args:
            parser.error(
                "expected %i argument(s), got %i" % (self.expected_cli_args, len(cli_args))
            )
        if self.config_required and not cli.config:
            parser.error("--config is required")
        if cli.config and not os.path.isfile(cli.config):
            parser.error("configuration file %s does not exist" % cli.config)
        self.check_options(parser, cli)

        return cli, cli_args

    @abc.abstractmethod
    def perform_operation(
        self,
        cli: optparse.Values,
        cli_args: typing.List[str],
        filter_config: FilterConfig,
        sim_config: SimConfig,
    ) -> int:
        """Performs the program's operation.

        Implement in a subclass.

        :returns: the exit status.
        """


def _write_summary(metrics: typing.Sequence[RunMetrics], outdir: str) -> None:
    ate = np.array([m.ate_rmse for m in metrics])
    nees_values = np.array([m.nees_pose for m in metrics])
    summary = [
        {"statistic": "ate_rmse_mean", "value": "%.9g" % ate.mean()},
        {"statistic": "ate_rmse_std", "value": "%.9g" % ate.std()},
        {"statistic": "nees_pose_mean", "value": "%.9g" % np.nanmean(nees_values)},
        {"statistic": "nees_pose_median", "value": "%.9g" % np.nanmedian(nees_values)},
    ]
    write_table([m.row() for m in metrics], os.path.join(outdir, "metrics.csv"))
    write_table(summary, os.path.join(outdir, "summary.csv"))

    frames = max(1, sum(m.frames for m in metrics))
    timing = [
        {
            "stage": stage,
            "total_s": "%.6f" % sum(m.timing[stage] for m in metrics),
            "per_frame_ms": "%.4f" % (1e3 * sum(m.timing[stage] for m in metrics) / frames),
        }
        for stage in STAGES
    ]
    write_table(timing, os.path.join(outdir, "timing.csv"))

    print("runs:          %i" % len(metrics))
    print("ATE RMSE:      %.6f m (std %.6f m)" % (ate.mean(), ate.std()))
    if np.any(np.isfinite(nees_values)):
        print(
            "pose NEES:     %.3f (median %.3f)"
            % (np.nanmean(nees_values), np.nanmedian(nees_values))
        )


class SimCommand(Command):
    """Runs the filter on simulated data."""

    description = (
        "Simulates one run per seed, runs the filter on it and writes the "
        "trajectories, per-seed metrics, a summary and per-stage timing to the "
        "output directory."
    )
    operation_progressive = "Simulating"
    config_required = True

    def add_options(self, parser: optparse.OptionParser) -> None:
        parser.add_option("-o", "--out", type="string", default=".", help="Output directory.")
        parser.add_option(
            "--seeds", type="string", help="Seeds to run, e.g. 0-9 or 1,4,7 - default --seed."
        )
        parser.add_option("--workers", type="int", help="Number of worker threads.")

    def check_options(self, parser: optparse.OptionParser, cli: optparse.Values) -> None:
        if cli.seeds:
            try:
                parse_seeds(cli.seeds)
            except ValueError:
                parser.error("invalid seed list %r" % cli.seeds)
        if cli.workers is not None and cli.workers < 1:
            parser.error("--workers must be at least 1")

    def perform_operation(
        self,
        cli: optparse.Values,
        cli_args: typing.List[str],
        filter_config: FilterConfig,
        sim_config: SimConfig,
    ) -> int:
        seeds = parse_seeds(cli.seeds) if cli.seeds else [cli.seed]

        runs = map_seeds(
            lambda seed: simulate_and_run(filter_config, sim_config, seed), seeds, cli.workers
        )

        os.makedirs(cli.out, exist_ok=True)
        for seed, (_, trajectory, truth) in zip(seeds, runs):
            rundir = os.path.join(cli.out, "seed_%04i" % seed)
            os.makedirs(rundir, exist_ok=True)
            print("Writing trajectories to %s" % rundir, file=sys.stderr)
            write_tum(trajectory, os.path.join(rundir, "estimate.tum"))
            write_tum(
                [TrajectoryRecord.from_state(s) for s in truth],
                os.path.join(rundir, "groundtruth.tum"),
            )

        _write_summary([metrics for metrics, _, _ in runs], cli.out)
        return 0


class EurocCommand(Command):
    """Runs the filter on a EuRoC IMU stream with synthetic feature tracks."""

    usage = "usage: %prog [options] dataset_dir"
    description = (
        "Runs the filter on the IMU data of a EuRoC sequence. Images are not "
        "used: feature tracks are synthesized by projecting a random landmark "
        "field into the ground-truth camera poses."
    )
    operation_progressive = "Running"
    expected_cli_args = 1

    def add_options(self, parser: optparse.OptionParser) -> None:
        parser.add_option("-o", "--out", type="string", default=".", help="Output directory.")
        parser.add_option(
            "--max-ate",
            type="float",
            default=DEFAULT_MAX_ATE,
            help="Fail when the ATE RMSE exceeds this many metres - default %default.",
        )

    def check_options(self, parser: optparse.OptionParser, cli: optparse.Values) -> None:
        if not cli.max_ate > 0.0:
            parser.error("--max-ate must be positive")

    def perform_operation(
        self,
        cli: optparse.Values,
        cli_args: typing.List[str],
        filter_config: FilterConfig,
        sim_config: SimConfig,
    ) -> int:
        print("Reading dataset from %s" % cli_args[0], file=sys.stderr)
        imu, truth = load_euroc(cli_args[0])
        if len(truth) < 3:
            raise SvioError("dataset has too little ground truth")

        rng = np.random.default_rng(cli.seed)
        positions = np.array([s.p for s in truth])
        landmarks = landmark_field_around(
            positions,
            sim_config.n_landmarks,
            rng,
            offset=sim_config.wall_offset,
            height=sim_config.wall_height,
        )

        period = 1.0 / sim_config.cam_rate
        frame_truth = []
        for state in truth:
            if not frame_truth or state.t - frame_truth[-1].t >= period - 1e-6:
                frame_truth.append(state)
        frames, _ = synthesize_frames(
            [(s.t, s.q, s.p) for s in frame_truth],
            landmarks,
            sim_config.cameras(),
            rng,
            pixel_sigma=sim_config.pixel_sigma,
            outlier_rate=sim_config.outlier_rate,
        )

        filt = Filter(filter_config)
        filt.initialize(
            perturb_initialization(
                truth[0], filter_config.initial_sigmas, np.random.default_rng([cli.seed, 1])
            )
        )
        samples = [s for s in imu if s.t >= truth[0].t]
        result = run_filter(filt, samples, frames, keep_states=True)
        metrics = evaluate_run(
            cli.seed, filt, result.trajectory, result.states, result.reports, frame_truth
        )

        os.makedirs(cli.out, exist_ok=True)
        print("Writing trajectories to %s" % cli.out, file=sys.stderr)
        write_tum(result.trajectory, os.path.join(cli.out, "estimate.tum"))
        write_tum(
            [TrajectoryRecord.from_state(s) for s in frame_truth],
            os.path.join(cli.out, "groundtruth.tum"),
        )
        _write_summary([metrics], cli.out)
        if not metrics.ate_rmse <= cli.max_ate:
            print(
                "ATE RMSE %.4f m exceeds the %.4f m bound" % (metrics.ate_rmse, cli.max_ate),
                file=sys.stderr,
            )
            return 1
        return 0


def _checked_trial(seed: int) -> typing.Union[TrialResult, str]:
    try:
        return equivalence_trial(seed)
    except SvioError as ex:
        return "%s: %s" % (type(ex).__name__, ex)


class VerifyCommand(Command):
    """Checks the Schur update against the brute-force oracles."""

    description = (
        "Runs the Schur update and both reference updates on random problems "
        "and compares them. Exits with status 0 when every relative deviation "
        "is below 1e-8, and with status 1 otherwise."
    )
    operation_progressive = "Verifying"

    def add_options(self, parser: optparse.OptionParser) -> None:
        parser.add_option(
            "--trials", type="int", default=100, help="Number of trials - default 100."
        )
        parser.add_option("-o", "--out", type="string", help="CSV file for the per-trial results.")
        parser.add_option("--workers", type="int", help="Number of worker threads.")

    def check_options(self, parser: optparse.OptionParser, cli: optparse.Values) -> None:
        if cli.trials < 1:
            parser.error("--trials must be at least 1")

    def perform_operation(
        self,
        cli: optparse.Values,
        cli_args: typing.List[str],
        filter_config: FilterConfig,
        sim_config: SimConfig,
    ) -> int:
        seeds = [cli.seed + k for k in range(cli.trials)]
        outcomes = map_seeds(_checked_trial, seeds, cli.workers)

        rows = []
        failures = []
        for seed, outcome in zip(seeds, outcomes):
            if isinstance(outcome, str):
                failures.append("seed %i: %s" % (seed, outcome))
                continue
            rows.append(
                {
                    "seed": seed,
                    "clones": outcome.n_clones,
                    "landmarks": outcome.n_landmarks,
                    "removed": len(outcome.removed),
                    "dense_deviation": "%.3e" % outcome.dense_deviation,
                    "nullspace_deviation": "%.3e" % outcome.nullspace_deviation,
                }
            )
            if not outcome.worst < EQUIVALENCE_TOLERANCE:
                failures.append("seed %i: deviation %.3e" % (seed, outcome.worst))

        if cli.out:
            write_table(rows, cli.out)

        results = [o for o in outcomes if not isinstance(o, str)]
        if results:
            print("max dense deviation:     %.3e" % max(r.dense_deviation for r in results))
            print("max nullspace deviation: %.3e" % max(r.nullspace_deviation for r in results))
            print("singular landmarks removed: %i" % sum(len(r.removed) for r in results))
        for failure in failures:
            print("FAILED %s" % failure, file=sys.stderr)

        if failures:
            return 1
        print("Verification OK (%i trials)" % len(seeds), file=sys.stderr)
        return 0


def _time(func: typing.Callable[[], typing.Any], repeats: int) -> typing.List[float]:
    durations = []
    for _ in range(repeats):
        started = time.perf_counter()
        func()
        durations.append(time.perf_counter() - started)
    return durations


def bench_update(
    n_clones: int, n_landmarks: int, repeats: int, seed: int
) -> typing.List[typing.Dict[str, typing.Any]]:
    """Times the stages of the Schur update and the dense oracle on one problem.

    :returns: one row per stage with the best, mean and standard deviation of
        the wall time in seconds.
    """

    rng = np.random.default_rng(seed)
    problem = random_problem(rng, n_clones, n_landmarks)
    model = stack(problem.observations, problem.state, problem.landmarks, problem.cams)
    system = build_equivalent(model)
    prm = schur_marginalize(system)
    _, dx = ekf_update_pose(problem.state, prm)

    def landmark_updates() -> None:
        for res in split_landmark_system(prm.system, dx):
            ekf_update_landmark(problem.landmarks[res.landmark_id], res)

    stages = [
        ("build_equivalent", lambda: build_equivalent(model)),
        ("schur_marginalize", lambda: schur_marginalize(system)),
        ("ekf_update_pose", lambda: ekf_update_pose(problem.state, prm)),
        ("landmark_update", landmark_updates),
        ("dense_oracle", lambda: direct_marginalized_update(model, problem.state)),
    ]
    rows = []
    for name, func in stages:
        durations = np.array(_time(func, repeats))
        rows.append(
            {
                "landmarks": n_landmarks,
                "clones": n_clones,
                "stage": name,
                "best_s": "%.6e" % durations.min(),
                "mean_s": "%.6e" % durations.mean(),
                "std_s": "%.6e" % durations.std(),
            }
        )
    return rows


class BenchCommand(Command):
    """Times the Schur update against the dense oracle."""

    description = (
        "Times the stages of the Schur update and the dense reference update on "
        "random problems, and checks that the Schur path is the faster one from "
        "20 landmarks up."
    )
    operation_progressive = "Benchmarking"

    def add_options(self, parser: optparse.OptionParser) -> None:
        parser.add_option("-o", "--out", type="string", help="CSV output file - default stdout.")
        parser.add_option(
            "--landmarks", type="string", default="10,20,50", help="Landmark counts to time."
        )
        parser.add_option("--clones", type="int", default=4, help="Clones in the window.")
        parser.add_option("--repeats", type="int", default=5, help="Repetitions per stage.")

    def check_options(self, parser: optparse.OptionParser, cli: optparse.Values) -> None:
        try:
            counts = parse_seeds(cli.landmarks)
        except ValueError:
            parser.error("invalid landmark counts %r" % cli.landmarks)
        if min(counts) < 1:
            parser.error("landmark counts must be positive")
        if cli.clones < 2 or cli.repeats < 1:
            parser.error("need at least 2 clones and 1 repeat")

    def perform_operation(
        self,
        cli: optparse.Values,
        cli_args: typing.List[str],
        filter_config: FilterConfig,
        sim_config: SimConfig,
    ) -> int:
        rows = []
        slower = []
        for n_landmarks in parse_seeds(cli.landmarks):
            stage_rows = bench_update(cli.clones, n_landmarks, cli.repeats, cli.seed)
            rows.extend(stage_rows)
            best = {row["stage"]: float(row["best_s"]) for row in stage_rows}
            schur_path = sum(
                best[stage]
                for stage in ("build_equivalent", "schur_marginalize", "ekf_update_pose")
            )
            if n_landmarks >= 20 and not schur_path < best["dense_oracle"]:
                slower.append(n_landmarks)

        write_table(rows, cli.out)
        if slower:
            print(
                "Schur path not faster than the dense oracle at L=%s"
                % ",".join(str(n) for n in slower),
                file=sys.stderr,
            )
            return 1
        return 0


sim = SimCommand()
euroc = EurocCommand()
verify = VerifyCommand()
bench = BenchCommand()
