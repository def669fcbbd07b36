#!/usr/bin/env python
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

from svio.cli import bench_update

clones = 4
repeats = 20
schur_stages = ("build_equivalent", "schur_marginalize", "ekf_update_pose")


def run_speed_test(n_landmarks):
    rows = bench_update(clones, n_landmarks, repeats, seed=n_landmarks)
    best = {row["stage"]: float(row["best_s"]) for row in rows}
    schur = sum(best[stage] for stage in schur_stages)
    dense = best["dense_oracle"]

    print('%4i landmarks: Schur %8.3f ms, dense %8.3f ms, speedup %5.1fx' %
          (n_landmarks, 1e3 * schur, 1e3 * dense, dense / schur))


if __name__ == '__main__':
    for n_landmarks in (5, 10, 20, 50, 100, 200):
        run_speed_test(n_landmarks)
