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

"""Runs independent per-seed pipelines side by side.

Each seed owns its own filter, simulator and random generator, so the
pipelines share no state. The heavy lifting happens inside numpy and scipy,
which release the GIL, so threads are enough.
"""

import multiprocessing.pool
import os
import typing

T = typing.TypeVar("T")


def default_poolsize() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def map_seeds(
    func: typing.Callable[[int], T],
    seeds: typing.Iterable[int],
    poolsize: typing.Optional[int] = None,
) -> typing.List[T]:
    """Calls ``func(seed)`` for every seed, on a pool of worker threads.

    Results come back in seed order. With a pool size of one the calls run
    in the calling thread. The first exception raised by a worker is
    re-raised here.

    >>> map_seeds(lambda seed: seed * seed, [3, 1, 2], poolsize=2)
    [9, 1, 4]
    """

    seeds = list(seeds)
    if poolsize is None:
        poolsize = default_poolsize()
    if poolsize < 1:
        raise ValueError("poolsize must be at least 1, got %r" % poolsize)

    if poolsize == 1 or len(seeds) <= 1:
        return [func(seed) for seed in seeds]

    with multiprocessing.pool.ThreadPool(min(poolsize, len(seeds))) as pool:
        return pool.map(func, seeds)


__all__ = ["map_seeds", "default_poolsize"]

if __name__ == "__main__":
    import doctest

    doctest.testmod()
