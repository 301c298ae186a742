"""Counter-based Gaussian increments for a truncated cylindrical Wiener process.

The increment for ``(path, fine step, component)`` is a pure function of
``(seed, path, step, component)``: each path owns a disjoint Philox counter
range, the raw 64-bit words are mapped to uniforms on (0, 1) and then to
normals by the inverse CDF.  This gives common random numbers across eps, h
and time-grid refinement, and results that do not depend on how paths are
distributed over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np
from scipy.special import ndtri

__all__ = ["WienerDriver", "IncrementView", "NoiseError", "path_count_plan", "map_paths", "CHUNK"]

T_ = TypeVar("T_")

CHUNK = 16


class NoiseError(ValueError):
    pass


def _uniforms(seed: int, path: int, count: int) -> np.ndarray:
    bitgen = np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF), counter=[0, 0, path, 0])
    raw = bitgen.random_raw(count)
    # 53 high bits, shifted off the endpoints
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class WienerDriver:
    seed: int
    M: int = 8
    master_steps: int = 1024
    T: float = 1.0

    def __post_init__(self):
        if self.M < 1:
            raise NoiseError("noise dimension M must be >= 1")
        if self.master_steps < 1 or self.master_steps & (self.master_steps - 1):
            raise NoiseError("master_steps must be a power of two")
        if self.T <= 0:
            raise NoiseError("horizon T must be positive")

    def fine_increments(self, path: int) -> np.ndarray:
        """Raw increments on the finest grid, shape ``(master_steps, M)``."""
        if path < 0:
            raise NoiseError("path index must be non-negative")
        u = _uniforms(self.seed, path, self.master_steps * self.M)
        z = ndtri(u).reshape(self.master_steps, self.M)
        return z * math.sqrt(self.T / self.master_steps)

    def increments(self, path: int, steps: int) -> np.ndarray:
        """Increments on a grid of ``steps`` equal steps, shape ``(steps, M)``.

        Each coarse increment is the sum of the fine increments it covers.
        """
        if steps < 1 or self.master_steps % steps:
            raise NoiseError(f"steps = {steps} does not divide master_steps = {self.master_steps}")
        fine = self.fine_increments(path)
        if steps == self.master_steps:
            return fine
        return fine.reshape(steps, self.master_steps // steps, self.M).sum(axis=1)

    def view(self, path: int, steps: int) -> "IncrementView":
        return IncrementView(self, path, steps)


@dataclass(frozen=True)
class IncrementView:
    driver: WienerDriver
    path: int
    steps: int

    def __post_init__(self):
        if self.steps < 1 or self.driver.master_steps % self.steps:
            raise NoiseError("coarse step count must divide master_steps")

    def array(self) -> np.ndarray:
        return self.driver.increments(self.path, self.steps)


def path_count_plan(target_paths: int, chunk: int = CHUNK) -> list[range]:
    """Split path indices ``0..target_paths-1`` into fixed chunks.

    The chunk layout depends only on ``target_paths``, never on the number of
    workers, so batched arithmetic inside a chunk is identical however the
    chunks are scheduled.
    """
    if target_paths < 1:
        raise NoiseError("need at least one path")
    return [range(lo, min(lo + chunk, target_paths)) for lo in range(0, target_paths, chunk)]


def map_paths(fn: Callable[[range], T_], target_paths: int, workers: int = 1) -> list[T_]:
    """Apply ``fn`` to every chunk of the plan; results come back in chunk order."""
    plan = path_count_plan(target_paths)
    if workers <= 1:
        return [fn(c) for c in plan]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, plan))


def stack_increments(driver: WienerDriver, paths: Sequence[int], steps: int) -> np.ndarray:
    """Increments for several paths, shape ``(len(paths), steps, M)``."""
    return np.stack([driver.increments(p, steps) for p in paths])
