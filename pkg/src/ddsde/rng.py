"""Counter-based Gaussian noise streams.

Every increment is a pure function of (seed, trajectory, step, component):
a 64-bit mixing chain hashes the counter words, the resulting word is mapped
to a uniform in (0, 1), and the inverse normal CDF turns it into a standard
normal draw.  There is no generator state, so trajectories can be evaluated
in any order, in chunks, or on any number of threads and still produce
bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_INV53 = float(2.0 ** -53)


def _mix(h: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer: bijective uint64 -> uint64 with full avalanche."""
    h = (h + _GOLDEN).astype(_U64)
    h = (h ^ (h >> _U64(30))) * _M1
    h = (h ^ (h >> _U64(27))) * _M2
    return h ^ (h >> _U64(31))


def derive_seed(seed: int, tag: int) -> int:
    """Deterministically derive an independent seed (e.g. for a fresh substream)."""
    with np.errstate(over="ignore"):
        h = _mix(_mix(_U64(seed & 0xFFFFFFFFFFFFFFFF)) ^ _U64(tag & 0xFFFFFFFFFFFFFFFF))
    return int(h)


@dataclass(frozen=True)
class NoiseSpec:
    """Addressing of the Brownian increments driving a simulation.

    The increment consumed by trajectory ``m`` at step ``k`` is keyed by
    ``(seed, traj0 + m, step0 + k)``.  The offsets let a run restarted from a
    midpoint consume exactly the increments of the matching global steps.
    """

    seed: int
    dim: int
    step0: int = 0
    traj0: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    def with_step_offset(self, step0: int) -> "NoiseSpec":
        return replace(self, step0=step0)

    def substream(self, tag: int) -> "NoiseSpec":
        """An independent stream (fresh seed derived from this one)."""
        return replace(self, seed=derive_seed(self.seed, tag), step0=0, traj0=0)


def normal_block(noise: NoiseSpec, trajectories: np.ndarray, step: int) -> np.ndarray:
    """Standard-normal draws for the given trajectories at one step.

    Args:
        trajectories: integer array of trajectory indices, shape (M,).
        step: local step index (the global index is ``noise.step0 + step``).

    Returns:
        (M, dim) array; row i depends only on (seed, traj0 + trajectories[i],
        step0 + step, column).
    """
    traj = np.asarray(trajectories, dtype=np.int64).astype(_U64) + _U64(noise.traj0)
    comp = np.arange(noise.dim, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(_U64(noise.seed & 0xFFFFFFFFFFFFFFFF) ^ _U64(noise.step0 + step))
        h = _mix(h ^ traj)[:, None]
        h = _mix(h ^ comp[None, :])
    # 53-bit uniform strictly inside (0, 1): ndtri is finite at both ends.
    u = ((h >> _U64(11)).astype(np.float64) + 0.5) * _INV53
    return ndtri(u)


def gaussian_increment(noise: NoiseSpec, trajectory: int, step: int) -> np.ndarray:
    """Unscaled standard-normal increment for one (trajectory, step) pair.

    The sqrt(dt) scaling is applied at the call site.
    """
    return normal_block(noise, np.array([trajectory]), step)[0]
