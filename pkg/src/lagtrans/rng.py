"""Decoupled random-number generation.

Each timestep, a RandomBatch is filled ahead of the physics pipeline:
one uniform per particle for convection and three standard normals per
particle each for turbulent and mesoscale diffusion.

Two modes:
  * faithful — one sequential splitmix64 generator per device, seeded
    mpi_rank + 83 * device_id; output depends on the device partition.
  * counter — every scalar is keyed statelessly by (step, particle,
    stream, component), so output is independent of the device count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model_state import Control
from .partition import WorkRange

_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF

# stream ids for counter-mode keying
STREAM_CONVECTION = 0
STREAM_DIFF_TURB = 1
STREAM_DIFF_MESO = 2


@dataclass
class RandomBatch:
    """Random numbers for one timestep, full-ensemble sized."""

    convection: np.ndarray  # (np,) uniforms in [0, 1)
    diff_meso: np.ndarray   # (3*np,) standard normals, [3i:3i+3] for particle i
    diff_turb: np.ndarray   # (3*np,) standard normals


def batch_allocate(n: int) -> RandomBatch:
    return RandomBatch(convection=np.zeros(n),
                       diff_meso=np.zeros(3 * n),
                       diff_turb=np.zeros(3 * n))


@dataclass
class RngState:
    mode: str                                 # faithful | counter
    seed_global: int = 0
    device_states: list[int] = field(default_factory=list)


def rng_seed_for(mpi_rank: int, device_id: int) -> int:
    """Per-device seed: mpi_rank + 83 * device_id."""
    return mpi_rank + 83 * device_id


def module_rng_init(ctl: Control, num_devices: int) -> RngState:
    """Create the generator state, one splitmix64 stream per device in
    faithful mode."""
    if num_devices < 1:
        raise ValueError(f"num_devices must be >= 1, got {num_devices}")
    if ctl.rng_mode == "faithful":
        states = [rng_seed_for(ctl.mpi_rank, d) & _MASK64 for d in range(num_devices)]
        return RngState(mode="faithful", seed_global=ctl.rng_seed_global,
                        device_states=states)
    return RngState(mode="counter", seed_global=ctl.rng_seed_global & _MASK64)


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (value, next state)."""
    state = (state + _GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def _mix64(state: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 output function on uint64 state values."""
    with np.errstate(over="ignore"):
        z = state.copy()
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return z


def _to_uniform(values: np.ndarray) -> np.ndarray:
    """Map uint64 values to [0, 1) as value / 2**64."""
    return values.astype(np.float64) * 2.0 ** -64


def _box_muller(u1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two standard normals from a uniform pair; u1 = 0 is nudged to keep
    the log finite."""
    u1 = np.where(u1 <= 0.0, 2.0 ** -64, u1)
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


def _fill_faithful(state: int, n: int):
    """Draw 7n uniforms sequentially and shape them into the batch layout.

    Draw order per particle: convection uniform, then six normals
    (turb triple, meso triple) via Box-Muller pairs. The per-particle
    normal count is even, so the Box-Muller spare never crosses a
    particle boundary and is empty at call end, matching the
    discard-at-call-end policy.
    """
    count = 7 * n
    with np.errstate(over="ignore"):
        k = np.arange(1, count + 1, dtype=np.uint64)
        states = np.uint64(state) + k * np.uint64(_GAMMA)
    u = _to_uniform(_mix64(states)).reshape(n, 7)
    conv = u[:, 0]
    z0, z1 = _box_muller(u[:, 1], u[:, 2])
    z2, z3 = _box_muller(u[:, 3], u[:, 4])
    z4, z5 = _box_muller(u[:, 5], u[:, 6])
    turb = np.stack([z0, z1, z2], axis=1)
    meso = np.stack([z3, z4, z5], axis=1)
    new_state = (state + count * _GAMMA) & _MASK64
    return conv, turb, meso, new_state


def _counter_key(seed: int, step_index: int, idx: np.ndarray,
                 stream_id: int, component: int) -> np.ndarray:
    """Pack (step, particle, stream, component) into a 64-bit key.

    Bit layout: step_index 0-31, particle index 32-55,
    stream_id*4+component 56-63.
    """
    packed = (np.uint64(step_index & 0xFFFFFFFF)
              | ((idx & np.uint64(0xFFFFFF)) << np.uint64(32))
              | (np.uint64((stream_id * 4 + component) & 0xFF) << np.uint64(56)))
    return np.uint64(seed) ^ packed


def _counter_uniform(seed, step_index, idx, stream_id, component):
    with np.errstate(over="ignore"):
        state = _counter_key(seed, step_index, idx, stream_id, component) \
            + np.uint64(_GAMMA)
    return _to_uniform(_mix64(state))


def _counter_normal(seed, step_index, idx, stream_id, component):
    u1 = _counter_uniform(seed, step_index, idx, stream_id, component)
    u2 = _counter_uniform(seed, step_index, idx, stream_id, component + 1)
    u1 = np.where(u1 <= 0.0, 2.0 ** -64, u1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def generate_random_nums(rng: RngState, step_index: int, work: WorkRange,
                         device_id: int, batch: RandomBatch) -> None:
    """Fill batch entries for particles in the given range only."""
    n_total = len(batch.convection)
    if not (0 <= work.start <= work.end <= n_total):
        raise IndexError(f"range [{work.start}, {work.end}) outside ensemble "
                         f"of {n_total} particles")
    n = work.size
    if n == 0:
        return
    s = work.slice

    if rng.mode == "faithful":
        conv, turb, meso, new_state = _fill_faithful(rng.device_states[device_id], n)
        rng.device_states[device_id] = new_state
    else:
        idx = np.arange(work.start, work.end, dtype=np.uint64)
        conv = _counter_uniform(rng.seed_global, step_index, idx, STREAM_CONVECTION, 0)
        turb = np.stack([_counter_normal(rng.seed_global, step_index, idx,
                                         STREAM_DIFF_TURB, c) for c in range(3)], axis=1)
        meso = np.stack([_counter_normal(rng.seed_global, step_index, idx,
                                         STREAM_DIFF_MESO, c) for c in range(3)], axis=1)

    batch.convection[s] = conv
    batch.diff_turb.reshape(n_total, 3)[s] = turb
    batch.diff_meso.reshape(n_total, 3)[s] = meso
