"""Myopic, blind and continuous-time walks on a cluster, tied by one coupling.

The myopic chain Z jumps along a uniformly chosen open edge at every step.
Holding times T_{p+1} - T_p ~ Exp(1) turn it into the continuous-time walk
X_t = Z_{n(t)}, and blind clocks U_{p+1} - U_p ~ Geometric(n_{Z_p} / 2d) on
{1, 2, ...} turn it into the blind walk Y_n = Z_{m(n)}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .geometry import DistanceField, distance_field
from .percolation import ClusterView, open_degree
from .rng import BLIND, BLIND_BLOCK, BLOCK, COUPLED_BLOCK, stream, trial_streams


class HorizonError(ValueError):
    """A query falls beyond the simulated part of a trajectory."""


@dataclass(frozen=True, eq=False)
class CoupledTrajectory:
    """Jump chain plus both clocks; coordinates are unwrapped."""

    start: tuple[int, ...]
    z: np.ndarray  # (P+1, d) int32
    t_cum: np.ndarray  # (P+1,) float64, T_0 = 0
    u_cum: np.ndarray  # (P+1,) int64, U_0 = 0
    degree: np.ndarray  # (P+1,) open degree at Z_p
    boundary_index: int  # first jump index at the box scale, -1 if never
    L: int

    @property
    def n_jumps(self) -> int:
        return len(self.z) - 1

    @property
    def boundary_hit(self) -> bool:
        return self.boundary_index >= 0

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def jump_count_at(self, t: float) -> int:
        """n(t) = sup{p : T_p <= t}."""
        if t < 0:
            raise HorizonError(f"time must be >= 0, got {t}")
        if t > self.t_cum[-1]:
            raise HorizonError(f"t={t} beyond simulated horizon {self.t_cum[-1]:.6g}")
        return int(np.searchsorted(self.t_cum, t, side="right")) - 1

    def blind_count_at(self, n: int) -> int:
        """m(n) = sup{p : U_p <= n}."""
        if n < 0:
            raise HorizonError(f"blind time must be >= 0, got {n}")
        if n > self.u_cum[-1]:
            raise HorizonError(f"n={n} beyond simulated horizon {self.u_cum[-1]}")
        return int(np.searchsorted(self.u_cum, n, side="right")) - 1

    def censor_time(self, clock: str) -> float:
        """Clock value at which the walk first reached the box scale (inf if never)."""
        if not self.boundary_hit:
            return np.inf
        p = self.boundary_index
        return {"ctsrw": float(self.t_cum[p]), "blind": float(self.u_cum[p]), "myopic": float(p)}[clock]


def _start_index(cluster: ClusterView, start: Sequence[int]) -> tuple[int, np.ndarray]:
    spec = cluster.spec
    start = tuple(int(c) for c in start)
    return spec.index(start), np.array(start, dtype=np.int64)


def step_myopic(cluster: ClusterView, pos: Sequence[int], rng: np.random.Generator) -> tuple[int, ...]:
    """One myopic move: a uniformly chosen open incident edge."""
    spec = cluster.spec
    s = spec.wrapped_index(pos)
    nbrs = np.empty(2 * spec.d, np.int64)
    dirs = np.empty(2 * spec.d, np.int64)
    k = K.open_moves(cluster.bonds.planes, s, spec.strides, spec.width, spec.torus, nbrs, dirs)
    if k == 0:
        raise ValueError(f"site {tuple(pos)} has no open edge; the myopic walk cannot move")
    direction = int(dirs[rng.integers(0, k)])
    return _moved(pos, direction)


def step_blind(cluster: ClusterView, pos: Sequence[int], rng: np.random.Generator) -> tuple[int, ...]:
    """One blind move: pick one of the 2d directions, move only if that edge is open."""
    spec = cluster.spec
    s = spec.wrapped_index(pos)
    direction = int(rng.integers(0, 2 * spec.d))
    if K.edge_open(cluster.bonds.planes, s, direction, spec.strides, spec.width, spec.torus) < 0:
        return tuple(int(c) for c in pos)
    return _moved(pos, direction)


def _moved(pos, direction):
    out = [int(c) for c in pos]
    out[direction >> 1] += -1 if direction & 1 else 1
    return tuple(out)


def run_coupled(
    cluster: ClusterView,
    start: Sequence[int] | None = None,
    n_jumps: int = 1000,
    seed: int = 0,
    trial: int = 0,
) -> CoupledTrajectory:
    """Simulate ``n_jumps`` myopic jumps with both clocks.

    Randomness comes from the three per-trial streams of ``(seed, trial)``:
    jump choices, holding times and blind clocks are mutually independent.
    """
    spec = cluster.spec
    start = (0,) * spec.d if start is None else tuple(int(c) for c in start)
    if n_jumps < 0:
        raise ValueError("n_jumps must be >= 0")
    s, coords = _start_index(cluster, start)
    rj, rh, rb = trial_streams(seed, trial)
    z, t_cum, u_cum, degree, hit = K.run_coupled(
        cluster.bonds.planes, spec.strides, spec.width, spec.torus, spec.L, s, coords, int(n_jumps), rj, rh, rb
    )
    if hit == -2:
        raise ValueError(f"start {start} has no open edge (singleton cluster)")
    return CoupledTrajectory(start, z, t_cum, u_cum, degree, int(hit), spec.L)


def x_at(traj: CoupledTrajectory, t: float) -> tuple[int, ...]:
    """Continuous-time walk X_t = Z_{n(t)} (right-continuous at jumps)."""
    return tuple(int(c) for c in traj.z[traj.jump_count_at(t)])


def y_at(traj: CoupledTrajectory, n: int) -> tuple[int, ...]:
    """Blind walk Y_n = Z_{m(n)}."""
    return tuple(int(c) for c in traj.z[traj.blind_count_at(int(n))])


def x_path(traj: CoupledTrajectory, times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if times.size and (times.min() < 0 or times.max() > traj.t_cum[-1]):
        raise HorizonError("query times outside the simulated range")
    return traj.z[np.searchsorted(traj.t_cum, times, side="right") - 1]


def y_path(traj: CoupledTrajectory, steps) -> np.ndarray:
    steps = np.asarray(steps, dtype=np.int64)
    if steps.size and (steps.min() < 0 or steps.max() > traj.u_cum[-1]):
        raise HorizonError("query steps outside the simulated range")
    return traj.z[np.searchsorted(traj.u_cum, steps, side="right") - 1]


def run_blind_direct(
    cluster: ClusterView, start: Sequence[int] | None = None, n_steps: int = 1000, seed: int = 0, trial: int = 0
) -> np.ndarray:
    """Blind walk simulated step by step, without the coupling; (n_steps+1, d) sites."""
    spec = cluster.spec
    start = (0,) * spec.d if start is None else tuple(int(c) for c in start)
    s, coords = _start_index(cluster, start)
    rng = stream(seed, BLIND, trial)
    path, _ = K.run_blind(
        cluster.bonds.planes, spec.strides, spec.width, spec.torus, spec.L, s, coords, int(n_steps), rng
    )
    return path


def max_chemical_displacement(
    traj: CoupledTrajectory,
    cluster: ClusterView,
    horizon: int | None = None,
    cap: int | None = None,
    field: DistanceField | None = None,
) -> int:
    """max_{p <= horizon} d(start, Z_p), read from one capped BFS field rooted at the start.

    A precomputed ``field`` rooted at the start may be passed to share the BFS
    across trials.
    """
    horizon = traj.n_jumps if horizon is None else int(horizon)
    if not 0 <= horizon <= traj.n_jumps:
        raise HorizonError(f"horizon {horizon} outside [0, {traj.n_jumps}]")
    if horizon == 0:
        return 0
    spec = cluster.spec
    if field is None:
        field = distance_field(cluster, traj.start, horizon if cap is None else int(cap))
    elif tuple(field.source) != tuple(traj.start):
        raise ValueError("distance field is not rooted at the trajectory start")
    visited = np.unique(spec.indices(traj.z[: horizon + 1]))
    hops = field.dist[visited]
    if (hops < 0).any():
        raise ValueError(f"BFS cap {field.radius_cap} too small: the walk left the explored ball")
    return int(hops.max())


# ------------------------------------------------------------ batch samplers


def coupled_endpoints(cluster: ClusterView, t: float, n: int, samples: int, seed: int, block: int = 0,
                      start: Sequence[int] | None = None):
    """(X_t, Y_n) endpoints of ``samples`` independent coupled runs."""
    spec = cluster.spec
    start = (0,) * spec.d if start is None else start
    s, coords = _start_index(cluster, start)
    if open_degree(cluster.bonds, start) == 0:
        raise ValueError("start has no open edge")
    rj, rh, rb = trial_streams(seed, block, COUPLED_BLOCK)
    return K.coupled_endpoints(
        cluster.bonds.planes, spec.strides, spec.width, spec.torus, spec.L, s, coords, float(t), int(n), int(samples),
        rj, rh, rb,
    )


def blind_endpoints(cluster: ClusterView, n: int, samples: int, seed: int, block: int = 0,
                    start: Sequence[int] | None = None) -> np.ndarray:
    spec = cluster.spec
    start = (0,) * spec.d if start is None else start
    s, coords = _start_index(cluster, start)
    rng = stream(seed, BLIND_BLOCK, block)
    return K.blind_endpoints(
        cluster.bonds.planes, spec.strides, spec.width, spec.torus, spec.L, s, coords, int(n), int(samples), rng
    )


def myopic_endpoints(cluster: ClusterView, n_jumps: int, walkers: int, seed: int, block: int = 0,
                     start: Sequence[int] | None = None):
    """Endpoints after ``n_jumps`` myopic jumps and per-walker censoring flags."""
    spec = cluster.spec
    start = (0,) * spec.d if start is None else start
    s, coords = _start_index(cluster, start)
    if open_degree(cluster.bonds, start) == 0:
        raise ValueError("start has no open edge")
    rng = stream(seed, BLOCK, block)
    return K.myopic_endpoints(
        cluster.bonds.planes, spec.strides, spec.width, spec.torus, spec.L, s, coords, int(n_jumps),
        int(walkers), rng,
    )
