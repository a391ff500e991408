"""The environment seen from the walker: degree statistics, the blind/myopic
time-scale constant alpha, and exact finite-cluster oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .percolation import BondConfiguration, ClusterView, degree_array
from .walks import CoupledTrajectory

CLOCKS = ("blind", "jump")
DEFAULT_SITE_CAP = 400


@dataclass(frozen=True)
class EnvironmentStats:
    """Histogram of the open degree found under the walker.

    ``clock="blind"`` tallies every blind-walk time step 1..n, whose long-run
    law is the uniform measure on the cluster. ``clock="jump"`` tallies the
    sites occupied at jump epochs, whose long-run law is degree-biased.
    """

    d: int
    degree_counts: tuple[int, ...]
    clock: str = "blind"

    def __post_init__(self):
        if len(self.degree_counts) != 2 * self.d + 1:
            raise ValueError(f"need {2 * self.d + 1} degree bins, got {len(self.degree_counts)}")
        if self.clock not in CLOCKS:
            raise ValueError(f"clock must be one of {CLOCKS}")

    @property
    def total_steps(self) -> int:
        return int(sum(self.degree_counts))

    @property
    def i_hat(self) -> np.ndarray:
        counts = np.asarray(self.degree_counts, dtype=np.float64)
        return counts / counts.sum()

    def __add__(self, other: "EnvironmentStats") -> "EnvironmentStats":
        if (self.d, self.clock) != (other.d, other.clock):
            raise ValueError("cannot merge stats of different dimension or clock")
        return EnvironmentStats(
            self.d, tuple(a + b for a, b in zip(self.degree_counts, other.degree_counts)), self.clock
        )

    @classmethod
    def empty(cls, d: int, clock: str = "blind") -> "EnvironmentStats":
        return cls(d, (0,) * (2 * d + 1), clock)


def _tally(d: int, degrees: np.ndarray, weights=None) -> tuple[int, ...]:
    counts = np.bincount(degrees.astype(np.int64), weights=weights, minlength=2 * d + 1)
    return tuple(int(round(c)) for c in counts)


def collect_environment_stats(
    walk: CoupledTrajectory | np.ndarray,
    n_steps: int,
    *,
    bonds: BondConfiguration | None = None,
    clock: str = "blind",
) -> EnvironmentStats:
    """Tally the open degree under the walker over ``n_steps`` steps of ``clock``.

    ``walk`` is a coupled trajectory, or a direct blind path (then ``bonds`` is
    needed to read degrees).
    """
    if clock not in CLOCKS:
        raise ValueError(f"clock must be one of {CLOCKS}")
    n_steps = int(n_steps)
    if isinstance(walk, CoupledTrajectory):
        d = walk.d
        if clock == "jump":
            if n_steps > walk.n_jumps:
                raise ValueError(f"trajectory has {walk.n_jumps} jumps, asked for {n_steps}")
            return EnvironmentStats(d, _tally(d, walk.degree[:n_steps]), "jump")
        if n_steps > walk.u_cum[-1]:
            raise ValueError(f"trajectory covers {walk.u_cum[-1]} blind steps, asked for {n_steps}")
        # Y_j = Z_p for U_p <= j < U_{p+1}; count j in [1, n_steps]
        last = walk.blind_count_at(n_steps)
        u = walk.u_cum
        lo = np.maximum(u[: last + 1], 1)
        hi = np.empty(last + 1, dtype=np.int64)
        hi[:last] = u[1 : last + 1] - 1
        hi[last] = n_steps
        visits = np.maximum(hi - lo + 1, 0)
        return EnvironmentStats(d, _tally(d, walk.degree[: last + 1], visits), "blind")
    if clock != "blind":
        raise ValueError("a direct blind path can only be tallied on the blind clock")
    if bonds is None:
        raise ValueError("bonds are required to read degrees along a site path")
    path = np.asarray(walk)
    if n_steps > len(path) - 1:
        raise ValueError(f"path has {len(path) - 1} steps, asked for {n_steps}")
    deg = degree_array(bonds)[bonds.spec.indices(path[1 : n_steps + 1])]
    return EnvironmentStats(bonds.spec.d, _tally(bonds.spec.d, deg), "blind")


def _mean_blind_clock(jump_law: np.ndarray, d: int) -> float:
    k = np.arange(len(jump_law))
    return float(np.sum(jump_law[1:] * (2 * d) / k[1:]))


def alpha_from_ik(stats: EnvironmentStats, d: int | None = None) -> float:
    """Time-scale constant from the degree histogram: alpha = 1 / sum_k w(k) 2d/k.

    ``w`` is the degree law at jump epochs. Blind-clock histograms (uniform
    law on the cluster) are size-biased into that law first, w(k) ~ k i(k).
    """
    d = stats.d if d is None else d
    if stats.total_steps <= 0:
        raise ValueError("no steps tallied")
    i_hat = stats.i_hat
    if i_hat[0] > 0:
        raise ValueError("walker sat on an isolated site: degree-0 visits are impossible on a connected cluster")
    if stats.clock == "blind":
        k = np.arange(len(i_hat))
        jump_law = k * i_hat / np.sum(k * i_hat)
    else:
        jump_law = i_hat
    return 1.0 / _mean_blind_clock(jump_law, d)


def alpha_direct(traj: CoupledTrajectory, min_jumps: int = 1000) -> float:
    """Jumps per unit of blind time, P / U_P."""
    if traj.n_jumps < min_jumps:
        raise ValueError(f"need at least {min_jumps} jumps, trajectory has {traj.n_jumps}")
    return traj.n_jumps / float(traj.u_cum[-1])


# -------------------------------------------------------------- exact oracles


@dataclass(frozen=True, eq=False)
class FiniteChainOracle:
    """Dense transition structure of the walks on a small cluster."""

    d: int
    sites: np.ndarray  # (n, d) coordinates, row-major order
    box_index: np.ndarray  # (n,) site index in the box
    adjacency: np.ndarray  # (n, n) bool, open edges
    degree: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return len(self.sites)

    def position(self, x: Sequence[int]) -> int:
        hits = np.flatnonzero((self.sites == np.asarray(x)).all(axis=1))
        if not hits.size:
            raise KeyError(f"{tuple(x)} is not a cluster site")
        return int(hits[0])

    @property
    def P_blind(self) -> np.ndarray:
        P = self.adjacency / (2.0 * self.d)
        P[np.diag_indices(self.n)] = 1.0 - self.degree / (2.0 * self.d)
        return P

    @property
    def P_myopic(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            P = np.where(self.adjacency, 1.0 / self.degree[:, None], 0.0)
        P[self.degree == 0, :] = 0.0
        P[self.degree == 0, self.degree == 0] = 1.0
        return P

    @property
    def Q(self) -> np.ndarray:
        """Generator of the walk with Exp(1) holding and uniform open-edge jumps."""
        Q = self.P_myopic
        Q[np.diag_indices(self.n)] -= 1.0
        return Q


def build_finite_oracle(cluster: ClusterView, cap: int = DEFAULT_SITE_CAP) -> FiniteChainOracle:
    if cluster.size > cap:
        raise ValueError(f"cluster has {cluster.size} sites, oracle cap is {cap}")
    spec = cluster.spec
    idx = cluster.site_indices()
    pos = {int(s): i for i, s in enumerate(idx)}
    n = len(idx)
    adj = np.zeros((n, n), dtype=bool)
    nbrs = np.empty(2 * spec.d, np.int64)
    dirs = np.empty(2 * spec.d, np.int64)
    planes = cluster.bonds.planes
    for i, s in enumerate(idx):
        k = K.open_moves(planes, int(s), spec.strides, spec.width, spec.torus, nbrs, dirs)
        for nb in nbrs[:k]:
            adj[i, pos[int(nb)]] = True
    return FiniteChainOracle(spec.d, spec.coords(idx), idx, adj, adj.sum(axis=1))


def exact_heat_kernel(oracle: FiniteChainOracle, t: float, tol: float = 1e-12) -> np.ndarray:
    """exp(tQ) by uniformization: sum_k Poisson(k; t) M^k with M = I + Q.

    Long times are split into pieces of length <= 32 and recombined by
    repeated multiplication so the Poisson weights never underflow.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    M = oracle.P_myopic
    pieces = max(1, int(np.ceil(t / 32.0)))
    h = t / pieces
    weight = np.exp(-h)
    term = np.eye(oracle.n)
    total = weight * term
    mass = weight
    k = 0
    while 1.0 - mass > tol:
        k += 1
        weight *= h / k
        term = term @ M
        total += weight * term
        mass += weight
        if k > 10_000:
            raise RuntimeError("uniformization series failed to converge")
    return np.linalg.matrix_power(total, pieces) if pieces > 1 else total


@dataclass(frozen=True)
class StationarityReport:
    symmetric: bool
    max_asymmetry: float
    max_column_deviation: float
    max_fixed_point_deviation: float

    @property
    def max_deviation(self) -> float:
        return max(self.max_column_deviation, self.max_fixed_point_deviation)


def stationarity_check(oracle: FiniteChainOracle, which: str = "blind") -> StationarityReport:
    """Is the uniform measure invariant for the blind (or, as a control, myopic) matrix?"""
    P = {"blind": oracle.P_blind, "myopic": oracle.P_myopic}[which]
    uniform = np.full(oracle.n, 1.0 / oracle.n)
    asym = float(np.max(np.abs(P - P.T))) if oracle.n else 0.0
    return StationarityReport(
        symmetric=bool(np.array_equal(P, P.T)),
        max_asymmetry=asym,
        max_column_deviation=float(np.max(np.abs(P.sum(axis=0) - 1.0))),
        max_fixed_point_deviation=float(np.max(np.abs(uniform @ P - uniform)) * oracle.n),
    )


def endpoint_law(oracle: FiniteChainOracle, endpoints: np.ndarray, torus_width: int | None = None) -> np.ndarray:
    """Empirical law of endpoint coordinates over the oracle's site order."""
    pts = np.asarray(endpoints, dtype=np.int64)
    if torus_width is not None:
        L = (torus_width - 1) // 2
        pts = (pts + L) % torus_width - L
    lookup = {tuple(s): i for i, s in enumerate(oracle.sites.tolist())}
    uniq, counts = np.unique(pts, axis=0, return_counts=True)
    law = np.zeros(oracle.n)
    for site, c in zip(uniq.tolist(), counts):
        law[lookup[tuple(site)]] += c
    return law / law.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
