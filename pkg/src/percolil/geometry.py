"""Chemical distance, balls and annuli on a cluster."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .percolation import ClusterView


def l1_norm(x: Sequence[int], y: Sequence[int], *, torus_width: int | None = None) -> int:
    """L1 distance; with ``torus_width`` each coordinate uses the shorter way round."""
    total = 0
    for a, b in zip(x, y, strict=True):
        diff = abs(int(a) - int(b))
        if torus_width is not None:
            diff %= torus_width
            diff = min(diff, torus_width - diff)
        total += diff
    return total


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Hop counts from ``source`` over open edges (-1 = not reached within the cap)."""

    cluster: ClusterView
    source: tuple[int, ...]
    dist: np.ndarray
    radius_cap: int | None

    def __getitem__(self, x) -> int | None:
        value = int(self.dist[self.cluster.spec.index(x)])
        return None if value < 0 else value

    def reached(self) -> np.ndarray:
        return np.flatnonzero(self.dist >= 0)


def distance_field(cluster: ClusterView, source: Sequence[int], cap: int | None = None) -> DistanceField:
    spec = cluster.spec
    source = tuple(int(c) for c in source)
    if cap is not None and cap < 0:
        raise ValueError("cap must be >= 0")
    dist = K.bfs_distances(
        *cluster.bonds.kernel_args(), spec.index(source), -1 if cap is None else int(cap), -1, spec.n_sites
    )
    return DistanceField(cluster, source, dist, cap)


def chemical_distance(cluster: ClusterView, x: Sequence[int], y: Sequence[int], cap: int) -> int | None:
    """Shortest open path length from ``x`` to ``y``; None if not within ``cap`` hops."""
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap}")
    spec = cluster.spec
    target = spec.index(y)
    dist = K.bfs_distances(*cluster.bonds.kernel_args(), spec.index(x), int(cap), target, spec.n_sites)
    value = int(dist[target])
    return None if value < 0 else value


def ball_volume(cluster: ClusterView, x: Sequence[int], n: int) -> int:
    """Number of sites within chemical distance ``n`` of ``x``."""
    if n < 0:
        raise ValueError("radius must be >= 0")
    if x not in cluster:
        raise ValueError(f"{tuple(x)} is not in the chosen cluster")
    return int(np.count_nonzero(distance_field(cluster, x, n).dist >= 0))


def ball_volumes(cluster: ClusterView, x: Sequence[int], radii: Sequence[int]) -> dict[int, int | None]:
    """Volumes for several radii from one BFS; None where the ball touches the box edge."""
    radii = sorted(int(r) for r in radii)
    if x not in cluster:
        raise ValueError(f"{tuple(x)} is not in the chosen cluster")
    field = distance_field(cluster, x, radii[-1])
    reached = field.reached()
    hops = field.dist[reached]
    spec = cluster.spec
    reach = np.abs(spec.coords(reached)).max(axis=1)
    counts = np.bincount(hops, minlength=radii[-1] + 1).cumsum()
    # first hop count at which the ball contains a site on the box face
    on_face = hops[reach >= spec.L]
    truncated_from = int(on_face.min()) if on_face.size else radii[-1] + 1
    return {r: (int(counts[r]) if r < truncated_from else None) for r in radii}


def annulus_sites(cluster: ClusterView, r_in: float, r_out: float) -> np.ndarray:
    """Cluster sites z with r_in < |z|_1 < r_out (both strict)."""
    if not (0 <= r_in < r_out):
        raise ValueError("need 0 <= r_in < r_out")
    sites = cluster.sites()
    norms = np.abs(sites).sum(axis=1)
    return sites[(norms > r_in) & (norms < r_out)]
