from __future__ import annotations

import itertools
import sys

import numpy as np
import pytest

from percolil.percolation import LatticeSpec, cluster_of, from_edge_list, generate_bonds


def dfs_labels(bonds) -> np.ndarray:
    """Reference labeling by explicit adjacency lists and iterative DFS."""
    spec = bonds.spec
    W, d = spec.width, spec.d
    masks = [bonds.edge_plane(j) for j in range(d)]
    adj = {s: [] for s in range(spec.n_sites)}
    for offs in itertools.product(range(W), repeat=d):
        s = int(np.ravel_multi_index(offs, spec.shape))
        for j in range(d):
            if not masks[j][offs]:
                continue
            other = list(offs)
            other[j] += 1
            if other[j] == W:
                other[j] = 0
            t = int(np.ravel_multi_index(other, spec.shape))
            adj[s].append(t)
            adj[t].append(s)
    labels = np.full(spec.n_sites, -1, dtype=np.int64)
    for s in range(spec.n_sites):
        if labels[s] >= 0:
            continue
        stack, comp = [s], []
        labels[s] = s
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if labels[w] < 0:
                    labels[w] = s
                    stack.append(w)
        labels[comp] = min(comp)
    return labels


def path_cluster(d: int = 2, L: int = 3):
    """Three sites (-1,0)-(0,0)-(1,0) joined by two open edges, nothing else open."""
    spec = LatticeSpec(d, L, "free")
    o = (0,) * d
    left = (-1,) + o[1:]
    right = (1,) + o[1:]
    bonds = from_edge_list(spec, [(left, o), (o, right)])
    return cluster_of(bonds)


def two_site_cluster(d: int = 2, L: int = 3):
    spec = LatticeSpec(d, L, "free")
    o = (0,) * d
    bonds = from_edge_list(spec, [(o, (1,) + o[1:])])
    return cluster_of(bonds)


def full_cluster(d: int = 2, L: int = 8, boundary: str = "free"):
    bonds = generate_bonds(LatticeSpec(d, L, boundary), 1.0, 0)
    return cluster_of(bonds)


@pytest.fixture
def small_torus_cluster():
    """Origin cluster of a p=0.6 torus with L=2 (at most 25 sites)."""
    spec = LatticeSpec(2, 2, "torus")
    seed = 0
    while True:
        c = cluster_of(generate_bonds(spec, 0.6, seed))
        if 12 <= c.size <= 25:
            return c
        seed += 1


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)
