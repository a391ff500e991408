import numpy as np
import pytest

from percolil.geometry import (
    annulus_sites,
    ball_volume,
    ball_volumes,
    chemical_distance,
    distance_field,
    l1_norm,
)
from percolil.percolation import LatticeSpec, cluster_of, from_edge_list, generate_bonds

from conftest import full_cluster


def test_l1_norm_examples():
    assert l1_norm((0, 0), (0, 0)) == 0
    assert l1_norm((0, 0), (1, -2)) == 3
    assert l1_norm((0, 0), (4, 0), torus_width=5) == 1
    assert l1_norm((-2, 1), (2, -1), torus_width=5) == 3


def test_chemical_distance_trivial():
    c = full_cluster(L=5)
    assert chemical_distance(c, (1, 2), (1, 2), cap=3) == 0
    with pytest.raises(ValueError):
        chemical_distance(c, (0, 0), (1, 1), cap=0)


def test_chemical_distance_full_lattice_is_l1():
    c = full_cluster(L=6)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.integers(-6, 7, size=(2, 2))
        assert chemical_distance(c, x, y, cap=100) == l1_norm(x, y)


def _simple_path_distance(edges, x, y, max_len):
    adj = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    best = None

    def walk(v, seen, length):
        nonlocal best
        if v == y:
            best = length if best is None else min(best, length)
            return
        if length == max_len:
            return
        for w in adj.get(v, []):
            if w not in seen:
                walk(w, seen | {w}, length + 1)

    walk(x, {x}, 0)
    return best


def test_chemical_distance_forced_detour():
    spec = LatticeSpec(2, 2, "free")
    # a wall between (0,-2)..(0,1) and (1,*) forces a detour over the top row
    route = [(0, -2), (0, -1), (0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (2, -1), (1, -1)]
    edges = list(zip(route, route[1:])) + [((-1, 0), (0, 0)), ((-1, 0), (-1, 1))]
    c = cluster_of(from_edge_list(spec, edges))
    for target in [(1, -1), (2, 0), (-1, 1), (0, -2)]:
        expected = _simple_path_distance(edges, (0, 0), target, 10)
        assert chemical_distance(c, (0, 0), target, cap=20) == expected
    assert chemical_distance(c, (0, 0), (1, -1), cap=20) == 8
    assert chemical_distance(c, (0, 0), (1, -1), cap=5) is None
    assert chemical_distance(c, (0, 0), (1, 0), cap=20) is None


def test_ball_volume_examples():
    c = full_cluster(L=8)
    assert ball_volume(c, (0, 0), 0) == 1
    assert ball_volume(c, (0, 0), 1) == 5
    assert ball_volume(c, (0, 0), 2) == 13
    for n in range(8):
        assert ball_volume(c, (0, 0), n) == 2 * n * n + 2 * n + 1


def test_ball_volume_outside_cluster():
    spec = LatticeSpec(2, 3, "free")
    c = cluster_of(from_edge_list(spec, [((0, 0), (1, 0))]))
    with pytest.raises(ValueError):
        ball_volume(c, (2, 2), 1)


def test_ball_volume_nondecreasing():
    c = cluster_of(generate_bonds(LatticeSpec(2, 20, "torus"), 0.7, 4))
    vols = [ball_volume(c, (0, 0), n) for n in range(15)]
    assert all(a <= b for a, b in zip(vols, vols[1:]))


def test_ball_volumes_flags_truncation():
    c = full_cluster(L=5)
    vols = ball_volumes(c, (0, 0), [1, 2, 4, 5, 6])
    assert vols[4] == 41
    assert vols[5] is None and vols[6] is None


def test_annulus_examples():
    c = full_cluster(L=4)
    assert len(annulus_sites(c, 0, 0.5)) == 0
    ring = annulus_sites(c, 0.5, 1.5)
    assert sorted(map(tuple, ring)) == [(-1, 0), (0, -1), (0, 1), (1, 0)]
    assert len(annulus_sites(c, 2.0, 3.0)) == 0  # strict on both sides
    with pytest.raises(ValueError):
        annulus_sites(c, 2.0, 1.0)


def test_annulus_matches_filter_and_partitions():
    c = cluster_of(generate_bonds(LatticeSpec(2, 8, "torus"), 0.65, 12))
    sites = c.sites()
    got = {tuple(s) for s in annulus_sites(c, 2.5, 4.5)}
    expected = {tuple(s) for s in sites if 2.5 < abs(s[0]) + abs(s[1]) < 4.5}
    assert got == expected
    rest = {tuple(s) for s in sites} - got
    assert len(rest) + len(got) == c.size
    assert not (rest & got)


def test_l1_below_chemical_and_triangle():
    c = cluster_of(generate_bonds(LatticeSpec(2, 15, "free"), 0.7, 8))
    field = distance_field(c, (0, 0))
    idx = field.reached()
    coords = c.spec.coords(idx)
    assert np.all(np.abs(coords).sum(axis=1) <= field.dist[idx])
    rng = np.random.default_rng(1)
    sites = c.sites()
    for _ in range(30):
        a, b, m = sites[rng.integers(len(sites), size=3)]
        ab = chemical_distance(c, a, b, 10_000)
        am = chemical_distance(c, a, m, 10_000)
        mb = chemical_distance(c, m, b, 10_000)
        assert ab <= am + mb


def test_distance_field_geodesic_steps():
    c = cluster_of(generate_bonds(LatticeSpec(2, 10, "torus"), 0.6, 3))
    field = distance_field(c, (0, 0))
    assert field[(0, 0)] == 0
    spec = c.spec
    planes = c.bonds
    for j in range(2):
        mask = planes.edge_plane(j).reshape(-1)
        for s in np.flatnonzero(mask):
            other = spec.indices(spec.coords(s) + np.eye(2, dtype=int)[j])
            a, b = field.dist[s], field.dist[other]
            if a >= 0 or b >= 0:
                assert abs(int(a) - int(b)) <= 1
