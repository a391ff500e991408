import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from percolil.environment import (
    EnvironmentStats,
    alpha_direct,
    alpha_from_ik,
    build_finite_oracle,
    collect_environment_stats,
    exact_heat_kernel,
    stationarity_check,
)
from percolil.percolation import LatticeSpec, cluster_of, degree_array, generate_bonds
from percolil.walks import run_blind_direct, run_coupled

from conftest import full_cluster, path_cluster, two_site_cluster


@pytest.fixture(scope="module")
def torus_cluster():
    return cluster_of(generate_bonds(LatticeSpec(2, 20, "torus"), 0.7, 11))


def _cluster_degree_law(cluster):
    deg = degree_array(cluster.bonds)[cluster.site_indices()]
    return np.bincount(deg, minlength=2 * cluster.spec.d + 1) / cluster.size


def test_stats_examples():
    s = EnvironmentStats(2, (0, 1, 2, 0, 1))
    assert s.total_steps == 4
    assert np.allclose(s.i_hat, [0, 0.25, 0.5, 0, 0.25])
    with pytest.raises(ValueError):
        EnvironmentStats(2, (1, 2, 3))
    with pytest.raises(ValueError):
        EnvironmentStats(2, (0,) * 5, clock="wall")
    with pytest.raises(ValueError):
        EnvironmentStats(2, (0,) * 5) + EnvironmentStats(2, (0,) * 5, clock="jump")


def test_full_lattice_stats():
    c = full_cluster(L=50, boundary="torus")
    traj = run_coupled(c, n_jumps=500, seed=1)
    s = collect_environment_stats(traj, 500)
    assert s.degree_counts == (0, 0, 0, 0, 500)
    assert collect_environment_stats(traj, 500, clock="jump").degree_counts == (0, 0, 0, 0, 500)


def test_stats_count_blind_steps_exactly(torus_cluster):
    c = torus_cluster
    traj = run_coupled(c, n_jumps=2000, seed=4)
    deg = degree_array(c.bonds)
    for n in (1, 7, 100, int(traj.u_cum[-1])):
        s = collect_environment_stats(traj, n)
        assert s.total_steps == n
        # reference: rebuild Y_1..Y_n by scanning
        ys = [traj.z[np.searchsorted(traj.u_cum, j, "right") - 1] for j in range(1, n + 1)]
        manual = np.bincount(deg[c.spec.indices(np.array(ys))], minlength=5)
        assert s.degree_counts == tuple(manual)
    with pytest.raises(ValueError):
        collect_environment_stats(traj, int(traj.u_cum[-1]) + 1)


def test_stats_from_direct_path_needs_bonds():
    c = path_cluster()
    path = run_blind_direct(c, (0, 0), 100, seed=1)
    with pytest.raises(ValueError):
        collect_environment_stats(path, 100)
    s = collect_environment_stats(path, 100, bonds=c.bonds)
    assert s.total_steps == 100 and s.degree_counts[0] == 0 and s.degree_counts[3:] == (0, 0)


def test_i_hat_converges_to_cluster_degree_law(torus_cluster):
    c = torus_cluster
    target = _cluster_degree_law(c)
    batches = [
        collect_environment_stats(run_coupled(c, n_jumps=20_000, seed=3, trial=b), 20_000).i_hat for b in range(20)
    ]
    batches = np.array(batches)
    mean = batches.mean(axis=0)
    se = batches.std(axis=0, ddof=1) / np.sqrt(len(batches))
    mask = target > 0.01
    assert np.all(np.abs(mean[mask] - target[mask]) <= 5 * se[mask] + 1e-3)


def test_merge_is_associative():
    a = EnvironmentStats(2, (0, 1, 2, 3, 4))
    b = EnvironmentStats(2, (0, 5, 0, 1, 0))
    c = EnvironmentStats(2, (0, 0, 7, 0, 2))
    assert (a + b) + c == a + (b + c)
    assert a + EnvironmentStats.empty(2) == a


def test_alpha_examples_jump_clock():
    assert alpha_from_ik(EnvironmentStats(2, (0, 0, 0, 0, 10), "jump")) == pytest.approx(1.0)
    assert alpha_from_ik(EnvironmentStats(2, (0, 10, 0, 0, 0), "jump")) == pytest.approx(0.25)
    assert alpha_from_ik(EnvironmentStats(2, (0, 5, 5, 0, 0), "jump")) == pytest.approx(1 / 3)


def test_alpha_examples_blind_clock():
    assert alpha_from_ik(EnvironmentStats(2, (0, 0, 0, 0, 10))) == pytest.approx(1.0)
    # uniform law (0, 1/2, 1/2) size-biases to (1/3, 2/3): 1 / (4/3 + 4/3) = 3/8
    assert alpha_from_ik(EnvironmentStats(2, (0, 5, 5, 0, 0))) == pytest.approx(0.375)
    # three-site path: uniform law (2/3, 1/3) gives mean degree 4/3, alpha = 1/3
    assert alpha_from_ik(EnvironmentStats(2, (0, 2, 1, 0, 0))) == pytest.approx(1 / 3)


def test_alpha_rejects_degree_zero_and_empty():
    with pytest.raises(ValueError):
        alpha_from_ik(EnvironmentStats(2, (1, 5, 0, 0, 0)))
    with pytest.raises(ValueError):
        alpha_from_ik(EnvironmentStats.empty(2))


@settings(max_examples=100, deadline=None)
@given(counts=st.lists(st.integers(0, 1000), min_size=4, max_size=4).filter(lambda c: sum(c) > 0),
       clock=st.sampled_from(["blind", "jump"]))
def test_alpha_in_unit_interval(counts, clock):
    a = alpha_from_ik(EnvironmentStats(2, (0, *counts), clock))
    assert 0 < a <= 1 + 1e-12
    assert a >= 0.25 - 1e-12


def test_alpha_direct_examples():
    traj = run_coupled(full_cluster(L=50, boundary="torus"), n_jumps=2000, seed=2)
    assert alpha_direct(traj) == 1.0
    with pytest.raises(ValueError):
        alpha_direct(traj, min_jumps=5000)
    traj = run_coupled(two_site_cluster(), n_jumps=100_000, seed=2)
    # U increments are Geometric(1/4), sd of the mean is sqrt(12/P)
    u_mean = 1 / alpha_direct(traj)
    assert abs(u_mean - 4.0) <= 4 * np.sqrt(12 / 100_000)


def test_alpha_estimators_agree(torus_cluster):
    c = torus_cluster
    exact = _cluster_degree_law(c) @ np.arange(5) / 4
    traj = run_coupled(c, n_jumps=400_000, seed=7)
    direct = alpha_direct(traj)
    blind = alpha_from_ik(collect_environment_stats(traj, int(traj.u_cum[-1])))
    jump = alpha_from_ik(collect_environment_stats(traj, traj.n_jumps, clock="jump"))
    for est in (direct, blind, jump):
        assert abs(est / exact - 1) < 0.02


def test_ergodic_halves_agree(torus_cluster):
    traj = run_coupled(torus_cluster, n_jumps=200_000, seed=8)
    n = int(traj.u_cum[-1])
    first = collect_environment_stats(traj, n // 2)
    whole = collect_environment_stats(traj, n)
    second = EnvironmentStats(2, tuple(a - b for a, b in zip(whole.degree_counts, first.degree_counts)))
    assert abs(alpha_from_ik(first) / alpha_from_ik(second) - 1) < 0.03


def test_oracle_examples():
    o = build_finite_oracle(path_cluster())
    assert o.n == 3
    assert o.degree.tolist() == [1, 2, 1]
    assert np.allclose(o.P_blind.sum(axis=1), 1)
    assert np.allclose(np.diag(o.P_blind), [0.75, 0.5, 0.75])
    assert np.allclose(o.P_myopic[1], [0.5, 0, 0.5])
    assert np.allclose(o.Q.sum(axis=1), 0)
    with pytest.raises(ValueError):
        build_finite_oracle(full_cluster(L=20), cap=100)


def test_heat_kernel_at_zero_and_two_sites():
    o = build_finite_oracle(two_site_cluster())
    assert np.allclose(exact_heat_kernel(o, 0.0), np.eye(2))
    for t in (0.1, 1.0, 3.7, 50.0):
        H = exact_heat_kernel(o, t)
        stay = (1 + np.exp(-2 * t)) / 2
        assert np.allclose(H, [[stay, 1 - stay], [1 - stay, stay]], atol=1e-12)
    with pytest.raises(ValueError):
        exact_heat_kernel(o, -1.0)


def test_heat_kernel_against_expm(small_torus_cluster):
    o = build_finite_oracle(small_torus_cluster)
    for t in (0.5, 5.0, 40.0, 100.0):
        H = exact_heat_kernel(o, t)
        assert np.allclose(H.sum(axis=1), 1, atol=1e-9)
        assert np.max(np.abs(H - scipy.linalg.expm(t * o.Q))) < 1e-9


def test_heat_kernel_chapman_kolmogorov(small_torus_cluster):
    o = build_finite_oracle(small_torus_cluster)
    s, t = 1.3, 2.9
    lhs = exact_heat_kernel(o, s + t)
    rhs = exact_heat_kernel(o, s) @ exact_heat_kernel(o, t)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_uniform_measure_is_stationary_for_blind(small_torus_cluster):
    for c in (small_torus_cluster, path_cluster(), full_cluster(L=3)):
        rep = stationarity_check(build_finite_oracle(c))
        assert rep.symmetric
        assert rep.max_deviation < 1e-12


def test_myopic_is_not_uniformly_stationary():
    rep = stationarity_check(build_finite_oracle(path_cluster()), which="myopic")
    assert not rep.symmetric
    assert rep.max_deviation > 0.1
