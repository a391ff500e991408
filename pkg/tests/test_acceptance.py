"""Exit criteria at full scale. Each test records one PASS/FAIL line, echoed in the terminal summary."""

import json
import time

import numpy as np
import pytest

from percolil.analysis import _linear_fit
from percolil.cli import parse_config
from percolil.environment import (
    alpha_direct,
    alpha_from_ik,
    build_finite_oracle,
    collect_environment_stats,
    endpoint_law,
    exact_heat_kernel,
    stationarity_check,
    total_variation,
)
from percolil.geometry import chemical_distance, distance_field, l1_norm
from percolil.percolation import LatticeSpec, cluster_of, generate_bonds
from percolil.runner import result_document, run_batch
from percolil.walks import coupled_endpoints, run_blind_direct, run_coupled, y_path

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def report(number, ok, detail, started):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail} ({time.perf_counter() - started:.1f} s)"
    RESULTS.append(line)
    print("\n" + line)
    return ok


def _doc(result):
    doc = result_document(result)
    doc.pop("runtime")
    return json.dumps(doc, sort_keys=True)


@pytest.fixture(scope="module")
def alpha_run():
    cfg = parse_config(["alpha"])
    t0 = time.perf_counter()
    result = run_batch(cfg, threads=1)
    return cfg, result, time.perf_counter() - t0


@pytest.fixture(scope="module")
def lil_run():
    cfg = parse_config(["lil", "--horizon", "4e6"])
    t0 = time.perf_counter()
    result = run_batch(cfg)
    return cfg, result, time.perf_counter() - t0


def test_criterion_01_full_lattice_degeneracy():
    started = time.perf_counter()
    c = cluster_of(generate_bonds(LatticeSpec(2, 64, "torus"), 1.0, 0))
    traj = run_coupled(c, n_jumps=1_000_000, seed=1)
    n = int(traj.u_cum[-1])
    a_direct = alpha_direct(traj)
    blind = collect_environment_stats(traj, n)
    a_ik = alpha_from_ik(blind)
    # every blind attempt succeeds, so Y_n = Z_n for all n
    same_path = n == traj.n_jumps and np.array_equal(y_path(traj, np.arange(n + 1)), traj.z)
    direct = run_blind_direct(c, (0, 0), 2000, seed=1)
    direct_moves = bool(np.all(np.abs(np.diff(direct, axis=0)).sum(axis=1) == 1))
    ok = (abs(a_direct - 1) <= 0.01 and abs(a_ik - 1) <= 0.01 and same_path and direct_moves
          and blind.i_hat[4] == 1.0)
    elapsed = time.perf_counter() - started
    assert report(1, ok and elapsed < 10, f"alpha_direct={a_direct}, alpha_from_ik={a_ik}, "
                  f"Y=Z pathwise: {same_path}, i_hat(4)={blind.i_hat[4]}", started)


def test_criterion_02_stationarity_oracle():
    started = time.perf_counter()
    c = cluster_of(generate_bonds(LatticeSpec(2, 8, "torus"), 0.7, 5))
    assert 10 < c.size <= 300
    oracle = build_finite_oracle(c)
    blind = stationarity_check(oracle)
    myopic = stationarity_check(oracle, "myopic")
    ok = blind.symmetric and blind.max_column_deviation <= 1e-12 and myopic.max_column_deviation >= 1e-3
    assert report(2, ok, f"{c.size} sites, blind symmetric={blind.symmetric}, column dev="
                  f"{blind.max_column_deviation:.1e}, myopic column dev={myopic.max_column_deviation:.3f}", started)


def test_criterion_03_alpha_cross_consistency(alpha_run):
    cfg, result, elapsed = alpha_run
    started = time.perf_counter() - elapsed
    trials = result.summary["trials"]
    worst = max(abs(t["alpha_direct"] - t["alpha_from_ik"]) / t["alpha_direct"] for t in trials)
    inside = all(0 < t[k] < 1 for t in trials for k in ("alpha_direct", "alpha_from_ik"))
    ok = len(trials) == 20 and worst <= 0.02 and inside and elapsed < 60
    assert (cfg.p, cfg.d, cfg.L, cfg.steps, cfg.trials) == (0.7, 2, 256, 1_000_000, 20)
    assert report(3, ok, f"max relative discrepancy {worst:.4f} over {len(trials)} trials", started)


def test_criterion_04_coupling_distributional_identity():
    started = time.perf_counter()
    spec = LatticeSpec(2, 3, "torus")
    seed = 0
    while not 15 <= (c := cluster_of(generate_bonds(spec, 0.6, seed))).size <= 30:
        seed += 1
    oracle = build_finite_oracle(c)
    o = oracle.position((0, 0))
    xs, ys = coupled_endpoints(c, 5.0, 6, 1_000_000, seed=12)
    exact_y = np.linalg.matrix_power(oracle.P_blind, 6)[o]
    exact_x = exact_heat_kernel(oracle, 5.0)[o]
    tv_y = total_variation(endpoint_law(oracle, ys, torus_width=spec.width), exact_y)
    tv_x = total_variation(endpoint_law(oracle, xs, torus_width=spec.width), exact_x)
    ok = tv_y <= 0.02 and tv_x <= 0.02
    assert report(4, ok, f"{c.size}-site cluster, TV(y_at(6))={tv_y:.4f}, TV(x_at(5.0))={tv_x:.4f}", started)


def test_criterion_05_volume_growth():
    started = time.perf_counter()
    cfg = parse_config(["volume"])
    assert (cfg.trials, cfg.r_min, cfg.r_max) == (20, 15, 60)
    fit = run_batch(cfg).summary["fit"]
    ok = 1.8 <= fit["slope"] <= 2.2
    assert report(5, ok, f"log-log slope {fit['slope']:.3f} (R^2 {fit['r_squared']:.4f})", started)


def test_criterion_06_gaussian_shape():
    started = time.perf_counter()
    cfg = parse_config(["heatkernel"])
    assert (cfg.t, cfg.trials, cfg.heat_walk) == (2000.0, 200_000, "myopic")
    summary = run_batch(cfg).summary
    fit = summary["fit"]
    ok = fit["r_squared"] >= 0.9 and fit["slope"] < 0
    assert report(6, ok, f"slope {fit['slope']:.3f}, R^2 {fit['r_squared']:.4f} on {fit['n_points']} "
                  f"{cfg.binning} bins", started)


def test_criterion_07_displacement_tail():
    started = time.perf_counter()
    cfg = parse_config(["tail"])
    assert cfg.n == 1e4
    s = run_batch(cfg).summary
    g, surv = np.array(s["gammas"]), np.array(s["survival"])
    nonincreasing = bool(np.all(np.diff(surv) <= 0))
    pos = surv > 0
    slope = _linear_fit(g[pos] ** 2, np.log(surv[pos])).slope
    ok = nonincreasing and slope < 0 and surv[pos][-1] < surv[0]
    assert report(7, ok, f"survival nonincreasing={nonincreasing}, d log S / d gamma^2 = {slope:.3f} "
                  f"over {s['used_trials']} trials", started)


def test_criterion_08_lil_stabilization(lil_run):
    cfg, result, elapsed = lil_run
    started = time.perf_counter() - elapsed
    est = result.summary["estimates"]["ctsrw"]
    c6, c46 = est["1000000.0"], est["4000000.0"]
    change = abs(c46["estimate"] - c6["estimate"]) / c6["estimate"]
    finite = all(0 < e["estimate"] < np.inf and e["band90"][0] > 0 for e in (c6, c46))
    ok = change <= 0.15 and finite and elapsed < 600
    assert report(8, ok, f"c(1e6)={c6['estimate']:.4f}, c(4e6)={c46['estimate']:.4f}, change {change:.3%}, "
                  f"lower band {c46['band90'][0]:.3f}, {c46['trials']} trials", started)


def test_criterion_09_cross_walk_relation(lil_run):
    _, result, elapsed = lil_run
    started = time.perf_counter()
    checks = result.summary["ratio_check"]
    errors = {h: checks[h]["relative_error"] for h in ("1000000.0", "4000000.0")}
    ok = all(e <= 0.10 for e in errors.values())
    assert report(9, ok, f"c_X/c_Y={checks['4000000.0']['ratio']:.4f} vs 1/sqrt(alpha)="
                  f"{checks['4000000.0']['expected']:.4f}, relative errors {errors}", started)


def test_criterion_10_thread_reproducibility(alpha_run):
    cfg, single, _ = alpha_run
    started = time.perf_counter()
    eight = run_batch(cfg, threads=8)
    ok = _doc(single) == _doc(eight)
    assert report(10, ok, "JSON identical for thread budgets 1 and 8", started)


def test_criterion_11_geometry_inequality():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = violations = 0
    for p in (0.7, 1.0):
        spec = LatticeSpec(2, 150, "free")
        seed = 0
        while (c := cluster_of(generate_bonds(spec, p, seed))).size < 20_000:
            seed += 1
        field = distance_field(c, (0, 0))
        sites = c.sites()[rng.choice(c.size, 10_000, replace=False)]
        chem = field.dist[spec.indices(sites)]
        l1 = np.abs(sites).sum(axis=1)
        assert np.all(chem >= 0)
        violations += int(np.sum(l1 > chem))
        if p == 1.0:
            violations += int(np.sum(l1 != chem))
        # spot-check the field against pairwise queries
        for x, y in zip(sites[:25:2], sites[1:25:2]):
            d = chemical_distance(c, tuple(x), tuple(y), 10 * spec.n_sites)
            violations += int(l1_norm(x, y) > d or (p == 1.0 and l1_norm(x, y) != d))
        checked += len(sites)
    assert report(11, violations == 0, f"{checked} sites checked, {violations} violations", started)
