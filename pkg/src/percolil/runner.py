"""Run configuration, the threaded trial runner and result persistence.

Every experiment splits into independent work units (walk trials, sampled
environments or walker blocks). A unit is a pure function of the resolved
config, the master seed and its index. Units may run on any number of
threads; results are folded in index order, so the output does not depend
on the thread budget.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .analysis import (
    WALKS,
    estimate_lil_constant,
    empirical_transition_density,
    fit_power_law,
    gaussian_fit,
    increment_diagnostics,
    jump_budget,
    tail_from_maxima,
    track_checkpoints,
)
from .environment import EnvironmentStats, alpha_direct, alpha_from_ik, collect_environment_stats
from .geometry import ball_volumes, distance_field
from .percolation import (
    LatticeSpec,
    cluster_of,
    generate_bonds,
    read_bonds,
    sample_conditioned,
    write_bonds,
)
from .rng import ENVIRONMENT, WALK, derive_seed
from .walks import max_chemical_displacement, run_coupled

log = logging.getLogger("percolil")

EXPERIMENTS = ("generate", "walk", "lil", "heatkernel", "alpha", "volume", "tail")
FORMATS = ("json", "csv")
REPORT_HORIZONS = (1e4, 1e5, 1e6, 4e6)
MAX_FAILURE_RATE = 0.10
THREADS_ENV = "PERCOLIL_THREADS"

DEFAULT_TRIALS = {
    "generate": 1, "walk": 1, "lil": 50, "heatkernel": 200_000, "alpha": 20, "volume": 20, "tail": 200,
}


class ConfigError(ValueError):
    """An invalid parameter; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ExcessiveFailures(RuntimeError):
    def __init__(self, failed: int, total: int):
        super().__init__(f"{failed} of {total} work units failed (limit {MAX_FAILURE_RATE:.0%})")
        self.failed = failed
        self.total = total


def _default_gammas() -> tuple[float, ...]:
    return tuple(round(0.2 + 0.1 * i, 10) for i in range(19))


@dataclass(frozen=True)
class RunConfig:
    """Every parameter of one run. ``None`` fields are resolved per experiment."""

    experiment: str = "lil"
    p: float = 0.7
    d: int = 2
    L: int | None = None
    boundary: str = "torus"
    bonds: str | None = None
    seed: int = 0
    trials: int | None = None
    min_trials: int = 30
    max_attempts: int = 100
    # walk, alpha
    steps: int = 1_000_000
    # lil
    walk: str = "ctsrw"
    q: float = 2.0
    t0: float = 16.0
    horizon: float = 1e6
    gamma: float = 0.3
    kappa: float = 3.0
    # heatkernel
    t: float = 2000.0
    heat_walk: str = "myopic"
    binning: str = "shell"
    min_hits: int = 50
    block_size: int = 4096
    # volume
    r_min: int = 15
    r_max: int = 60
    # tail
    n: float = 1e4
    gammas: tuple[float, ...] = field(default_factory=_default_gammas)
    # output
    format: str = "json"
    out: str | None = None
    threads: int | None = None

    # fields that never change results; kept out of the echoed config
    RUNTIME_FIELDS = ("out", "threads")

    def resolved(self) -> "RunConfig":
        """Fill per-experiment defaults and validate."""
        self.validate()
        changes: dict[str, Any] = {}
        if self.trials is None:
            changes["trials"] = DEFAULT_TRIALS[self.experiment]
        if self.bonds is not None:
            bonds = read_bonds(self.bonds)
            spec = bonds.spec
            changes.update(p=bonds.p, d=spec.d, L=spec.L, boundary="torus" if spec.torus else "free")
        elif self.L is None:
            changes["L"] = self._default_L()
        out = dataclasses.replace(self, **changes)
        out.validate()
        return out

    def _default_L(self) -> int:
        # box scale 4 sqrt(time) keeps censoring rare
        e = self.experiment
        if e == "lil":
            return math.ceil(4 * math.sqrt(self.horizon))
        if e == "walk":
            return math.ceil(4 * math.sqrt(self.steps))
        if e == "tail":
            return math.ceil(4 * math.sqrt(self.n))
        if e == "heatkernel":
            return math.ceil(4 * math.sqrt(max(self.t, 1.0)))
        if e == "volume":
            return self.r_max + 1
        if e == "alpha":
            return 256
        return 64

    def validate(self) -> None:
        checks: list[tuple[str, bool, str]] = [
            ("experiment", self.experiment in EXPERIMENTS, f"must be one of {EXPERIMENTS}"),
            ("p", isinstance(self.p, (int, float)) and 0 < self.p <= 1, "must lie in (0, 1]"),
            ("d", isinstance(self.d, int) and self.d >= 2, "must be an integer >= 2"),
            ("L", self.L is None or (isinstance(self.L, int) and self.L >= 1), "must be an integer >= 1"),
            ("boundary", self.boundary in ("torus", "free"), "must be 'torus' or 'free'"),
            ("seed", isinstance(self.seed, int) and 0 <= self.seed < 2**64, "must be a 64-bit unsigned integer"),
            ("trials", self.trials is None or (isinstance(self.trials, int) and self.trials >= 1), "must be >= 1"),
            ("min_trials", isinstance(self.min_trials, int) and self.min_trials >= 1, "must be >= 1"),
            ("max_attempts", isinstance(self.max_attempts, int) and self.max_attempts >= 1, "must be >= 1"),
            ("steps", isinstance(self.steps, int) and self.steps >= 1, "must be >= 1"),
            ("walk", self.walk in WALKS, f"must be one of {WALKS}"),
            ("q", self.q > 1, "must exceed 1"),
            ("t0", self.t0 > math.e, "must exceed e"),
            ("horizon", self.horizon >= self.t0, "must be >= t0"),
            ("gamma", self.gamma > 0, "must be positive"),
            ("kappa", self.kappa > 1, "must exceed 1"),
            ("t", self.t >= 0, "must be >= 0"),
            ("heat_walk", self.heat_walk in ("myopic", "ctsrw"), "must be 'myopic' or 'ctsrw'"),
            ("binning", self.binning in ("site", "shell"), "must be 'site' or 'shell'"),
            ("min_hits", isinstance(self.min_hits, int) and self.min_hits >= 1, "must be >= 1"),
            ("block_size", isinstance(self.block_size, int) and self.block_size >= 1, "must be >= 1"),
            ("r_min", isinstance(self.r_min, int) and self.r_min >= 1, "must be >= 1"),
            ("r_max", isinstance(self.r_max, int) and self.r_max > self.r_min, "must exceed r_min"),
            ("n", self.n > math.e, "must exceed e"),
            ("gammas", len(self.gammas) >= 1 and all(g >= 0 for g in self.gammas)
             and all(b > a for a, b in zip(self.gammas, self.gammas[1:])), "must be nonnegative and increasing"),
            ("format", self.format in FORMATS, f"must be one of {FORMATS}"),
            ("threads", self.threads is None or (isinstance(self.threads, int) and self.threads >= 1),
             "must be >= 1"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(key, f"{message} (got {getattr(self, key)!r})")
        if self.experiment == "alpha" and self.steps < 1000:
            raise ConfigError("steps", "alpha needs at least 1000 jumps per trial")
        if self.experiment == "heatkernel" and self.heat_walk == "myopic" and self.t != int(self.t):
            raise ConfigError("t", "myopic heat kernel needs an integer jump count")
        if self.bonds is not None and not Path(self.bonds).is_file():
            raise ConfigError("bonds", f"no such bond file {self.bonds!r}")

    def echo(self) -> dict:
        """The resolved parameters as plain JSON values (runtime-only fields excluded)."""
        out = {}
        for f in dataclasses.fields(self):
            if f.name in self.RUNTIME_FIELDS:
                continue
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _coerce(key: str, value: Any) -> Any:
    """Bring a JSON value to the field's type."""
    if value is None:
        return None
    kind = {
        "d": int, "L": int, "seed": int, "trials": int, "min_trials": int, "max_attempts": int, "steps": int,
        "min_hits": int, "block_size": int, "r_min": int, "r_max": int, "threads": int,
        "p": float, "q": float, "t0": float, "horizon": float, "gamma": float, "kappa": float, "t": float,
        "n": float,
    }.get(key)
    try:
        if key == "gammas":
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return tuple(float(v) for v in value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot interpret {value!r}") from None
    return value


def load_config_file(path) -> dict:
    """Parameters from a JSON file; an emitted result file works too (its ``config`` block)."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError("config", f"cannot read {path}: {err}") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    for key in data:
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
    return {k: _coerce(k, v) for k, v in data.items()}


def build_config(experiment: str, overrides: dict | None = None, file_values: dict | None = None) -> RunConfig:
    """Defaults, then file values, then explicit overrides; resolved and validated."""
    values: dict[str, Any] = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(key, "unknown configuration key")
            values[key] = _coerce(key, value)
    values["experiment"] = experiment
    try:
        config = RunConfig(**values)
    except TypeError as err:
        raise ConfigError("config", str(err)) from None
    return config.resolved()


def resolve_threads(requested: int | None) -> int:
    """Thread budget: explicit value, else $PERCOLIL_THREADS, else the CPU count."""
    if requested is not None:
        return int(requested)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(THREADS_ENV, f"not an integer: {env!r}") from None
        if value < 1:
            raise ConfigError(THREADS_ENV, "must be >= 1")
        return value
    return os.cpu_count() or 1


# ------------------------------------------------------------------ results


@dataclass
class TrialResult:
    """One work unit's outcome; ``payload`` is experiment specific."""

    trial: int
    seed: int
    censored: bool = False
    payload: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class BatchResult:
    config: RunConfig
    units: list[TrialResult]
    summary: dict
    header: list[str]
    rows: list[tuple]
    threads: int

    @property
    def failures(self) -> list[dict]:
        return [{"trial": u.trial, "error": u.error} for u in self.units if not u.ok]

    @property
    def censoring_rate(self) -> float:
        done = [u for u in self.units if u.ok]
        return sum(u.censored for u in done) / len(done) if done else 0.0


def _plain(value):
    """Recursively convert numpy scalars/arrays to JSON-native values (NaN -> None)."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# -------------------------------------------------------------- experiments


def _environment(config: RunConfig, master: int):
    """Shared or per-trial environment: a bond file, or a conditioned sample."""
    if config.bonds is not None:
        bonds = read_bonds(config.bonds)
        cluster = cluster_of(bonds)
        if cluster.size < 2:
            raise ValueError("the origin of the bond file is an isolated site")
        return bonds, cluster
    spec = LatticeSpec(config.d, config.L, config.boundary)
    return sample_conditioned(spec, config.p, master, config.max_attempts)


def _env_info(cluster) -> dict:
    return {"cluster_size": cluster.size, "attempts": cluster.attempts, "bond_seed": cluster.bonds.seed}


class Experiment:
    """Work-unit protocol: prepare shared state, run unit i, fold results."""

    def __init__(self, config: RunConfig):
        self.config = config

    def units(self) -> int:
        return self.config.trials

    def unit_seed(self, i: int) -> int:
        return derive_seed(self.config.seed, WALK, i)

    def prepare(self) -> None:
        pass

    def run_unit(self, i: int) -> TrialResult:
        raise NotImplementedError

    def aggregate(self, results: list[TrialResult]) -> dict:
        raise NotImplementedError

    def table(self, results: list[TrialResult]) -> tuple[list[str], list[tuple]]:
        raise NotImplementedError


class SharedEnvironment(Experiment):
    def prepare(self) -> None:
        self.bonds, self.cluster = _environment(self.config, self.config.seed)
        log.info("environment ready: %d sites in the origin cluster", self.cluster.size)


class GenerateExperiment(Experiment):
    def units(self) -> int:
        return 1

    def run_unit(self, i):
        if self.config.bonds is not None:
            raise ConfigError("bonds", "generate draws a new configuration; drop --bonds")
        bonds, cluster = _environment(self.config, self.config.seed)
        return TrialResult(i, bonds.seed, False, (bonds, cluster))

    def aggregate(self, results):
        bonds, cluster = results[0].payload
        return {
            "n_open": bonds.n_open, "n_edges": bonds.spec.n_edges, "open_fraction": bonds.open_fraction,
            **_env_info(cluster),
        }

    def table(self, results):
        bonds, _ = results[0].payload
        return ["d", "L", "p", "seed", "torus", "n_open"], [
            (bonds.spec.d, bonds.spec.L, bonds.p, bonds.seed, int(bonds.spec.torus), bonds.n_open)
        ]


class WalkExperiment(SharedEnvironment):
    def run_unit(self, i):
        c = self.config
        traj = run_coupled(self.cluster, None, c.steps, c.seed, i)
        keep = traj if c.format == "csv" else None
        payload = {
            "final": traj.z[-1].tolist(),
            "t_end": float(traj.t_cum[-1]),
            "u_end": int(traj.u_cum[-1]),
            "alpha_direct": traj.n_jumps / float(traj.u_cum[-1]),
            "boundary_index": traj.boundary_index,
            "trajectory": keep,
        }
        return TrialResult(i, self.unit_seed(i), traj.boundary_hit, payload)

    def aggregate(self, results):
        ok = [r for r in results if r.ok]
        return {
            "environment": _env_info(self.cluster),
            "trials": [{k: v for k, v in r.payload.items() if k != "trajectory"} | {"trial": r.trial} for r in ok],
        }

    def table(self, results):
        d = self.config.d
        header = ["trial", "p", *[f"x{j + 1}" for j in range(d)], "t_cum", "u_cum"]
        rows = []
        for r in results:
            traj = r.payload["trajectory"] if r.ok else None
            if traj is None:
                continue
            for p in range(traj.n_jumps + 1):
                rows.append((r.trial, p, *traj.z[p].tolist(), float(traj.t_cum[p]), int(traj.u_cum[p])))
        return header, rows


class LilExperiment(SharedEnvironment):
    def report_horizons(self) -> list[float]:
        c = self.config
        hs = [h for h in REPORT_HORIZONS if c.t0 <= h < c.horizon]
        return hs + [float(c.horizon)]

    def run_unit(self, i):
        c = self.config
        traj = run_coupled(self.cluster, None, jump_budget(c.horizon), c.seed, i)
        extra = self.report_horizons()
        series = {
            w: track_checkpoints(traj, w, c.q, c.t0, c.horizon, trial=i, extra_times=extra) for w in WALKS
        }
        stats = collect_environment_stats(traj, int(traj.u_cum[-1]))
        payload = {"series": series, "jumps": traj.n_jumps, "blind_steps": int(traj.u_cum[-1]), "stats": stats}
        return TrialResult(i, self.unit_seed(i), any(s.censored for s in series.values()), payload)

    def aggregate(self, results):
        c = self.config
        ok = [r for r in results if r.ok]
        jumps = sum(r.payload["jumps"] for r in ok)
        blind = sum(r.payload["blind_steps"] for r in ok)
        stats = EnvironmentStats.empty(c.d)
        for r in ok:
            stats = stats + r.payload["stats"]
        a_direct = jumps / blind
        a_ik = alpha_from_ik(stats)
        meta = {"p": c.p, "d": c.d, "L": c.L, "q": c.q, "t0": c.t0}
        estimates: dict[str, dict] = {}
        for w in WALKS:
            per_h = {}
            for h in self.report_horizons():
                try:
                    est = estimate_lil_constant(
                        [r.payload["series"][w] for r in ok], h, c.min_trials, walk=w, **meta
                    )
                    per_h[_fmt(h)] = est.summary()
                except ValueError as err:
                    per_h[_fmt(h)] = {"estimate": None, "error": str(err)}
            estimates[w] = per_h
        ratio_check = {}
        for h in self.report_horizons():
            cx = estimates["ctsrw"][_fmt(h)].get("estimate")
            cy = estimates["blind"][_fmt(h)].get("estimate")
            if cx and cy:
                expected = 1.0 / math.sqrt(a_direct)
                ratio = cx / cy
                ratio_check[_fmt(h)] = {
                    "c_x": cx, "c_y": cy, "ratio": ratio, "expected": expected,
                    "relative_error": abs(ratio / expected - 1.0),
                }
        big = ann = total = 0
        for r in ok:
            series = r.payload["series"][c.walk]
            if series.censored or len(series.times) < 2:
                continue
            diag = increment_diagnostics(series, c.gamma, c.kappa)
            big += int(diag.big_increment.sum())
            ann += int(diag.in_annulus.sum())
            total += len(diag.times)
        increments = {
            "walk": c.walk, "gamma": c.gamma, "kappa": c.kappa, "checkpoints": total,
            "big_increment_rate": big / total if total else None,
            "annulus_rate": ann / total if total else None,
        }
        return {
            "environment": _env_info(self.cluster),
            "horizons": self.report_horizons(),
            "increments": increments,
            "estimates": estimates,
            "alpha": {"alpha_direct": a_direct, "alpha_from_ik": a_ik, "i_hat": stats.i_hat.tolist()},
            "ratio_check": ratio_check,
        }

    def table(self, results):
        rows = []
        for r in results:
            if r.ok:
                rows.extend(r.payload["series"][self.config.walk].rows())
        return ["trial", "k", "t", "l1", "phi", "ratio", "runmax"], rows


class HeatKernelExperiment(SharedEnvironment):
    """Work units are walker blocks of ``block_size``; ``trials`` counts walkers."""

    def units(self) -> int:
        return math.ceil(self.config.trials / self.config.block_size)

    def run_unit(self, i):
        c = self.config
        m = min(c.block_size, c.trials - i * c.block_size)
        dens = empirical_transition_density(self.cluster, c.t, m, c.seed, c.heat_walk, c.block_size, first_block=i)
        return TrialResult(i, self.unit_seed(i), dens.censored > 0, dens)

    def aggregate(self, results):
        c = self.config
        ok = [r.payload for r in results if r.ok]
        dens = ok[0]
        for part in ok[1:]:
            dens = dens + part
        self.density = dens
        fit = None
        try:
            f = gaussian_fit(dens, c.t, min_hits=c.min_hits, binning=c.binning, cluster=self.cluster)
            fit = dataclasses.asdict(f)
        except ValueError as err:
            fit = {"error": str(err)}
        return {
            "environment": _env_info(self.cluster),
            "walkers": dens.trials, "censored_walkers": dens.censored, "distinct_sites": len(dens.counts),
            "fit": fit,
        }

    def table(self, results):
        d = self.config.d
        dens = self.density
        total = dens.counts.sum()
        rows = [(*s.tolist(), int(n), float(n) / total) for s, n in zip(dens.sites, dens.counts)]
        return [*[f"x{j + 1}" for j in range(d)], "count", "probability"], rows


class AlphaExperiment(Experiment):
    """Each trial draws its own conditioned environment and one long coupled walk."""

    def run_unit(self, i):
        c = self.config
        _, cluster = _environment(c, derive_seed(c.seed, ENVIRONMENT, i))
        traj = run_coupled(cluster, None, c.steps, c.seed, i)
        stats = collect_environment_stats(traj, int(traj.u_cum[-1]))
        payload = {
            "alpha_direct": alpha_direct(traj),
            "alpha_from_ik": alpha_from_ik(stats),
            "stats": stats,
            "cluster_size": cluster.size,
        }
        return TrialResult(i, self.unit_seed(i), traj.boundary_hit, payload)

    def aggregate(self, results):
        c = self.config
        ok = [r for r in results if r.ok]
        stats = EnvironmentStats.empty(c.d)
        for r in ok:
            stats = stats + r.payload["stats"]
        direct = np.array([r.payload["alpha_direct"] for r in ok])
        ik = np.array([r.payload["alpha_from_ik"] for r in ok])
        rel = np.abs(direct - ik) / direct
        return {
            "alpha_direct": float(direct.mean()),
            "alpha_from_ik": alpha_from_ik(stats),
            "i_hat": stats.i_hat.tolist(),
            "max_relative_discrepancy": float(rel.max()),
            "note": "torus runs: reaching the box scale does not bias environment averages; all trials are used",
            "trials": [
                {"trial": r.trial, "alpha_direct": r.payload["alpha_direct"],
                 "alpha_from_ik": r.payload["alpha_from_ik"],
                 "i_hat": r.payload["stats"].i_hat.tolist(), "censored": r.censored,
                 "cluster_size": r.payload["cluster_size"]}
                for r in ok
            ],
        }

    def table(self, results):
        d = self.config.d
        header = ["trial", "alpha_direct", "alpha_from_ik", *[f"i{k}" for k in range(2 * d + 1)], "censored"]
        rows = [
            (r.trial, r.payload["alpha_direct"], r.payload["alpha_from_ik"], *r.payload["stats"].i_hat.tolist(),
             int(r.censored))
            for r in results if r.ok
        ]
        return header, rows


class VolumeExperiment(Experiment):
    def radii(self) -> list[int]:
        return list(range(self.config.r_min, self.config.r_max + 1))

    def run_unit(self, i):
        seed = derive_seed(self.config.seed, ENVIRONMENT, i)
        _, cluster = _environment(self.config, seed)
        vols = ball_volumes(cluster, cluster.origin, self.radii())
        return TrialResult(i, seed, any(v is None for v in vols.values()), vols)

    def _means(self, results):
        ok = [r.payload for r in results if r.ok]
        radii, means = [], []
        for n in self.radii():
            vals = [v[n] for v in ok if v[n] is not None]
            if vals:
                radii.append(n)
                means.append(float(np.mean(vals)))
        return radii, means

    def aggregate(self, results):
        radii, means = self._means(results)
        fit = fit_power_law(radii, means)
        return {"fit": dataclasses.asdict(fit), "radii": radii, "mean_volume": means,
                "clusters": sum(r.ok for r in results)}

    def table(self, results):
        radii, means = self._means(results)
        return ["n", "vol"], list(zip(radii, means))


class TailExperiment(SharedEnvironment):
    def prepare(self) -> None:
        super().prepare()
        self.budget = jump_budget(self.config.n)
        self.field = distance_field(self.cluster, self.cluster.origin, self.budget)

    def run_unit(self, i):
        c = self.config
        traj = run_coupled(self.cluster, None, self.budget, c.seed, i)
        if traj.censor_time("ctsrw") <= c.n:
            return TrialResult(i, self.unit_seed(i), True, None)
        m = max_chemical_displacement(traj, self.cluster, traj.jump_count_at(c.n), field=self.field)
        return TrialResult(i, self.unit_seed(i), False, m)

    def aggregate(self, results):
        c = self.config
        maxima = [r.payload for r in results if r.ok and not r.censored]
        censored = sum(r.censored for r in results if r.ok)
        curve = tail_from_maxima(c.n, c.gammas, maxima, censored)
        self.curve = curve
        return {
            "environment": _env_info(self.cluster),
            "n": c.n, "phi_n": curve.phi_n, "gammas": list(c.gammas), "survival": curve.survival.tolist(),
            "used_trials": len(maxima), "censored": censored,
        }

    def table(self, results):
        return ["gamma", "survival"], list(zip(self.curve.gammas.tolist(), self.curve.survival.tolist()))


EXPERIMENT_CLASSES: dict[str, type[Experiment]] = {
    "generate": GenerateExperiment,
    "walk": WalkExperiment,
    "lil": LilExperiment,
    "heatkernel": HeatKernelExperiment,
    "alpha": AlphaExperiment,
    "volume": VolumeExperiment,
    "tail": TailExperiment,
}


def _guarded(exp: Experiment, i: int) -> TrialResult:
    try:
        return exp.run_unit(i)
    except ConfigError:
        raise
    except Exception as err:  # recorded, the batch decides
        log.warning("unit %d failed: %s", i, err)
        return TrialResult(i, exp.unit_seed(i), False, None, f"{type(err).__name__}: {err}")


def run_batch(config: RunConfig, threads: int | None = None,
              unit_hook: Callable[[Experiment, int], TrialResult] | None = None) -> BatchResult:
    """Run every work unit of ``config`` and fold the results in index order.

    ``unit_hook`` replaces the per-unit call (used to inject failures in tests).
    """
    config = config.resolved()
    threads = resolve_threads(threads if threads is not None else config.threads)
    exp = EXPERIMENT_CLASSES[config.experiment](config)
    exp.prepare()
    n = exp.units()
    call = unit_hook or _guarded
    if threads == 1 or n == 1:
        results = [call(exp, i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: call(exp, i), range(n)))
    failed = sum(not r.ok for r in results)
    if failed > MAX_FAILURE_RATE * n:
        raise ExcessiveFailures(failed, n)
    summary = _plain(exp.aggregate(results))
    header, rows = exp.table(results)
    return BatchResult(config, results, summary, header, rows, threads)


# ------------------------------------------------------------------ output


def result_document(result: BatchResult) -> dict:
    return {
        "tool": "percolil",
        "version": __version__,
        "experiment": result.config.experiment,
        "config": result.config.echo(),
        "summary": result.summary,
        "censoring_rate": result.censoring_rate,
        "failures": result.failures,
        "runtime": {
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "threads": result.threads,
        },
    }


def emit(result: BatchResult, fmt: str | None = None, path=None) -> str:
    """Write the result as JSON or CSV (plus a ``.meta.json`` sidecar); return the main text.

    ``path=None`` writes to stdout. The ``generate`` experiment also writes
    its bond file to ``path``.
    """
    fmt = fmt or result.config.format
    if fmt not in FORMATS:
        raise ConfigError("format", f"must be one of {FORMATS}")
    doc = result_document(result)
    if result.config.experiment == "generate":
        if path is None:
            raise ConfigError("out", "generate needs an output path for the bond file")
        bonds, _ = result.units[0].payload
        try:
            write_bonds(bonds, path)
        except OSError as err:
            raise OSError(f"cannot write {path}: {err}") from err
        text = json.dumps(doc, indent=2)
        _write(Path(f"{path}.meta.json"), text)
        return text
    if fmt == "json":
        text = json.dumps(doc, indent=2)
        _write(path, text)
        return text
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.header)
    writer.writerows([_fmt(x) for x in row] for row in result.rows)
    text = buf.getvalue()
    _write(path, text)
    if path is not None:
        _write(Path(f"{path}.meta.json"), json.dumps(doc, indent=2))
    return text


def _write(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    Path(path).write_text(text if text.endswith("\n") else text + "\n")
