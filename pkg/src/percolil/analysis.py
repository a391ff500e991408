"""Iterated-logarithm statistics and asymptotic shape fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import DistanceField, ball_volumes, distance_field
from .percolation import ClusterView
from .walks import (
    CoupledTrajectory,
    coupled_endpoints,
    max_chemical_displacement,
    myopic_endpoints,
    run_coupled,
    x_path,
    y_path,
)

WALKS = ("ctsrw", "blind", "myopic")


def phi(t):
    """sqrt(t log log t), defined for t > e."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr <= math.e):
        raise ValueError(f"phi needs t > e, got {t}")
    out = np.sqrt(arr * np.log(np.log(arr)))
    return float(out) if out.ndim == 0 else out


def checkpoint_times(
    q: float, t0: float, horizon: float, include_horizon: bool = True, extra: Sequence[float] = ()
) -> np.ndarray:
    """t0 * q**k up to ``horizon``, optionally closed by the horizon itself.

    ``extra`` times in [t0, horizon] (report horizons, say) are merged in.
    """
    if q <= 1:
        raise ValueError(f"q must exceed 1, got {q}")
    if t0 <= math.e:
        raise ValueError(f"t0 must exceed e, got {t0}")
    if horizon < t0:
        raise ValueError(f"horizon {horizon} is below t0 {t0}")
    n = int(math.floor(math.log(horizon / t0) / math.log(q) + 1e-12))
    times = t0 * q ** np.arange(n + 1, dtype=np.float64)
    times = times[times <= horizon]
    if include_horizon and times[-1] < horizon:
        times = np.append(times, float(horizon))
    extra = [float(t) for t in extra if t0 <= t <= horizon]
    if extra:
        times = np.unique(np.concatenate([times, extra]))
    return times


@dataclass(frozen=True, eq=False)
class CheckpointSeries:
    """|W_{t_k}|_1 / phi(t_k) along geometric checkpoints, with its running max."""

    walk: str
    q: float
    t0: float
    times: np.ndarray
    positions: np.ndarray
    censored: bool = False
    trial: int = 0

    @property
    def l1(self) -> np.ndarray:
        return np.abs(self.positions).sum(axis=1)

    @property
    def phi(self) -> np.ndarray:
        return phi(self.times) if len(self.times) else np.empty(0)

    @property
    def ratio(self) -> np.ndarray:
        return self.l1 / self.phi if len(self.times) else np.empty(0)

    @property
    def runmax(self) -> np.ndarray:
        return np.maximum.accumulate(self.ratio) if len(self.times) else np.empty(0)

    def runmax_at(self, horizon: float) -> float:
        k = int(np.searchsorted(self.times, horizon, side="right")) - 1
        if k < 0:
            raise ValueError(f"no checkpoint at or below {horizon}")
        return float(self.runmax[k])

    def rows(self):
        """(trial, k, t, l1, phi, ratio, runmax) tuples."""
        for k, row in enumerate(zip(self.times, self.l1, self.phi, self.ratio, self.runmax)):
            yield (self.trial, k, *row)


def track_checkpoints(
    traj: CoupledTrajectory | np.ndarray,
    walk: str = "ctsrw",
    q: float = 2.0,
    t0: float = 16.0,
    horizon: float = 1e4,
    trial: int = 0,
    include_horizon: bool = True,
    extra_times: Sequence[float] = (),
) -> CheckpointSeries:
    """Evaluate one walk of a coupled trajectory on the grid t0 q^k <= horizon.

    ``ctsrw`` reads X_t, ``blind`` reads Y_n and ``myopic`` reads Z_n. A plain
    (n+1, d) site path is read directly at integer times. Discrete clocks use
    floor(t_k). Censored trajectories are cut before the censoring time.
    """
    if walk not in WALKS:
        raise ValueError(f"walk must be one of {WALKS}")
    times = checkpoint_times(q, t0, horizon, include_horizon, extra_times)
    if walk != "ctsrw":
        times = np.unique(np.floor(times))
        if times[0] <= math.e:
            raise ValueError("discrete checkpoints must exceed e; raise t0")
    censored = False
    if isinstance(traj, CoupledTrajectory):
        cut = traj.censor_time(walk)
        if cut <= horizon:
            censored = True
            times = times[times < cut]
        if walk == "ctsrw":
            pos = x_path(traj, times)
        elif walk == "blind":
            pos = y_path(traj, times.astype(np.int64))
        else:
            if times.size and times[-1] > traj.n_jumps:
                raise ValueError(f"myopic horizon {times[-1]} exceeds {traj.n_jumps} jumps")
            pos = traj.z[times.astype(np.int64)]
    else:
        path = np.asarray(traj)
        if walk == "ctsrw":
            raise ValueError("a plain path has no continuous clock")
        if times[-1] >= len(path):
            raise ValueError(f"path of {len(path) - 1} steps is shorter than horizon {horizon}")
        pos = path[times.astype(np.int64)]
    return CheckpointSeries(walk, q, t0, times, np.asarray(pos, dtype=np.int64), censored, trial)


@dataclass(frozen=True)
class LilEstimate:
    """Spread of per-trial running maxima at a common horizon."""

    values: tuple[float, ...]
    median: float
    mean: float
    band: tuple[float, float]
    n_trials: int
    n_censored: int
    metadata: dict = field(default_factory=dict)

    @property
    def censoring_rate(self) -> float:
        total = self.n_trials + self.n_censored
        return self.n_censored / total if total else 0.0

    def summary(self) -> dict:
        return {
            "estimate": self.median,
            "mean": self.mean,
            "band90": list(self.band),
            "trials": self.n_trials,
            "censored": self.n_censored,
            "censoring_rate": self.censoring_rate,
            **self.metadata,
        }


def estimate_lil_constant(
    series: Sequence[CheckpointSeries], horizon: float | None = None, min_trials: int = 30, **metadata
) -> LilEstimate:
    """Median of the running maxima at ``horizon``; censored series are counted, not used.

    Any finite-horizon functional underestimates the limsup; the estimate is a
    stabilization diagnostic, not the limit itself.
    """
    kept, censored = [], 0
    for s in series:
        if s.censored and (horizon is None or len(s.times) == 0 or s.times[-1] < horizon):
            censored += 1
            continue
        if horizon is not None and s.times[-1] < horizon:
            raise ValueError(f"series of trial {s.trial} stops at {s.times[-1]} before horizon {horizon}")
        kept.append(s.runmax_at(horizon) if horizon is not None else float(s.runmax[-1]))
    if len(kept) < min_trials:
        raise ValueError(f"only {len(kept)} uncensored trials, need {min_trials}")
    values = np.asarray(kept)
    lo, hi = np.quantile(values, [0.05, 0.95])
    if horizon is not None:
        metadata.setdefault("horizon", float(horizon))
    metadata.setdefault("caveat", "finite-horizon running max; underestimates the limsup")
    return LilEstimate(
        tuple(float(v) for v in values), float(np.median(values)), float(values.mean()),
        (float(lo), float(hi)), len(kept), censored, metadata,
    )


@dataclass(frozen=True, eq=False)
class IncrementDiagnostics:
    times: np.ndarray  # t_n, n >= 1
    increments: np.ndarray  # D_n = W_{t_n} - W_{t_{n-1}}
    threshold: np.ndarray  # gamma * phi(t_n)
    big_increment: np.ndarray  # C_n: |D_n| > gamma phi(t_n)
    in_annulus: np.ndarray  # gamma phi(t_n) < |W_{t_n}| < kappa gamma phi(t_n)


def increment_diagnostics(series: CheckpointSeries, gamma: float, kappa: float) -> IncrementDiagnostics:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    incr = np.diff(series.positions, axis=0)
    size = np.abs(incr).sum(axis=1)
    thr = gamma * series.phi[1:]
    norm = series.l1[1:]
    with np.errstate(invalid="ignore"):
        upper = kappa * thr
    return IncrementDiagnostics(
        series.times[1:], incr, thr, size > thr, (norm > thr) & (norm < upper)
    )


# --------------------------------------------------------------- heat kernel


@dataclass(frozen=True, eq=False)
class TransitionDensity:
    """Endpoint histogram of many walks from a common start."""

    t: float
    sites: np.ndarray  # (m, d) distinct endpoints (wrapped into the box)
    counts: np.ndarray  # (m,)
    trials: int
    censored: int = 0
    walk: str = "myopic"

    def probabilities(self) -> dict[tuple[int, ...], float]:
        total = self.counts.sum()
        return {tuple(int(c) for c in s): float(n) / total for s, n in zip(self.sites, self.counts)}

    def __add__(self, other: "TransitionDensity") -> "TransitionDensity":
        if (self.t, self.walk) != (other.t, other.walk):
            raise ValueError("cannot merge densities at different times or walks")
        return _histogram(
            self.t, np.concatenate([self.sites, other.sites]), np.concatenate([self.counts, other.counts]),
            self.trials + other.trials, self.censored + other.censored, self.walk,
        )


def _histogram(t, sites, weights, trials, censored, walk) -> TransitionDensity:
    if len(sites) == 0:
        return TransitionDensity(t, np.empty((0, 0), np.int64), np.empty(0, np.int64), trials, censored, walk)
    uniq, inverse = np.unique(sites, axis=0, return_inverse=True)
    counts = np.bincount(inverse.reshape(-1), weights=weights).astype(np.int64)
    return TransitionDensity(t, uniq.astype(np.int64), counts, trials, censored, walk)


def empirical_transition_density(
    cluster: ClusterView, t: float, trials: int, seed: int = 0, walk: str = "myopic", block_size: int = 4096,
    first_block: int = 0,
) -> TransitionDensity:
    """Endpoint histogram p_t(0, .) from ``trials`` walks started at the origin.

    ``myopic`` runs t jumps, ``ctsrw`` runs continuous time t. Walkers are
    drawn in blocks, each from its own stream ``(seed, block)``.
    """
    if walk not in ("myopic", "ctsrw"):
        raise ValueError("walk must be 'myopic' or 'ctsrw'")
    spec = cluster.spec
    if t == 0:
        return TransitionDensity(t, np.zeros((1, spec.d), np.int64), np.array([trials]), trials, 0, walk)
    parts, censored = [], 0
    done = 0
    block = first_block
    while done < trials:
        m = min(block_size, trials - done)
        if walk == "myopic":
            ends, cens = myopic_endpoints(cluster, int(t), m, seed, block)
            censored += int(cens.sum())
            ends = ends[~cens]
        else:
            ends, _ = coupled_endpoints(cluster, float(t), 0, m, seed, block)
        parts.append(ends)
        done += m
        block += 1
    ends = np.concatenate(parts).astype(np.int64)
    return _histogram(t, ends, None, trials, censored, walk)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def _linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2, len(x))


def _shell_sizes(cluster: ClusterView, parity: int | None) -> np.ndarray:
    norms = np.abs(cluster.sites()).sum(axis=1)
    if parity is not None:
        norms = norms[norms % 2 == parity]
    return np.bincount(norms)


def gaussian_fit(
    density: TransitionDensity | Mapping[tuple[int, ...], float],
    t: float,
    *,
    min_hits: int = 50,
    binning: str = "site",
    cluster: ClusterView | None = None,
    min_bins: int = 5,
) -> LinearFit:
    """Least squares of log p against |y|_1^2 / t.

    ``binning="site"`` uses every site as a bin; ``binning="shell"`` pools
    the L1 shells |y|_1 = r and divides by the number of cluster sites that
    can be occupied at time t (same parity for the myopic walk). Only bins
    with at least ``min_hits`` hits are admitted when counts are known.
    """
    if isinstance(density, TransitionDensity):
        total = density.counts.sum()
        sites, hits = density.sites, density.counts
        probs = hits / total
        parity = int(density.t) % 2 if density.walk == "myopic" else None
    else:
        items = [(s, p) for s, p in density.items() if p > 0]
        sites = np.array([s for s, _ in items], dtype=np.int64)
        probs = np.array([p for _, p in items], dtype=np.float64)
        hits = None
        parity = None
    norms = np.abs(sites).sum(axis=1)
    if binning == "site":
        keep = hits >= min_hits if hits is not None else probs > 0
        x = norms[keep] ** 2 / t
        y = np.log(probs[keep])
    elif binning == "shell":
        if cluster is None:
            raise ValueError("shell binning needs the cluster to count shell sites")
        sizes = _shell_sizes(cluster, parity)
        shell_mass = np.bincount(norms, weights=probs, minlength=len(sizes))
        shell_hits = np.bincount(norms, weights=hits, minlength=len(sizes)) if hits is not None else None
        r = np.arange(len(shell_mass))
        sizes = np.pad(sizes, (0, max(0, len(shell_mass) - len(sizes))))
        keep = (sizes > 0) & (shell_mass > 0)
        if shell_hits is not None:
            keep &= shell_hits >= min_hits
        x = r[keep] ** 2 / t
        y = np.log(shell_mass[keep] / sizes[keep])
    else:
        raise ValueError("binning must be 'site' or 'shell'")
    if len(x) < min_bins:
        raise ValueError(f"only {len(x)} admissible bins, need {min_bins}")
    return _linear_fit(np.asarray(x, float), np.asarray(y, float))


# ------------------------------------------------------------ volume growth


def fit_power_law(radii: Sequence[float], volumes: Sequence[float]) -> LinearFit:
    """log volume against log radius; the slope is the growth exponent."""
    r = np.asarray(radii, dtype=np.float64)
    v = np.asarray(volumes, dtype=np.float64)
    if len(np.unique(r)) < 2:
        raise ValueError("need at least two distinct radii for a growth exponent")
    return _linear_fit(np.log(r), np.log(v))


@dataclass(frozen=True, eq=False)
class VolumeGrowth:
    fit: LinearFit
    radii: np.ndarray
    mean_volume: np.ndarray
    clusters: int


def volume_growth_fit(clusters: Sequence[ClusterView], radii: Sequence[int]) -> VolumeGrowth:
    """Regress log of the cluster-averaged ball volume on log n.

    Radii whose ball touches the box face are dropped for that cluster.
    """
    radii = sorted(int(r) for r in radii)
    if len(radii) < 2:
        raise ValueError("need at least two radii")
    per_radius: dict[int, list[int]] = {r: [] for r in radii}
    for c in clusters:
        for r, vol in ball_volumes(c, c.origin, radii).items():
            if vol is not None:
                per_radius[r].append(vol)
    used = [r for r in radii if per_radius[r]]
    means = np.array([np.mean(per_radius[r]) for r in used])
    return VolumeGrowth(fit_power_law(used, means), np.array(used), means, len(clusters))


# ----------------------------------------------------- displacement tails


@dataclass(frozen=True, eq=False)
class TailCurve:
    n: float
    gammas: np.ndarray
    survival: np.ndarray
    maxima: np.ndarray
    censored: int

    @property
    def phi_n(self) -> float:
        return phi(self.n)


def jump_budget(horizon: float) -> int:
    """Jumps that cover continuous time ``horizon`` except with vanishing probability."""
    return int(math.ceil(horizon + 8.0 * math.sqrt(horizon) + 64))


def displacement_tail(
    cluster: ClusterView,
    n: float,
    gammas: Sequence[float],
    trials: int,
    seed: int = 0,
    first_trial: int = 0,
    field: DistanceField | None = None,
) -> TailCurve:
    """Empirical P(max_{s <= n} d(0, X_s) > gamma phi(n)) over continuous-time trials."""
    if n <= math.e:
        raise ValueError("n must exceed e")
    g = np.asarray(gammas, dtype=np.float64)
    if np.any(g < 0) or np.any(np.diff(g) <= 0):
        raise ValueError("gamma grid must be nonnegative and increasing")
    budget = jump_budget(n)
    if field is None:
        field = distance_field(cluster, cluster.origin, budget)
    maxima, censored = [], 0
    for i in range(first_trial, first_trial + trials):
        traj = run_coupled(cluster, cluster.origin, budget, seed, i)
        if traj.censor_time("ctsrw") <= n:
            censored += 1
            continue
        maxima.append(max_chemical_displacement(traj, cluster, traj.jump_count_at(n), field=field))
    m = np.asarray(maxima, dtype=np.float64)
    thresholds = g * phi(n)
    survival = (m[None, :] > thresholds[:, None]).mean(axis=1) if m.size else np.full(len(g), np.nan)
    return TailCurve(float(n), g, survival, m, censored)


def tail_from_maxima(n: float, gammas: Sequence[float], maxima, censored: int = 0) -> TailCurve:
    g = np.asarray(gammas, dtype=np.float64)
    m = np.asarray(maxima, dtype=np.float64)
    survival = (m[None, :] > (g * phi(n))[:, None]).mean(axis=1)
    return TailCurve(float(n), g, survival, m, censored)
