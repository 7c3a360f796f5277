"""Synchronization diagnostics for CTC networks.

Everything here works on m_z time series sampled on a uniform grid:
Pearson correlation matrices and their mean, Hann-windowed FFT peaks, a
two-trajectory (Benettin) largest Lyapunov exponent, and a rule-based regime
classifier built on top of them.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse.csgraph import connected_components

from .errors import LyapunovError
from .meanfield import TrajectoryRecord

__all__ = [
    "REGIMES",
    "ClassifierConfig",
    "Correlation",
    "Spectra",
    "LyapunovResult",
    "SyncReport",
    "pearson_matrix",
    "mean_pearson",
    "block_means",
    "dominant_frequencies",
    "max_lyapunov",
    "norm_projector",
    "norm_guard",
    "sync_clusters",
    "classify_regime",
    "analyze",
]

REGIMES = (
    "unsynchronized",
    "chimera",
    "cluster-sync",
    "chimera+partial-oscillation-death",
    "oscillation-death",
    "chaotic",
    "complete-sync",
)

Window = tuple[float, float]


@dataclass(frozen=True)
class ClassifierConfig:
    eps_lambda: float = 1e-2
    edge: float = 0.9
    complete: float = 0.95
    unsync: float = 0.05
    cover: float = 0.9
    dead_var: float = 1e-12

    def __post_init__(self):
        if not (0 < self.unsync < self.complete <= 1 and 0 < self.edge <= 1):
            raise ValueError("inconsistent classifier thresholds")
        if self.eps_lambda < 0 or self.dead_var < 0 or not 0 < self.cover <= 1:
            raise ValueError("thresholds must be non-negative")


def _windowed(series, t, window):
    x = np.atleast_2d(np.asarray(series, dtype=float))
    if t is None:
        if window is not None:
            raise ValueError("a window needs the time grid")
        return x, None
    t = np.asarray(t, dtype=float)
    if t.size != x.shape[1]:
        raise ValueError("time grid and series lengths differ")
    if window is None:
        return x, (float(t[0]), float(t[-1]))
    t0, t1 = window
    if not t1 > t0:
        raise ValueError(f"empty analysis window {window}")
    sel = (t >= t0 - 1e-9) & (t <= t1 + 1e-9)
    if sel.sum() < 2:
        raise ValueError(f"window {window} holds fewer than two samples")
    return x[:, sel], (float(t0), float(t1))


@dataclass(frozen=True)
class Correlation:
    matrix: np.ndarray
    dead: np.ndarray  # per-series flag, variance below the floor
    degenerate: np.ndarray  # off-diagonal entries involving a dead series
    window: Window | None

    @property
    def mean(self) -> float:
        return mean_pearson(self.matrix)


def pearson_matrix(series, *, t=None, window: Window | None = None,
                   dead_var: float = 1e-12) -> Correlation:
    """Pairwise Pearson coefficients of the rows of ``series``.

    Rows whose variance over the window is below ``dead_var`` have no defined
    correlation; their off-diagonal entries are set to 0 and flagged.
    """
    x, win = _windowed(series, t, window)
    x = x - x.mean(axis=1, keepdims=True)
    var = np.mean(x * x, axis=1)
    dead = var < dead_var
    scale = np.where(dead, 1.0, np.sqrt(var))
    z = x / scale[:, None]
    c = z @ z.T / x.shape[1]
    c = np.clip(0.5 * (c + c.T), -1.0, 1.0)
    degenerate = dead[:, None] | dead[None, :]
    np.fill_diagonal(degenerate, False)
    c[degenerate] = 0.0
    np.fill_diagonal(c, 1.0)
    return Correlation(matrix=c, dead=dead, degenerate=degenerate, window=win)


def mean_pearson(c) -> float:
    """Mean of the strictly upper-triangular entries (NaN for a 1x1 matrix)."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if n < 2:
        return float("nan")
    return float(c[np.triu_indices(n, 1)].mean())


def block_means(c, labels) -> dict:
    """Mean off-diagonal correlation inside each labelled group."""
    c = np.asarray(c, dtype=float)
    labels = np.asarray(labels)
    out = {}
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        out[lab.item() if hasattr(lab, "item") else lab] = mean_pearson(c[np.ix_(idx, idx)])
    return out


@dataclass(frozen=True)
class Spectra:
    peak: np.ndarray  # dominant frequency per series, cycles per time unit
    freq: np.ndarray
    power: np.ndarray  # |FFT|, each row scaled to unit maximum
    bin_width: float
    dead: np.ndarray
    window: Window | None


def dominant_frequencies(series, dt: float, *, t=None, window: Window | None = None,
                         dead_var: float = 1e-12) -> Spectra:
    """Peak of the mean-subtracted, Hann-windowed FFT magnitude of each row."""
    if dt <= 0:
        raise ValueError("sampling step must be positive")
    x, win = _windowed(series, t, window)
    x = x - x.mean(axis=1, keepdims=True)
    dead = np.mean(x * x, axis=1) < dead_var
    size = x.shape[1]
    spec = np.abs(np.fft.rfft(x * np.hanning(size), axis=1))
    freq = np.fft.rfftfreq(size, dt)
    spec[:, 0] = 0.0
    spec[dead] = 0.0
    peak = np.where(dead, 0.0, freq[np.argmax(spec, axis=1)])
    top = spec.max(axis=1, keepdims=True)
    power = np.divide(spec, top, out=np.zeros_like(spec), where=top > 0)
    return Spectra(peak=peak, freq=freq, power=power, bin_width=1.0 / (size * dt),
                   dead=dead, window=win)


@dataclass(frozen=True)
class LyapunovResult:
    value: float
    times: np.ndarray  # end of each counted renormalization interval
    running: np.ndarray  # running estimate at those times
    plateau: bool
    spread: float  # max - min of the running estimate over the last quarter
    trajectory: TrajectoryRecord | None = None


def norm_projector(n: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Rescale each CTC of a companion state onto its reference norm.

    Per-CTC norms are conserved by the network flow, so displacements along
    them neither grow nor decay. Removing them keeps the Lyapunov estimate on
    the dynamically relevant directions.
    """
    def project(companion, reference):
        c = companion.reshape(n, 3)
        r = reference.reshape(n, 3)
        nc = np.linalg.norm(c, axis=1)
        nr = np.linalg.norm(r, axis=1)
        scale = np.divide(nr, nc, out=np.ones_like(nr), where=nc > 0)
        return (c * scale[:, None]).reshape(companion.shape)
    return project


def norm_guard(n: int, tol: float = 1e-6) -> Callable[[np.ndarray], bool]:
    """True while every CTC satisfies |m| <= 1 + tol."""
    return lambda y: bool(np.all(np.linalg.norm(y.reshape(n, 3), axis=1) <= 1 + tol))


def max_lyapunov(
    fun: Callable[[np.ndarray], np.ndarray],
    y0,
    horizon: float,
    *,
    tau: float = 1.0,
    d0: float = 1e-8,
    transient: float = 200.0,
    project: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    physical: Callable[[np.ndarray], bool] | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    offset_tol: float = 1e-7,
    seed: int | None = 0,
    sample_dt: float | None = None,
    plateau_tol: float = 2e-3,
) -> LyapunovResult:
    """Largest Lyapunov exponent by two-trajectory renormalization.

    The companion is carried as the scaled offset ``w = (y' - y) / d0``, which
    keeps the integrator's error control meaningful for tiny separations.
    Its derivative is a difference quotient with roughly ``eps / d0``
    rounding noise, so the offset gets its own, looser, ``offset_tol``.
    Every ``tau`` the separation is measured, logged (after ``transient``) and
    reset to ``d0``. With ``sample_dt`` the reference trajectory is also
    returned on that grid.
    """
    y0 = np.asarray(y0, dtype=float).ravel()
    if not horizon > transient >= 0 or tau <= 0 or d0 <= 0:
        raise ValueError("need horizon > transient >= 0, tau > 0 and d0 > 0")
    dim = y0.size
    rng = np.random.default_rng(seed)

    def reset(y, w):
        if project is not None:
            w = (project(y + d0 * w, y) - y) / d0
        norm = np.linalg.norm(w)
        if not np.isfinite(norm) or norm == 0:
            raise LyapunovError("separation vanished or became non-finite")
        return w / norm

    def joint(t, z):
        y, w = z[:dim], z[dim:]
        fy = np.asarray(fun(y), dtype=float).ravel()
        fc = np.asarray(fun(y + d0 * w), dtype=float).ravel()
        with np.errstate(over="ignore", invalid="ignore"):
            return np.concatenate([fy, (fc - fy) / d0])

    rtols = np.concatenate([np.full(dim, rtol), np.full(dim, offset_tol)])
    atols = np.concatenate([np.full(dim, atol), np.full(dim, offset_tol)])
    w = reset(y0, rng.standard_normal(dim))
    y = y0
    n_steps = int(round(horizon / tau))
    log_sum, counted = 0.0, 0.0
    times, running, samples, sample_t = [], [], [], []
    if sample_dt is not None:
        grid = np.arange(0.0, horizon + 1e-9 * sample_dt, sample_dt)
    for k in range(n_steps):
        ta, tb = k * tau, (k + 1) * tau
        t_eval = None
        if sample_dt is not None:
            lo = 0 if k == 0 else np.searchsorted(grid, ta + 1e-9 * sample_dt, "left")
            hi = np.searchsorted(grid, tb + 1e-9 * sample_dt, "left")
            t_eval = np.concatenate([grid[lo:hi], [tb]]) if hi > lo else [tb]
            t_eval = np.unique(np.clip(t_eval, ta, tb))
        sol = solve_ivp(joint, (ta, tb), np.concatenate([y, w]), method="DOP853",
                        rtol=rtols, atol=atols, t_eval=t_eval)
        if sol.status != 0:
            raise LyapunovError(f"integration failed at t={sol.t[-1]!r}: {sol.message}")
        if sample_dt is not None:
            keep = np.isin(sol.t, grid[lo:hi])
            samples.append(sol.y[:dim, keep].T)
            sample_t.append(sol.t[keep])
        y, w = sol.y[:dim, -1], sol.y[dim:, -1]
        growth = np.linalg.norm(w)
        if not np.isfinite(growth) or growth < 1e-300:
            raise LyapunovError(f"renormalization underflow at t={tb!r}")
        if physical is not None and not (physical(y) and physical(y + d0 * w)):
            raise LyapunovError(f"trajectory left the physical region at t={tb!r}")
        if ta >= transient - 1e-12:
            log_sum += np.log(growth)
            counted += tau
            times.append(tb)
            running.append(log_sum / counted)
        w = reset(y, w)
    running = np.array(running)
    tail = running[int(0.75 * running.size):]
    spread = float(tail.max() - tail.min()) if tail.size else float("nan")
    traj = None
    if sample_dt is not None:
        t_all = np.concatenate(sample_t)
        traj = TrajectoryRecord(t_all, np.concatenate(samples).reshape(t_all.size, -1, 3)
                                if dim % 3 == 0 else np.concatenate(samples)[:, None, :])
    return LyapunovResult(value=float(running[-1]), times=np.array(times), running=running,
                          plateau=bool(spread < plateau_tol), spread=spread, trajectory=traj)


def sync_clusters(c, *, edge: float = 0.9, exclude=None) -> list[np.ndarray]:
    """Connected components of size >= 2 in the graph ``|C_ab| >= edge``.

    Series flagged in ``exclude`` (dead oscillators) never join a cluster.
    """
    c = np.asarray(c, dtype=float)
    adj = np.abs(c) >= edge
    np.fill_diagonal(adj, False)
    if exclude is not None:
        ex = np.asarray(exclude, dtype=bool)
        adj[ex, :] = False
        adj[:, ex] = False
    _, comp = connected_components(adj, directed=False)
    groups = [np.flatnonzero(comp == k) for k in np.unique(comp)]
    groups = [g for g in groups if g.size >= 2]
    return sorted(groups, key=lambda g: (-g.size, g[0]))


def classify_regime(corr: Correlation, lyapunov: float | None = None, *,
                    spectra: Spectra | None = None,
                    config: ClassifierConfig = ClassifierConfig()) -> str:
    """Rule-based regime label from the correlation matrix and Lyapunov exponent.

    With no Lyapunov exponent the sign rules are skipped and dead oscillators
    alone decide the death regimes.
    """
    if spectra is not None and spectra.window != corr.window:
        raise ValueError(f"diagnostics use different windows: {corr.window} vs {spectra.window}")
    eps = config.eps_lambda
    dead = corr.dead
    n = dead.size
    if lyapunov is not None and not np.isfinite(lyapunov):
        raise ValueError("Lyapunov exponent must be finite")
    if lyapunov is not None and lyapunov > eps:
        return "chaotic"
    if lyapunov is not None and lyapunov < -eps:
        return "oscillation-death" if dead.all() else "chimera+partial-oscillation-death"
    if dead.all():
        return "oscillation-death"
    if dead.any():
        return "chimera+partial-oscillation-death"
    cbar = mean_pearson(corr.matrix)
    if n < 2 or cbar >= config.complete:
        return "complete-sync"
    if cbar <= config.unsync:
        return "unsynchronized"
    clusters = sync_clusters(corr.matrix, edge=config.edge, exclude=dead)
    covered = sum(g.size for g in clusters)
    if len(clusters) >= 2 and covered >= config.cover * n:
        return "cluster-sync"
    if clusters and n - covered >= 2:
        return "chimera"
    if clusters:
        # one cluster holding all but at most one member
        return "complete-sync"
    return "unsynchronized"


@dataclass
class SyncReport:
    pearson: np.ndarray
    mean_pearson: float
    dead: np.ndarray
    degenerate: np.ndarray
    peak: np.ndarray
    freq: np.ndarray
    power: np.ndarray
    lyapunov: float | None
    regime: str
    window: Window
    clusters: list[list[int]]
    thresholds: ClassifierConfig = field(default_factory=ClassifierConfig)
    lyapunov_plateau: bool | None = None

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "mean_pearson": None if np.isnan(self.mean_pearson) else self.mean_pearson,
            "lyapunov": self.lyapunov,
            "lyapunov_plateau": self.lyapunov_plateau,
            "window": list(self.window),
            "n": int(self.pearson.shape[0]),
            "pearson": self.pearson.tolist(),
            "dead": np.flatnonzero(self.dead).tolist(),
            "degenerate_pairs": int(np.count_nonzero(np.triu(self.degenerate, 1))),
            "peak_frequency": self.peak.tolist(),
            "clusters": self.clusters,
            "thresholds": asdict(self.thresholds),
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    def write_pearson_csv(self, path) -> Path:
        path = Path(path)
        np.savetxt(path, self.pearson, delimiter=",", fmt="%.17g")
        return path

    def write_spectra_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f"] + [f"ctc_{a}" for a in range(self.power.shape[0])])
            for k, f in enumerate(self.freq):
                w.writerow([repr(float(f))] + [repr(float(v)) for v in self.power[:, k]])
        return path


def analyze(record: TrajectoryRecord, window: Window | None = None, *,
            lyapunov: LyapunovResult | float | None = None,
            config: ClassifierConfig = ClassifierConfig()) -> SyncReport:
    """Correlation, spectra and regime for the m_z series of ``record``."""
    corr = pearson_matrix(record.mz, t=record.t, window=window, dead_var=config.dead_var)
    spec = dominant_frequencies(record.mz, record.dt, t=record.t, window=window,
                                dead_var=config.dead_var)
    lam = lyapunov.value if isinstance(lyapunov, LyapunovResult) else lyapunov
    plateau = lyapunov.plateau if isinstance(lyapunov, LyapunovResult) else None
    regime = classify_regime(corr, lam, spectra=spec, config=config)
    clusters = sync_clusters(corr.matrix, edge=config.edge, exclude=corr.dead)
    return SyncReport(
        pearson=corr.matrix, mean_pearson=corr.mean, dead=corr.dead,
        degenerate=corr.degenerate, peak=spec.peak, freq=spec.freq, power=spec.power,
        lyapunov=lam, regime=regime, window=corr.window,
        clusters=[g.tolist() for g in clusters], thresholds=config,
        lyapunov_plateau=plateau,
    )
