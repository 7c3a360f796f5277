"""Reproducible experiments: ensembles, parameter grids, size scans.

Each CTC is given a target frequency; it is started at ``(0, 0, m)`` with the
sector norm ``m`` that makes the uncoupled oscillation run at that frequency.
Random draws come from ``numpy.random.SeedSequence`` children, one per
subgroup, so adding a group never perturbs the draws of the others.
"""
from __future__ import annotations

import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import __version__
from .errors import NumericalError
from .liouvillian import ModelParams, dominant_over_space, fit_inverse_n
from .meanfield import NetworkConfig, initial_states, m_for_frequency, rhs_network
from .sync import ClassifierConfig, SyncReport, analyze, max_lyapunov, norm_guard, norm_projector

__all__ = [
    "GroupSpec",
    "EnsembleSpec",
    "Ensemble",
    "PointRun",
    "SweepPlan",
    "build_ensemble",
    "uniform_windows_spec",
    "gaussian_pair_spec",
    "run_point",
    "run_grid",
    "n_scaling",
    "group_amplitude",
    "seeding_scan",
    "find_melting",
    "worker_count",
    "WORKERS_ENV",
]

WORKERS_ENV = "CTCSYNC_WORKERS"
MAX_DRAWS = 10_000


def _reject_unknown(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}")


@dataclass(frozen=True)
class GroupSpec:
    """One subgroup of CTCs with its target-frequency distribution."""

    count: int
    dist: str = "uniform"  # "uniform" on [low, high] or "gaussian"(mean, sigma)
    low: float | None = None
    high: float | None = None
    mean: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if not isinstance(self.count, (int, np.integer)) or self.count < 1:
            raise ValueError("a subgroup needs at least one member")
        if self.dist == "uniform":
            if self.low is None or self.high is None or not self.high >= self.low:
                raise ValueError("uniform subgroup needs low <= high")
        elif self.dist == "gaussian":
            if self.mean is None or self.sigma is None or self.sigma < 0:
                raise ValueError("gaussian subgroup needs mean and sigma >= 0")
        else:
            raise ValueError(f"unknown distribution {self.dist!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "GroupSpec":
        _reject_unknown(cls, data, "group")
        return cls(**data)

    def sample(self, rng: np.random.Generator, omega: float) -> np.ndarray:
        """Draw ``count`` frequencies in ``(0, omega)``, rejecting the rest."""
        if self.dist == "uniform":
            lo, hi = self.low, self.high
            if hi <= 0 or lo >= omega:
                raise ValueError(f"[{lo}, {hi}] lies outside (0, {omega})")
            draw = lambda k: rng.uniform(lo, hi, k)
        else:
            mu, sd = self.mean, self.sigma
            if sd == 0:
                if not 0 < mu < omega:
                    raise ValueError(f"mean {mu} lies outside (0, {omega})")
                return np.full(self.count, float(mu))
            draw = lambda k: rng.normal(mu, sd, k)
        out = np.empty(0)
        attempts = 0
        while out.size < self.count:
            x = draw(self.count)
            attempts += self.count
            out = np.concatenate([out, x[(x > 0) & (x < omega)]])
            if attempts > MAX_DRAWS * self.count and out.size < self.count:
                raise ValueError("distribution has (almost) no mass inside (0, Omega)")
        return out[: self.count]


@dataclass(frozen=True)
class EnsembleSpec:
    groups: tuple[GroupSpec, ...]
    omega: float = 0.9
    kappa: float = 1.0
    gamma: float = 0.0
    topology: str = "all"  # "all", "intra" or "none"
    seed: int = 0
    jitter: float = 0.0  # polar tilt of the initial states, radians

    def __post_init__(self):
        groups = tuple(g if isinstance(g, GroupSpec) else GroupSpec.from_dict(g)
                       for g in self.groups)
        if not groups:
            raise ValueError("an ensemble needs at least one subgroup")
        object.__setattr__(self, "groups", groups)
        ModelParams(self.omega, self.kappa)
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise ValueError("coupling must be finite and non-negative")
        if self.topology not in ("all", "intra", "none"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def n(self) -> int:
        return sum(g.count for g in self.groups)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = [{k: v for k, v in g.items() if v is not None} for g in d["groups"]]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleSpec":
        _reject_unknown(cls, data, "ensemble")
        data = dict(data)
        data["groups"] = tuple(GroupSpec.from_dict(g) for g in data.get("groups", ()))
        return cls(**data)

    def replace(self, **kw) -> "EnsembleSpec":
        d = self.to_dict()
        d.update(kw)
        return EnsembleSpec.from_dict(d)


@dataclass(frozen=True)
class Ensemble:
    spec: EnsembleSpec
    config: NetworkConfig
    state0: np.ndarray  # (n, 3)
    frequencies: np.ndarray  # realized target angular frequencies
    m: np.ndarray
    labels: np.ndarray


def build_ensemble(spec: EnsembleSpec) -> Ensemble:
    params = ModelParams(spec.omega, spec.kappa)
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.groups) + 1)
    freqs = np.concatenate([g.sample(np.random.default_rng(s), spec.omega)
                            for g, s in zip(spec.groups, seeds)])
    labels = np.concatenate([np.full(g.count, k) for k, g in enumerate(spec.groups)])
    ms = m_for_frequency(freqs, params)
    state0 = initial_states(ms, jitter=spec.jitter, rng=np.random.default_rng(seeds[-1]))
    config = NetworkConfig.uniform(spec.n, omega=spec.omega, kappa=spec.kappa,
                                   gamma=spec.gamma, labels=labels, topology=spec.topology)
    return Ensemble(spec=spec, config=config, state0=state0, frequencies=freqs, m=ms,
                    labels=labels)


def uniform_windows_spec(windows=((0.2, 0.25), (0.75, 0.85)), n: int = 20, *,
                         gamma: float = 0.35, topology: str = "all", seed: int = 0,
                         omega: float = 0.9, kappa: float = 1.0) -> EnsembleSpec:
    """Equal-sized subgroups with uniformly drawn target frequencies."""
    if n % len(windows):
        raise ValueError("n must split evenly across the windows")
    groups = tuple(GroupSpec(n // len(windows), "uniform", low=a, high=b) for a, b in windows)
    return EnsembleSpec(groups, omega=omega, kappa=kappa, gamma=gamma, topology=topology,
                        seed=seed)


def gaussian_pair_spec(gamma: float, delta: float, *, n: int = 100, sigma: float = 0.1,
                       base: float = 0.1, seed: int = 0, omega: float = 0.9,
                       kappa: float = 1.0) -> EnsembleSpec:
    """Two Gaussian subgroups centred at ``base`` and ``base + delta``."""
    if n % 2:
        raise ValueError("n must be even")
    groups = (GroupSpec(n // 2, "gaussian", mean=base, sigma=sigma),
              GroupSpec(n // 2, "gaussian", mean=base + delta, sigma=sigma))
    return EnsembleSpec(groups, omega=omega, kappa=kappa, gamma=gamma, seed=seed)


@dataclass
class PointRun:
    ensemble: Ensemble
    report: SyncReport
    trajectory: object  # TrajectoryRecord
    lyapunov: object | None  # LyapunovResult


def run_point(spec: EnsembleSpec, *, t_end: float = 1000.0, window=(200.0, 1000.0),
              dt: float = 0.1, lyapunov: bool = True, rtol: float = 1e-10,
              atol: float = 1e-12, classifier: ClassifierConfig = ClassifierConfig()) -> PointRun:
    """Integrate one ensemble and compute its synchronization report.

    With ``lyapunov=True`` the reference trajectory of the Lyapunov run is
    reused for the correlation analysis, so the network is integrated once.
    """
    from .meanfield import simulate_network

    ens = build_ensemble(spec)
    n = ens.config.n
    if lyapunov:
        lya = max_lyapunov(lambda y: rhs_network(y, ens.config), ens.state0, t_end,
                           transient=window[0], project=norm_projector(n),
                           physical=norm_guard(n), rtol=rtol, atol=atol, sample_dt=dt,
                           seed=spec.seed)
        traj = lya.trajectory
    else:
        lya = None
        traj = simulate_network(ens.state0, ens.config, t_end, dt=dt, rtol=rtol, atol=atol)
    report = analyze(traj, tuple(window), lyapunov=lya, config=classifier)
    return PointRun(ensemble=ens, report=report, trajectory=traj, lyapunov=lya)


def group_amplitude(run: PointRun, group: int = 0) -> dict:
    """Largest m_z standard deviation in a subgroup, absolute and per unit norm."""
    t = run.trajectory.t
    w0, w1 = run.report.window
    sel = (t >= w0 - 1e-9) & (t <= w1 + 1e-9)
    idx = np.flatnonzero(run.ensemble.labels == group)
    std = run.trajectory.mz[idx][:, sel].std(axis=1)
    return {"max_std": float(std.max()), "relative": float((std / run.ensemble.m[idx]).max())}


@dataclass
class SweepPlan:
    """A two-axis (gamma, delta) grid over Gaussian ensemble pairs.

    YAML schema (all keys optional except the axes)::

        name: fig4
        gamma: [0.0, 0.5, 1.0]
        delta: [0.1, 0.4]
        n: 100
        sigma: 0.1
        base: 0.1
        omega: 0.9
        kappa: 1.0
        seed: 0
        t_end: 1000
        window: [200, 1000]
        dt: 0.1
        lyapunov: true
        rtol: 1.0e-10
        atol: 1.0e-12
    """

    gamma: list[float]
    delta: list[float]
    name: str = "sweep"
    n: int = 100
    sigma: float = 0.1
    base: float = 0.1
    omega: float = 0.9
    kappa: float = 1.0
    seed: int = 0
    t_end: float = 1000.0
    window: list[float] = field(default_factory=lambda: [200.0, 1000.0])
    dt: float = 0.1
    lyapunov: bool = True
    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        self.gamma = [float(g) for g in self.gamma]
        self.delta = [float(d) for d in self.delta]
        self.window = [float(w) for w in self.window]
        if not self.gamma or not self.delta:
            raise ValueError("both axes need at least one value")
        if len(self.window) != 2 or not self.window[0] < self.window[1] <= self.t_end:
            raise ValueError("window must satisfy t0 < t1 <= t_end")
        for k in range(len(self.gamma)):
            for j in range(len(self.delta)):
                self.spec(k, j)

    def spec(self, i: int, j: int) -> EnsembleSpec:
        return gaussian_pair_spec(self.gamma[i], self.delta[j], n=self.n, sigma=self.sigma,
                                  base=self.base, seed=self.seed, omega=self.omega,
                                  kappa=self.kappa)

    def points(self):
        for i in range(len(self.gamma)):
            for j in range(len(self.delta)):
                yield i, j, f"g{i:03d}_d{j:03d}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepPlan":
        _reject_unknown(cls, data, "plan")
        return cls(**data)

    def to_yaml(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    @classmethod
    def from_yaml(cls, path) -> "SweepPlan":
        data = yaml.safe_load(Path(path).read_text())
        if not isinstance(data, dict):
            raise ValueError(f"{path}: plan must be a mapping")
        return cls.from_dict(data)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return value


def _execute_point(plan_dict: dict, i: int, j: int, point_dir: str) -> dict:
    plan = SweepPlan.from_dict(plan_dict)
    spec = plan.spec(i, j)
    out = Path(point_dir)
    out.mkdir(parents=True, exist_ok=True)
    entry = {"point": out.name, "gamma": plan.gamma[i], "delta": plan.delta[j]}
    try:
        run = run_point(spec, t_end=plan.t_end, window=plan.window, dt=plan.dt,
                        lyapunov=plan.lyapunov, rtol=plan.rtol, atol=plan.atol)
    except (NumericalError, ValueError) as exc:
        (out / "failed.json").write_text(json.dumps({
            **entry, "error": type(exc).__name__, "message": str(exc),
            "traceback": traceback.format_exc()}, indent=2))
        return {**entry, "status": "failed", "error": str(exc)}
    report = run.report.to_dict()
    report["provenance"] = {
        "spec": spec.to_dict(), "seed": spec.seed, "version": __version__,
        "tolerances": {"rtol": plan.rtol, "atol": plan.atol},
        "t_end": plan.t_end, "dt": plan.dt,
        "frequencies": run.ensemble.frequencies.tolist(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return {**entry, "status": "ok", "regime": run.report.regime,
            "mean_pearson": run.report.mean_pearson, "lyapunov": run.report.lyapunov}


def _write_heatmap(path: Path, plan: SweepPlan, values: np.ndarray):
    with path.open("w") as fh:
        fh.write("gamma\\delta," + ",".join(repr(d) for d in plan.delta) + "\n")
        for g, row in zip(plan.gamma, values):
            fh.write(repr(g) + "," + ",".join("" if np.isnan(v) else repr(float(v))
                                               for v in row) + "\n")


def run_grid(plan: SweepPlan, out_dir, *, workers: int | None = None, force: bool = False,
             point_fn: Callable | None = None) -> dict:
    """Run every grid point, persist reports and emit heatmap tables.

    Completed points (a ``report.json`` exists) are skipped unless ``force``.
    Failed points leave a ``failed.json`` and are retried on the next call.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan.to_yaml(out / "plan.yaml")
    point_fn = _execute_point if point_fn is None else point_fn
    workers = worker_count() if workers is None else workers
    todo = []
    for i, j, name in plan.points():
        if force or not (out / name / "report.json").exists():
            todo.append((i, j, name))
    plan_dict = plan.to_dict()
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(point_fn, plan_dict, i, j, str(out / name))
                       for i, j, name in todo]
            entries = [f.result() for f in futures]
    else:
        entries = [point_fn(plan_dict, i, j, str(out / name)) for i, j, name in todo]
    with (out / "index.jsonl").open("a") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
    cbar = np.full((len(plan.gamma), len(plan.delta)), np.nan)
    lyap = np.full_like(cbar, np.nan)
    regimes = [["" for _ in plan.delta] for _ in plan.gamma]
    failed = []
    for i, j, name in plan.points():
        path = out / name / "report.json"
        if not path.exists():
            failed.append(name)
            continue
        rep = json.loads(path.read_text())
        cbar[i, j] = rep["mean_pearson"]
        lyap[i, j] = np.nan if rep["lyapunov"] is None else rep["lyapunov"]
        regimes[i][j] = rep["regime"]
    _write_heatmap(out / "mean_pearson.csv", plan, cbar)
    _write_heatmap(out / "lyapunov.csv", plan, lyap)
    return {"mean_pearson": cbar, "lyapunov": lyap, "regimes": regimes, "failed": failed,
            "ran": [e["point"] for e in entries]}


def n_scaling(ns: Sequence[int], params: ModelParams, *, out_dir=None,
              rule: str = "oscillatory") -> dict:
    """Full-space dominant eigenvalue for each N and its fit against 1/N."""
    rows = []
    for n in ns:
        sp = dominant_over_space(int(n), params, rule=rule)
        sym = dominant_over_space(int(n), params, symmetric_only=True, rule=rule)
        lam = sp.lambda1
        rows.append({"N": int(n), "re": lam.real, "im": lam.imag, "J": sp.dominant_j,
                     "symmetric_gap": sym.dominant.gap})
    fit = fit_inverse_n([r["N"] for r in rows], [r["re"] for r in rows])
    result = {"rows": rows, "fit": fit, "omega": params.omega, "kappa": params.kappa}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "scaling.csv").open("w") as fh:
            fh.write("N,inv_N,re_lambda1,im_lambda1,J,symmetric_gap\n")
            for r in rows:
                fh.write(f"{r['N']},{1 / r['N']!r},{r['re']!r},{r['im']!r},{r['J']},"
                         f"{r['symmetric_gap']!r}\n")
        (out / "scaling_fit.json").write_text(json.dumps(result, indent=2))
    return result


def seeding_scan(base: EnsembleSpec, gammas: Sequence[float], *, melt_fraction: float = 0.05,
                 t_end: float = 1000.0, window=(200.0, 1000.0), lyapunov: bool = False,
                 sink: Callable[[PointRun], None] | None = None, **kw) -> list[dict]:
    """Run ``base`` at each coupling and record the regime and subgroup-0 amplitude.

    Subgroup 0 counts as melted when every member's m_z standard deviation
    over the window is below ``melt_fraction`` times its norm. ``sink``, when
    given, receives every finished run.
    """
    gammas = [float(g) for g in gammas]
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("coupling list must be increasing")
    out = []
    for g in gammas:
        run = run_point(base.replace(gamma=g), t_end=t_end, window=window,
                        lyapunov=lyapunov, **kw)
        if sink is not None:
            sink(run)
        amp = group_amplitude(run, 0)
        out.append({"gamma": g, "regime": run.report.regime,
                    "mean_pearson": run.report.mean_pearson,
                    "lyapunov": run.report.lyapunov,
                    "group_means": _group_means(run), **amp,
                    "melted": amp["relative"] < melt_fraction})
    return out


def _group_means(run: PointRun) -> dict:
    from .sync import block_means
    return {int(k): v for k, v in block_means(run.report.pearson, run.ensemble.labels).items()}


def find_melting(base: EnsembleSpec, lo: float, hi: float, *, tol: float = 0.01,
                 melt_fraction: float = 0.05, **kw) -> dict:
    """Bisect for the coupling at which subgroup 0 stops oscillating.

    Needs subgroup 0 oscillating at ``lo`` and melted at ``hi``.
    """
    scan = seeding_scan(base, [lo, hi], melt_fraction=melt_fraction, **kw)
    if scan[0]["melted"] or not scan[1]["melted"]:
        raise ValueError(f"no melting bracket in [{lo}, {hi}]")
    history = list(scan)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        rec = seeding_scan(base, [mid], melt_fraction=melt_fraction, **kw)[0]
        history.append(rec)
        if rec["melted"]:
            hi = mid
        else:
            lo = mid
    return {"gamma": 0.5 * (lo + hi), "bracket": (lo, hi), "history": history}
