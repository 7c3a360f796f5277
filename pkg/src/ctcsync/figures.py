"""Figure presets: each runs one pipeline, writes its data and a manifest.

A preset returns a manifest dict with the parameters used, the files written
(relative to the output directory) and a set of named checks, each with a
``passed`` flag and the measured value. Nothing here draws images; every
output is a CSV or JSON table.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .io import write_trajectory
from .liouvillian import (
    ModelParams,
    build_block,
    dominant_over_space,
    evolve_exact,
    highest_weight_state,
    sector_for_m,
    spectrum_summary,
    write_spectrum_csv,
)
from .meanfield import (
    BOUNDARY,
    TIME_CRYSTAL,
    oscillation_frequency,
    phase_diagram,
    phase_portrait,
    simulate_single,
)
from .sweep import (
    SweepPlan,
    find_melting,
    gaussian_pair_spec,
    n_scaling,
    run_grid,
    run_point,
    seeding_scan,
    uniform_windows_spec,
)
from .sync import ClassifierConfig, block_means

__all__ = ["PRESETS", "run_preset", "exact_vs_meanfield", "EXEMPLARS"]

FIG3_WINDOWS = ((0.2, 0.25), (0.75, 0.85))
FIG4_WINDOWS = ((0.2, 0.25), (0.75, 0.8))
# (gamma, delta) -> expected regime for the labelled Gaussian-ensemble points
EXEMPLARS = (
    (0.8, 0.7, "chimera+cluster"),
    (0.35, 0.6, "chimera"),
    (0.8, 0.6, "chimera+partial-oscillation-death"),
    (0.8, 0.3, "oscillation-death"),
    (0.8, 0.2, "chaotic"),
    (0.8, 0.1, "complete-sync"),
)
SIZES_S1B = (20, 40, 60, 80, 100)


def _check(passed, value=None, **extra) -> dict:
    return {"passed": bool(passed), "value": value, **extra}


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def exact_vs_meanfield(n_spins: int, m: float, params: ModelParams, *, periods: float = 3.0,
                       samples_per_period: int = 200) -> dict:
    """Exact m_z(t) of the sector ``J = mN/2`` against the mean-field run from ``(0,0,m)``."""
    w = float(oscillation_frequency(m, params))
    t_end = periods * 2 * np.pi / w
    t = np.linspace(0.0, t_end, int(periods * samples_per_period) + 1)
    block = build_block(sector_for_m(n_spins, m), params)
    exact = evolve_exact(block, highest_weight_state(block.sector), t)
    mf = simulate_single([0.0, 0.0, m], params, t_end, t_eval=t)
    mz_mf = mf.states[:, 0, 2]
    return {"N": n_spins, "t": t, "exact": exact.m[:, 2], "meanfield": mz_mf,
            "deviation": float(np.max(np.abs(exact.m[:, 2] - mz_mf)))}


def fig1a(out: Path, *, resolution: int = 40, seed: int = 0, **_) -> dict:
    m_grid = np.linspace(1.0 / resolution, 1.0, resolution)
    r_grid = np.linspace(0.1 + 1.9 / resolution, 2.0, resolution)
    pd = phase_diagram(m_grid, r_grid, cross_check=10, seed=seed)
    rows = [(m, r, pd.labels[i, j]) for i, m in enumerate(m_grid) for j, r in enumerate(r_grid)]
    _write_rows(out / "phase_labels.csv", ["m", "ratio", "label"], rows)
    analytic = np.array([[TIME_CRYSTAL if m < r else "melted" for r in r_grid] for m in m_grid])
    away = pd.labels != BOUNDARY
    return {
        "files": ["phase_labels.csv"],
        "parameters": {"resolution": resolution, "seed": seed},
        "checks": {
            "labels_match_boundary": _check(np.all(pd.labels[away] == analytic[away])),
            "integration_cross_check": _check(pd.agreement(), len(pd.checks)),
        },
    }


def fig2(out: Path, *, omega: float = 0.9, kappa: float = 1.0, sizes=None, **_) -> dict:
    params = ModelParams(omega, kappa)
    sizes = list(range(10, 41, 2)) if sizes is None else list(sizes)
    full = dominant_over_space(10, params)
    write_spectrum_csv(full, out / "spectrum_N10.csv")
    (out / "spectrum_N10.json").write_text(json.dumps(spectrum_summary(full), indent=2))
    scaling = n_scaling(sizes, params, out_dir=out)
    rows = scaling["rows"]
    gaps = [r["symmetric_gap"] for r in rows]
    ims = [abs(r["im"]) for r in rows]
    dist = [abs(v - omega) for v in ims]
    return {
        "files": ["spectrum_N10.csv", "spectrum_N10.json", "scaling.csv", "scaling_fit.json"],
        "parameters": {"omega": omega, "kappa": kappa, "sizes": sizes},
        "checks": {
            "symmetric_gap_open": _check(min(gaps) > 1e-3, min(gaps)),
            "inverse_n_fit": _check(scaling["fit"]["r2"] >= 0.99, scaling["fit"]),
            "im_lambda1_approaches_omega": _check(
                all(b < a for a, b in zip(dist, dist[1:])) and dist[-1] <= 0.05 * omega,
                ims[-1]),
        },
    }


def _run_summary(run, out: Path, tag: str) -> list[str]:
    write_trajectory(run.trajectory, out / f"{tag}_trajectory.bin")
    run.report.write_json(out / f"{tag}_report.json")
    run.report.write_pearson_csv(out / f"{tag}_pearson.csv")
    run.report.write_spectra_csv(out / f"{tag}_spectra.csv")
    return [f"{tag}_{s}" for s in ("trajectory.bin", "report.json", "pearson.csv", "spectra.csv")]


def fig3(out: Path, *, seed: int = 0, t_end: float = 1000.0, t0: float = 200.0, **_) -> dict:
    files, labels, means = [], {}, {}
    for tag, gamma, topo in (("uncoupled", 0.0, "none"), ("intra", 0.35, "intra"),
                             ("all", 0.35, "all")):
        spec = uniform_windows_spec(FIG3_WINDOWS, n=20, gamma=gamma, topology=topo, seed=seed)
        run = run_point(spec, t_end=t_end, window=(t0, t_end))
        files += _run_summary(run, out, tag)
        labels[tag] = run.report.regime
        means[tag] = block_means(run.report.pearson, run.ensemble.labels)
    return {
        "files": files,
        "parameters": {"seed": seed, "t_end": t_end, "window": [t0, t_end]},
        "regimes": labels,
        "checks": {
            "all_to_all_chimera": _check(labels["all"] == "chimera", labels["all"]),
            "eps1_synchronized": _check(means["all"][0] >= 0.9, means["all"][0]),
            "eps2_unsynchronized": _check(means["all"][1] <= 0.5, means["all"][1]),
            "intra_two_blocks": _check(labels["intra"] == "cluster-sync", labels["intra"]),
        },
    }


def fig4(out: Path, *, seed: int = 0, t_end: float = 1000.0, t0: float = 200.0,
         resolution: int = 15, n: int = 100, **_) -> dict:
    spec = uniform_windows_spec(FIG4_WINDOWS, n=20, gamma=0.35, seed=seed)
    run = run_point(spec, t_end=t_end, window=(t0, t_end))
    files = _run_summary(run, out, "cluster")
    plan = SweepPlan(gamma=np.linspace(0.0, 1.5, resolution).tolist(),
                     delta=np.linspace(0.0, 0.8, resolution).tolist(), name="fig4", n=n,
                     seed=seed, t_end=t_end, window=[t0, t_end])
    grid = run_grid(plan, out / "grid")
    files += ["grid/mean_pearson.csv", "grid/lyapunov.csv", "grid/index.jsonl"]
    return {
        "files": files,
        "parameters": {"seed": seed, "t_end": t_end, "resolution": resolution, "n": n},
        "regimes": {"cluster": run.report.regime},
        "checks": {
            "two_clusters": _check(run.report.regime == "cluster-sync"
                                   and len(run.report.clusters) == 2,
                                   [len(c) for c in run.report.clusters]),
            "grid_complete": _check(not grid["failed"], grid["failed"]),
        },
    }


def fig_s1a(out: Path, *, omega: float = 0.9, kappa: float = 1.0,
            ms=(0.1, 0.3, 0.5, 0.7, 0.85), **_) -> dict:
    params = ModelParams(omega, kappa)
    rows, closed = [], []
    for m in ms:
        period = 2 * np.pi / float(oscillation_frequency(m, params))
        # small tilt off the m_x = m_y = 0 axis, where P is undefined
        start = m * np.array([np.sin(0.01), 0.0, np.cos(0.01)])
        rec = simulate_single(start, params, period, t_eval=np.linspace(0, period, 401))
        p, q, _ = phase_portrait(rec.states[:, 0])
        rows += [(m, a, b) for a, b in zip(p, q)]
        closed.append(bool(abs(p[-1] - p[0]) < 1e-5 and abs(q[-1] - q[0]) < 1e-5))
    _write_rows(out / "portrait.csv", ["m", "P", "Q"], rows)
    return {"files": ["portrait.csv"], "parameters": {"omega": omega, "ms": list(ms)},
            "checks": {"closed_orbits": _check(all(closed), closed)}}


def fig_s1b(out: Path, *, omega: float = 0.9, kappa: float = 1.0, m: float = 0.1, **_) -> dict:
    params = ModelParams(omega, kappa)
    results = [exact_vs_meanfield(n, m, params) for n in SIZES_S1B]
    header = ["t", "meanfield"] + [f"exact_N{r['N']}" for r in results]
    cols = [results[0]["t"], results[0]["meanfield"]] + [r["exact"] for r in results]
    _write_rows(out / "overlay.csv", header, zip(*cols))
    dev = [r["deviation"] for r in results]
    return {
        "files": ["overlay.csv"],
        "parameters": {"omega": omega, "m": m, "sizes": list(SIZES_S1B)},
        "checks": {"deviation_decreases": _check(all(b < a for a, b in zip(dev, dev[1:])), dev)},
    }


def fig_s2(out: Path, *, seed: int = 0, t_end: float = 1000.0, t0: float = 200.0,
           melt_tol: float = 0.01, **_) -> dict:
    base = uniform_windows_spec(FIG3_WINDOWS, n=20, gamma=0.5, seed=seed)
    kw = dict(t_end=t_end, window=(t0, t_end))
    sink = lambda run: _run_summary(run, out, f"gamma_{run.ensemble.spec.gamma}")
    scan = seeding_scan(base, [0.5, 0.605, 1.2], lyapunov=True, sink=sink, **kw)
    try:
        melt = find_melting(base, 0.5, 0.7, tol=melt_tol, **kw)
        melt_gamma = melt["gamma"]
    except ValueError:
        melt_gamma = None
    (out / "scan.json").write_text(json.dumps({"scan": scan, "melting": melt_gamma}, indent=2))
    files = ["scan.json"] + [f"gamma_{g}_{s}" for g in ("0.5", "0.605", "1.2")
                             for s in ("trajectory.bin", "report.json", "pearson.csv",
                                       "spectra.csv")]
    return {
        "files": files,
        "parameters": {"seed": seed, "t_end": t_end, "gammas": [0.5, 0.605, 1.2]},
        "checks": {
            "chimera_at_0.5": _check(scan[0]["regime"] == "chimera", scan[0]["regime"]),
            "complete_at_1.2": _check(scan[2]["regime"] == "complete-sync", scan[2]["regime"]),
            "melting_near_0.605": _check(melt_gamma is not None and abs(melt_gamma - 0.605) <= 0.05,
                                         melt_gamma),
        },
    }


def exemplar_passes(expected: str, report, eps: float) -> bool:
    lam = report.lyapunov
    if expected == "chimera+cluster":
        return (report.regime in ("chimera", "cluster-sync") and len(report.clusters) >= 2
                and lam is not None and abs(lam) <= eps)
    if expected == "complete-sync":
        return report.regime == expected and report.mean_pearson >= 0.95
    return report.regime == expected


def _exemplars(out: Path, *, seed: int = 0, t_end: float = 1000.0, t0: float = 200.0,
               n: int = 100, **_) -> dict:
    eps = ClassifierConfig().eps_lambda
    files, checks, lyap_rows = [], {}, []
    for gamma, delta, expected in EXEMPLARS:
        run = run_point(gaussian_pair_spec(gamma, delta, n=n, seed=seed), t_end=t_end,
                        window=(t0, t_end))
        tag = f"g{gamma}_d{delta}"
        files += _run_summary(run, out, tag)
        lyap_rows += [(gamma, delta, t, v) for t, v in zip(run.lyapunov.times, run.lyapunov.running)]
        checks[tag] = _check(exemplar_passes(expected, run.report, eps), run.report.regime,
                             expected=expected, lyapunov=run.report.lyapunov,
                             mean_pearson=run.report.mean_pearson)
    _write_rows(out / "lyapunov_running.csv", ["gamma", "delta", "t", "running"], lyap_rows)
    return {"files": files + ["lyapunov_running.csv"],
            "parameters": {"seed": seed, "t_end": t_end, "n": n, "sigma": 0.1, "base": 0.1},
            "checks": checks}


PRESETS: dict[str, Callable[..., dict]] = {
    "fig1a": fig1a,
    "fig2": fig2,
    "fig3": fig3,
    "fig4": fig4,
    "figS1a": fig_s1a,
    "figS1b": fig_s1b,
    "figS2": fig_s2,
    "figS3": _exemplars,
    "figS4": _exemplars,
}


def run_preset(name: str, out_dir, **options) -> dict:
    """Run preset ``name`` into ``out_dir`` and write ``manifest.json`` there."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        manifest = PRESETS[name](out, **options)
    except Exception as exc:
        exc.args = (f"preset {name}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    manifest = {"preset": name, "version": __version__, **manifest}
    manifest["all_passed"] = all(c["passed"] for c in manifest["checks"].values())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable))
    return manifest


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not serializable: {type(obj).__name__}")
