"""Command-line entry point.

Every subcommand resolves its settings in three layers: built-in defaults,
then a ``--config`` YAML/JSON mapping, then explicit flags. Unknown config
keys are rejected before anything is computed. ``--dry-run`` stops after
validation and prints the resolved settings.

Exit codes: 0 success, 2 invalid input, 3 numerical failure. ``classify``
exits with ``10 + k`` where ``k`` indexes :data:`ctcsync.sync.REGIMES`.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import NumericalError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_REGIME_BASE = 10

DEFAULTS = {
    "spectrum": {"N": None, "omega": 0.9, "kappa": 1.0, "mode": "full", "rule": "oscillatory",
                 "out": None},
    "evolve": {"N": None, "m": None, "omega": 0.9, "kappa": 1.0, "t_end": 30.0, "dt": 0.05,
               "out": None},
    "meanfield": {"m": 0.1, "state": None, "omega": 0.9, "kappa": 1.0, "t_end": 100.0,
                  "dt": None, "rtol": 1e-10, "atol": 1e-12, "out": None},
    "network": {"ensemble": "fig3", "gamma": 0.35, "delta": 0.3, "n": None, "topology": "all",
                "seed": 0, "t_end": 1000.0, "t0": 200.0, "dt": 0.1, "lyapunov": True,
                "rtol": 1e-10, "atol": 1e-12, "out": None},
    "sweep": {"plan": None, "out": None, "force": False, "workers": None},
    "phase-diagram": {"m_points": 40, "ratio_points": 40, "cross_check": 10, "seed": 0,
                      "kappa": 1.0, "out": None},
    "classify": {"trajectory": None, "window": None, "lyapunov": None, "eps_lambda": 1e-2,
                 "edge": 0.9, "complete": 0.95, "unsync": 0.05, "cover": 0.9,
                 "dead_var": 1e-12, "out": None},
    "figure": {"preset": None, "out": None, "seed": 0, "t_end": None, "resolution": None},
}


class InvalidInput(ValueError):
    pass


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML or JSON file of settings; flags take precedence")
    p.add_argument("--dry-run", action="store_true", help="validate and print settings only")


def _add_model(p, kappa=True):
    p.add_argument("--omega", type=float, help="drive strength (default 0.9)")
    if kappa:
        p.add_argument("--kappa", type=float, help="dissipation rate (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctcsync", argument_default=argparse.SUPPRESS,
                                     description="Continuous time crystal simulation toolkit")
    parser.add_argument("--version", action="version", version=f"ctcsync {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", argument_default=argparse.SUPPRESS,
                       help="Liouvillian spectra over spin sectors")
    _add_common(p)
    p.add_argument("--N", type=int, help="number of spins")
    _add_model(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--full", dest="mode", action="store_const", const="full",
                      help="every sector (default)")
    mode.add_argument("--symmetric-only", dest="mode", action="store_const", const="symmetric",
                      help="only the J = N/2 sector")
    p.add_argument("--rule", choices=["oscillatory", "slowest"])
    p.add_argument("--out", help="directory for spectrum.csv and spectrum.json")

    p = sub.add_parser("evolve", argument_default=argparse.SUPPRESS,
                       help="exact evolution of one sector against mean field")
    _add_common(p)
    p.add_argument("--N", type=int)
    p.add_argument("--m", type=float, help="sector norm m = 2J/N")
    _add_model(p)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--out", help="CSV output path")

    p = sub.add_parser("meanfield", argument_default=argparse.SUPPRESS,
                       help="single-CTC mean-field trajectory and fixed points")
    _add_common(p)
    p.add_argument("--m", type=float, help="start at (0, 0, m)")
    p.add_argument("--state", type=float, nargs=3, metavar=("MX", "MY", "MZ"))
    _add_model(p)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--out", help="trajectory file (.csv or binary)")

    p = sub.add_parser("network", argument_default=argparse.SUPPRESS,
                       help="coupled-network run with synchronization report")
    _add_common(p)
    p.add_argument("--ensemble",
                   help="'fig3', 'fig4' (uniform windows, n=20), 'gaussian', or a YAML file")
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float, help="mean-frequency offset for 'gaussian'")
    p.add_argument("--n", type=int)
    p.add_argument("--topology", choices=["all", "intra", "none"])
    p.add_argument("--seed", type=int)
    p.add_argument("--t-end", type=float)
    p.add_argument("--t0", type=float, help="start of the analysis window")
    p.add_argument("--dt", type=float)
    p.add_argument("--no-lyapunov", dest="lyapunov", action="store_false")
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("sweep", argument_default=argparse.SUPPRESS,
                       help="run a (gamma, delta) grid from a plan file")
    _add_common(p)
    p.add_argument("--plan")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true", help="rerun completed points")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("phase-diagram", argument_default=argparse.SUPPRESS,
                       help="time-crystal / melted labels over (m, Omega/kappa)")
    _add_common(p)
    p.add_argument("--m-points", type=int)
    p.add_argument("--ratio-points", type=int)
    p.add_argument("--cross-check", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--out", help="CSV output path")

    p = sub.add_parser("classify", argument_default=argparse.SUPPRESS,
                       help="synchronization report for a stored trajectory")
    _add_common(p)
    p.add_argument("trajectory", nargs="?")
    p.add_argument("--window", type=float, nargs=2, metavar=("T0", "T1"))
    p.add_argument("--lyapunov", type=float, help="known largest Lyapunov exponent")
    for name in ("eps-lambda", "edge", "complete", "unsync", "cover", "dead-var"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--out", help="report JSON path")

    p = sub.add_parser("figure", argument_default=argparse.SUPPRESS,
                       help="data bundle and manifest for one figure preset")
    _add_common(p)
    p.add_argument("preset", nargs="?")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--t-end", type=float)
    p.add_argument("--resolution", type=int)
    return parser


def load_config(path) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidInput(f"config {path} must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve(command: str, flags: dict) -> dict:
    """Merge defaults, config file and flags for ``command``."""
    settings = dict(DEFAULTS[command])
    flags = dict(flags)
    config_path = flags.pop("config", None)
    dry = flags.pop("dry_run", False)
    if config_path is not None:
        data = load_config(config_path)
        unknown = sorted(set(data) - set(settings))
        if unknown:
            raise InvalidInput(f"unknown config keys for {command}: {unknown}")
        settings.update(data)
    settings.update(flags)
    settings["dry_run"] = dry
    return settings


def _require(s: dict, *keys):
    for k in keys:
        if s.get(k) is None:
            raise InvalidInput(f"missing required setting {k!r}")


def _positive_int(s, key):
    v = s[key]
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
        raise InvalidInput(f"{key} must be a positive integer, got {v!r}")


def _params(s):
    from .liouvillian import ModelParams
    return ModelParams(float(s["omega"]), float(s["kappa"]))


def _emit(obj):
    print(json.dumps(obj, indent=2, default=str))


def cmd_spectrum(s: dict) -> int:
    from .liouvillian import dominant_over_space, spectrum_summary, write_spectrum_csv

    _require(s, "N")
    _positive_int(s, "N")
    params = _params(s)
    if s["mode"] not in ("full", "symmetric"):
        raise InvalidInput(f"mode must be 'full' or 'symmetric', got {s['mode']!r}")
    if s["dry_run"]:
        return _dry(s)
    result = dominant_over_space(s["N"], params, symmetric_only=s["mode"] == "symmetric",
                                 rule=s["rule"])
    summary = spectrum_summary(result)
    if s["out"]:
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_spectrum_csv(result, out / "spectrum.csv")
        (out / "spectrum.json").write_text(json.dumps(summary, indent=2))
    _emit({k: summary[k] for k in ("N", "omega", "kappa", "rule", "lambda1", "gap", "J")})
    return EXIT_OK


def cmd_evolve(s: dict) -> int:
    from .liouvillian import build_block, evolve_exact, highest_weight_state, sector_for_m
    from .meanfield import simulate_single

    _require(s, "N", "m")
    _positive_int(s, "N")
    params = _params(s)
    sector = sector_for_m(s["N"], float(s["m"]))
    if s["t_end"] <= 0 or s["dt"] <= 0:
        raise InvalidInput("t_end and dt must be positive")
    if s["dry_run"]:
        return _dry(s)
    t = np.arange(0.0, s["t_end"] + 0.5 * s["dt"], s["dt"])
    block = build_block(sector, params)
    exact = evolve_exact(block, highest_weight_state(sector), t)
    mf = simulate_single([0.0, 0.0, float(s["m"])], params, float(t[-1]), t_eval=t)
    dev = float(np.max(np.abs(exact.m[:, 2] - mf.states[:, 0, 2])))
    if s["out"]:
        table = np.column_stack([t, exact.m, mf.states[:, 0, :]])
        np.savetxt(s["out"], table, delimiter=",", fmt="%.17g", comments="",
                   header="t,mx_exact,my_exact,mz_exact,mx_mf,my_mf,mz_mf")
    _emit({"N": s["N"], "J": sector.two_j / 2, "max_mz_deviation": dev,
           "trace_error": exact.trace_error})
    return EXIT_OK


def cmd_meanfield(s: dict) -> int:
    from .io import write_trajectory
    from .meanfield import fixed_points, simulate_single

    params = _params(s)
    state = s["state"] if s["state"] is not None else [0.0, 0.0, s["m"]]
    state = np.asarray(state, dtype=float)
    if state.shape != (3,) or not np.all(np.isfinite(state)):
        raise InvalidInput("state must be three finite numbers")
    m = float(np.linalg.norm(state))
    if not 0 < m <= 1:
        raise InvalidInput(f"initial norm must lie in (0, 1], got {m}")
    if s["t_end"] <= 0:
        raise InvalidInput("t_end must be positive")
    if s["dry_run"]:
        return _dry(s)
    rec = simulate_single(state, params, float(s["t_end"]), dt=s["dt"], rtol=s["rtol"],
                          atol=s["atol"])
    fp = fixed_points(m, params)
    if s["out"]:
        write_trajectory(rec, s["out"])
    _emit({"m": m, "classification": fp.classification, "omega_pred": fp.omega_pred,
           "physical_fixed_points": fp.physical_points().tolist(),
           "norm_drift": float(rec.norm_drift[0]), "samples": int(rec.t.size)})
    return EXIT_OK


def _network_spec(s: dict):
    from .sweep import EnsembleSpec, gaussian_pair_spec, uniform_windows_spec

    kind = s["ensemble"]
    if kind in ("fig3", "fig4"):
        windows = ((0.2, 0.25), (0.75, 0.85)) if kind == "fig3" else ((0.2, 0.25), (0.75, 0.8))
        return uniform_windows_spec(windows, n=s["n"] or 20, gamma=s["gamma"],
                                    topology=s["topology"], seed=s["seed"])
    if kind == "gaussian":
        spec = gaussian_pair_spec(s["gamma"], s["delta"], n=s["n"] or 100, seed=s["seed"])
        return spec.replace(topology=s["topology"])
    path = Path(kind)
    if not path.exists():
        raise InvalidInput(f"ensemble must be fig3, fig4, gaussian or a file; got {kind!r}")
    data = yaml.safe_load(path.read_text())
    if not isinstance(data, dict):
        raise InvalidInput(f"ensemble file {path} must be a mapping")
    return EnsembleSpec.from_dict(data)


def cmd_network(s: dict) -> int:
    from .io import write_trajectory
    from .sweep import run_point

    spec = _network_spec(s)
    if not 0 <= s["t0"] < s["t_end"]:
        raise InvalidInput("need 0 <= t0 < t_end")
    if s["dry_run"]:
        return _dry({**s, "ensemble_spec": spec.to_dict()})
    run = run_point(spec, t_end=s["t_end"], window=(s["t0"], s["t_end"]), dt=s["dt"],
                    lyapunov=s["lyapunov"], rtol=s["rtol"], atol=s["atol"])
    if s["out"]:
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory(run.trajectory, out / "trajectory.bin")
        report = run.report.to_dict()
        report["provenance"] = {"spec": spec.to_dict(), "seed": spec.seed,
                                "version": __version__,
                                "frequencies": run.ensemble.frequencies.tolist()}
        (out / "report.json").write_text(json.dumps(report, indent=2))
        run.report.write_pearson_csv(out / "pearson.csv")
        run.report.write_spectra_csv(out / "spectra.csv")
    _emit({"regime": run.report.regime, "mean_pearson": run.report.mean_pearson,
           "lyapunov": run.report.lyapunov,
           "clusters": [len(c) for c in run.report.clusters]})
    return EXIT_OK


def cmd_sweep(s: dict) -> int:
    from .sweep import SweepPlan, run_grid

    _require(s, "plan", "out")
    plan = SweepPlan.from_yaml(s["plan"])
    if s["workers"] is not None:
        _positive_int(s, "workers")
    if s["dry_run"]:
        return _dry({**s, "plan_settings": plan.to_dict(),
                     "points": [name for _, _, name in plan.points()]})
    res = run_grid(plan, s["out"], workers=s["workers"], force=s["force"])
    _emit({"ran": res["ran"], "failed": res["failed"], "regimes": res["regimes"]})
    return EXIT_NUMERICAL if res["failed"] else EXIT_OK


def cmd_phase_diagram(s: dict) -> int:
    from .meanfield import phase_diagram

    for key in ("m_points", "ratio_points"):
        _positive_int(s, key)
    if s["dry_run"]:
        return _dry(s)
    m_grid = np.linspace(1.0 / s["m_points"], 1.0, s["m_points"])
    r_grid = np.linspace(0.1 + 1.9 / s["ratio_points"], 2.0, s["ratio_points"])
    pd = phase_diagram(m_grid, r_grid, kappa=s["kappa"], cross_check=s["cross_check"],
                       seed=s["seed"])
    if s["out"]:
        with open(s["out"], "w") as fh:
            fh.write("m\\ratio," + ",".join(repr(float(r)) for r in r_grid) + "\n")
            for m, row in zip(m_grid, pd.labels):
                fh.write(repr(float(m)) + "," + ",".join(row) + "\n")
    counts = {lab: int(np.count_nonzero(pd.labels == lab)) for lab in np.unique(pd.labels)}
    _emit({"counts": counts, "cross_check_agrees": pd.agreement(),
           "checked_cells": len(pd.checks)})
    return EXIT_OK


def cmd_classify(s: dict) -> int:
    from .io import read_trajectory
    from .sync import REGIMES, ClassifierConfig, analyze

    _require(s, "trajectory")
    config = ClassifierConfig(eps_lambda=s["eps_lambda"], edge=s["edge"],
                              complete=s["complete"], unsync=s["unsync"], cover=s["cover"],
                              dead_var=s["dead_var"])
    path = Path(s["trajectory"])
    if not path.exists():
        raise InvalidInput(f"no such trajectory file: {path}")
    if s["dry_run"]:
        return _dry(s)
    record = read_trajectory(path)
    window = None
    if s["window"] is not None:
        t0, t1 = (float(v) for v in s["window"])
        if t0 < record.t[0] - 1e-9 or t1 > record.t[-1] + 1e-9 or t0 >= t1:
            raise InvalidInput(f"window [{t0}, {t1}] exceeds data [{record.t[0]}, {record.t[-1]}]")
        window = (t0, t1)
    report = analyze(record, window, lyapunov=s["lyapunov"], config=config)
    if s["out"]:
        report.write_json(s["out"])
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_REGIME_BASE + REGIMES.index(report.regime)


def cmd_figure(s: dict) -> int:
    from .figures import PRESETS, run_preset

    _require(s, "preset", "out")
    if s["preset"] not in PRESETS:
        raise InvalidInput(f"unknown preset {s['preset']!r}; choose from {sorted(PRESETS)}")
    options = {"seed": s["seed"]}
    for key in ("t_end", "resolution"):
        if s[key] is not None:
            options[key] = s[key]
    if s["dry_run"]:
        return _dry(s)
    manifest = run_preset(s["preset"], s["out"], **options)
    _emit({"preset": manifest["preset"], "all_passed": manifest["all_passed"],
           "checks": {k: v["passed"] for k, v in manifest["checks"].items()}})
    return EXIT_OK


def _dry(s: dict) -> int:
    _emit({"dry_run": True, "settings": {k: v for k, v in s.items() if k != "dry_run"}})
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "meanfield": cmd_meanfield,
    "network": cmd_network,
    "sweep": cmd_sweep,
    "phase-diagram": cmd_phase_diagram,
    "classify": cmd_classify,
    "figure": cmd_figure,
}


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    try:
        settings = resolve(command, args)
        return COMMANDS[command](settings)
    except NumericalError as exc:
        print(f"ctcsync {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, OSError) as exc:
        print(f"ctcsync {command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
