import json

import numpy as np
import pytest

from ctcsync.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_REGIME_BASE, main, resolve
from ctcsync.io import read_trajectory, write_trajectory
from ctcsync.meanfield import TrajectoryRecord
from ctcsync.sync import REGIMES


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_spectrum_symmetric_gap_positive(capsys):
    code, out, _ = run(capsys, "spectrum", "--N", 10, "--omega", 0.9, "--symmetric-only")
    assert code == 0
    data = json.loads(out)
    assert data["J"] == 5.0 and data["gap"] > 0


def test_spectrum_full_writes_tables(capsys, tmp_path):
    code, _, _ = run(capsys, "spectrum", "--N", 10, "--omega", 0.9, "--kappa", 1, "--full",
                     "--out", tmp_path)
    assert code == 0
    rows = (tmp_path / "spectrum.csv").read_text().splitlines()
    assert rows[0] == "N,J,m,re,im,is_dominant"
    js = {float(r.split(",")[1]) for r in rows[1:]}
    assert js == {5.0, 4.0, 3.0, 2.0, 1.0, 0.0}
    summary = json.loads((tmp_path / "spectrum.json").read_text())
    assert len(summary["sectors"]) == 6


@pytest.mark.parametrize("argv", [
    ["spectrum", "--N", "0"],
    ["spectrum", "--N", "4", "--omega", "-1"],
    ["spectrum"],
    ["evolve", "--N", "10", "--m", "0.15"],
    ["meanfield", "--state", "1", "1", "1"],
    ["figure", "nosuch", "--out", "x"],
    ["classify", "/nonexistent/file.bin"],
])
def test_validation_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_INVALID
    assert "invalid input" in err


def test_argparse_errors_also_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["spectrum", "--full", "--symmetric-only", "--N", "4"])
    assert exc.value.code == EXIT_INVALID


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("N: 6\nomega: 0.5\nmode: symmetric\n")
    s = resolve("spectrum", {"config": str(cfg), "omega": 0.7})
    assert s["N"] == 6 and s["omega"] == 0.7 and s["mode"] == "symmetric"
    code, out, _ = run(capsys, "spectrum", "--config", cfg, "--omega", 0.7)
    assert code == 0 and json.loads(out)["omega"] == 0.7


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("N: 6\nomgea: 0.5\n")
    code, _, err = run(capsys, "spectrum", "--config", cfg)
    assert code == EXIT_INVALID and "omgea" in err


def test_dry_run_validates_without_output(tmp_path, capsys):
    out_dir = tmp_path / "never"
    code, out, _ = run(capsys, "spectrum", "--N", 40, "--out", out_dir, "--dry-run")
    assert code == 0
    assert json.loads(out)["dry_run"] is True
    assert not out_dir.exists()
    code, _, _ = run(capsys, "spectrum", "--N", -3, "--dry-run")
    assert code == EXIT_INVALID


def test_evolve_tracks_meanfield(capsys, tmp_path):
    path = tmp_path / "ev.csv"
    code, out, _ = run(capsys, "evolve", "--N", 100, "--m", 0.1, "--t-end", 10, "--dt", 0.1,
                       "--out", path)
    assert code == 0
    data = json.loads(out)
    assert data["J"] == 5.0 and data["max_mz_deviation"] < 0.05
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (101, 7)


def test_meanfield_writes_trajectory(capsys, tmp_path):
    path = tmp_path / "single.bin"
    code, out, _ = run(capsys, "meanfield", "--m", 0.1, "--t-end", 50, "--out", path)
    assert code == 0
    assert json.loads(out)["norm_drift"] < 1e-8
    rec = read_trajectory(path)
    assert rec.n == 1 and rec.t[-1] == pytest.approx(50)


def synthetic(tmp_path, kind, name="traj.csv"):
    t = np.arange(0, 2001) * 0.1
    if kind == "identical":
        mz = np.tile(0.3 * np.sin(0.7 * t), (4, 1))
    elif kind == "flat":
        mz = np.full((4, t.size), 0.2)
    else:
        raise AssertionError(kind)
    states = np.zeros((t.size, 4, 3))
    states[:, :, 2] = mz.T
    path = tmp_path / name
    write_trajectory(TrajectoryRecord(t, states), path)
    return path


@pytest.mark.parametrize("kind, regime", [("identical", "complete-sync"),
                                          ("flat", "oscillation-death")])
def test_classify_exit_code_encodes_regime(capsys, tmp_path, kind, regime):
    path = synthetic(tmp_path, kind)
    report = tmp_path / "report.json"
    code, out, _ = run(capsys, "classify", path, "--window", 50, 200, "--out", report)
    assert code == EXIT_REGIME_BASE + REGIMES.index(regime)
    assert json.loads(out)["regime"] == regime
    assert json.loads(report.read_text())["window"] == [50.0, 200.0]


def test_classify_window_beyond_data(capsys, tmp_path):
    path = synthetic(tmp_path, "identical")
    code, _, err = run(capsys, "classify", path, "--window", 50, 500)
    assert code == EXIT_INVALID and "exceeds" in err


def test_classify_malformed_file(capsys, tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a trajectory")
    code, _, _ = run(capsys, "classify", path)
    assert code == EXIT_INVALID


def test_network_and_classify_round_trip(capsys, tmp_path):
    out_dir = tmp_path / "net"
    code, out, _ = run(capsys, "network", "--ensemble", "gaussian", "--n", 6, "--gamma", 0.5,
                       "--t-end", 100, "--t0", 20, "--seed", 3, "--out", out_dir)
    assert code == 0
    summary = json.loads(out)
    report = json.loads((out_dir / "report.json").read_text())
    assert report["regime"] == summary["regime"]
    assert report["provenance"]["seed"] == 3
    code, out, _ = run(capsys, "classify", out_dir / "trajectory.bin", "--window", 20, 100,
                       "--lyapunov", report["lyapunov"])
    assert json.loads(out)["regime"] == report["regime"]
    assert code == EXIT_REGIME_BASE + REGIMES.index(report["regime"])


def test_network_seed_reproducible_bytes(capsys, tmp_path):
    args = ["network", "--ensemble", "fig3", "--n", 4, "--gamma", 0.35, "--t-end", 60,
            "--t0", 10, "--seed", 9]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
    for name in ("trajectory.bin", "report.json", "pearson.csv", "spectra.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_network_ensemble_file(capsys, tmp_path):
    spec = tmp_path / "ens.yaml"
    spec.write_text("groups:\n  - {count: 3, dist: uniform, low: 0.2, high: 0.3}\n"
                    "gamma: 0.1\nseed: 1\n")
    code, out, _ = run(capsys, "network", "--ensemble", spec, "--t-end", 50, "--t0", 10,
                       "--no-lyapunov")
    assert code == 0
    assert json.loads(out)["lyapunov"] is None


def test_sweep_plan(capsys, tmp_path):
    plan = tmp_path / "plan.yaml"
    plan.write_text("gamma: [0.0, 0.5]\ndelta: [0.2]\nn: 4\nt_end: 60\nwindow: [10, 60]\n"
                    "lyapunov: false\n")
    code, out, _ = run(capsys, "sweep", "--plan", plan, "--out", tmp_path / "grid",
                       "--workers", 1)
    assert code == 0
    assert sorted(json.loads(out)["ran"]) == ["g000_d000", "g001_d000"]
    assert (tmp_path / "grid" / "mean_pearson.csv").exists()
    code, out, _ = run(capsys, "sweep", "--plan", plan, "--out", tmp_path / "grid")
    assert code == 0 and json.loads(out)["ran"] == []


def test_sweep_bad_plan(capsys, tmp_path):
    plan = tmp_path / "plan.yaml"
    plan.write_text("gamma: [0.1]\ndelta: [0.1]\nresolution: 3\n")
    code, _, err = run(capsys, "sweep", "--plan", plan, "--out", tmp_path / "g")
    assert code == EXIT_INVALID and "resolution" in err


def test_numerical_failure_exit_3(capsys, monkeypatch):
    from ctcsync import liouvillian
    from ctcsync.errors import SpectrumError

    def boom(*a, **k):
        raise SpectrumError("eigensolver did not converge")
    monkeypatch.setattr(liouvillian, "dominant_over_space", boom)
    code, _, err = run(capsys, "spectrum", "--N", 4)
    assert code == EXIT_NUMERICAL and "numerical failure" in err


def test_phase_diagram(capsys, tmp_path):
    path = tmp_path / "pd.csv"
    code, out, _ = run(capsys, "phase-diagram", "--m-points", 8, "--ratio-points", 8,
                       "--cross-check", 3, "--out", path)
    assert code == 0
    data = json.loads(out)
    assert data["cross_check_agrees"] and data["checked_cells"] == 3
    assert len(path.read_text().splitlines()) == 9


def test_figure_fig1a_manifest(capsys, tmp_path):
    code, out, _ = run(capsys, "figure", "fig1a", "--out", tmp_path, "--resolution", 12)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["preset"] == "fig1a" and manifest["all_passed"]
    for name in manifest["files"]:
        assert (tmp_path / name).exists()


def test_figure_s1b_overlays(capsys, tmp_path):
    code, out, _ = run(capsys, "figure", "figS1b", "--out", tmp_path)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    header = (tmp_path / "overlay.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["t", "meanfield"] and "exact_N100" in header
    assert manifest["checks"]["deviation_decreases"]["passed"]


def test_figure_fig3_short_run(capsys, tmp_path):
    code, out, _ = run(capsys, "figure", "fig3", "--out", tmp_path, "--t-end", 300)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["regimes"]) == {"uncoupled", "intra", "all"}
    assert manifest["regimes"]["uncoupled"] == "unsynchronized"
    assert set(manifest["checks"]) == {"all_to_all_chimera", "eps1_synchronized",
                                       "eps2_unsynchronized", "intra_two_blocks"}
    for name in manifest["files"]:
        assert (tmp_path / name).exists()


def test_figure_s1a_portrait(capsys, tmp_path):
    code, _, _ = run(capsys, "figure", "figS1a", "--out", tmp_path)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["checks"]["closed_orbits"]["passed"]
    rows = (tmp_path / "portrait.csv").read_text().splitlines()
    assert rows[0] == "m,P,Q" and len(rows) == 1 + 5 * 401


def test_figure_dry_run_lists_settings(capsys, tmp_path):
    code, out, _ = run(capsys, "figure", "fig4", "--out", tmp_path / "f4", "--resolution", 3,
                       "--dry-run")
    assert code == 0
    assert json.loads(out)["settings"]["resolution"] == 3
    assert not (tmp_path / "f4").exists()
