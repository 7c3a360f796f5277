import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctcsync.errors import IntegrationError
from ctcsync.io import (
    read_trajectory,
    read_trajectory_bin,
    write_trajectory,
    write_trajectory_bin,
)
from ctcsync.liouvillian import ModelParams
from ctcsync.meanfield import (
    BOUNDARY,
    MELTED,
    TIME_CRYSTAL,
    NetworkConfig,
    TrajectoryRecord,
    default_dt,
    fixed_points,
    initial_states,
    integrate,
    m_for_frequency,
    numerical_jacobian,
    oscillation_frequency,
    phase_diagram,
    phase_portrait,
    rhs_network,
    rhs_single,
    simulate_network,
    simulate_single,
)

P09 = ModelParams(0.9, 1.0)


def test_rhs_single_on_z_axis():
    m, om, ka = 0.37, 1.3, 0.6
    np.testing.assert_array_equal(rhs_single([0, 0, m], ModelParams(om, ka)), [0, -om * m, 0])


@pytest.mark.parametrize("m,ratio", [(0.95, 0.9), (0.3, 0.9), (1.0, 0.2), (0.05, 1.7)])
def test_rhs_vanishes_at_physical_fixed_points(m, ratio):
    par = ModelParams(ratio * 0.8, 0.8)
    rep = fixed_points(m, par)
    pts = rep.physical_points()
    assert len(pts) == 2
    for p in pts:
        assert np.max(np.abs(rhs_single(p, par))) < 1e-14
        assert np.linalg.norm(p) == pytest.approx(m, abs=1e-14)


def test_network_reduces_bitwise_to_single():
    rng = np.random.default_rng(4)
    s = rng.uniform(-0.5, 0.5, 3)
    cfg = NetworkConfig.uniform(1, omega=0.9, kappa=1.0)
    assert np.array_equal(rhs_network(s[None, :], cfg)[0], rhs_single(s, P09))
    states = rng.uniform(-0.5, 0.5, (5, 3))
    cfg = NetworkConfig.uniform(5, omega=0.9)
    out = rhs_network(states, cfg)
    for a in range(5):
        assert np.array_equal(out[a], rhs_single(states[a], P09))


def test_network_structural_zero():
    cfg = NetworkConfig.uniform(2, gamma=0.7)
    out = rhs_network(np.array([[0.2, 0.1, 0.0], [-0.3, 0.4, 0.0]]), cfg)
    np.testing.assert_array_equal(out[:, 0], 0.0)


def test_network_hand_evaluation():
    # two CTCs on the z axis: coupling sums over m_x, m_y vanish, so only the
    # local drive term survives; tilt them to exercise the coupling
    g, om = 0.35, 0.9
    a = np.array([0.1, 0.2, 0.3])
    b = np.array([-0.2, 0.05, 0.4])
    n = 2
    # printed equations, written out term by term for alpha = a, beta = b
    exp_a = np.array([
        a[0] * a[2] + g / n * a[2] * b[1],
        -om * a[2] + a[1] * a[2] - g / n * a[2] * b[0],
        om * a[1] - (a[0] ** 2 + a[1] ** 2) + g / n * (a[1] * b[0] - a[0] * b[1]),
    ])
    exp_b = np.array([
        b[0] * b[2] + g / n * b[2] * a[1],
        -om * b[2] + b[1] * b[2] - g / n * b[2] * a[0],
        om * b[1] - (b[0] ** 2 + b[1] ** 2) + g / n * (b[1] * a[0] - b[0] * a[1]),
    ])
    out = rhs_network(np.stack([a, b]), NetworkConfig.uniform(2, omega=om, gamma=g))
    np.testing.assert_allclose(out, np.stack([exp_a, exp_b]), rtol=0, atol=1e-16)
    # on-axis example: derivative is the uncoupled one
    z = np.array([[0, 0, 0.1], [0, 0, 0.2]])
    np.testing.assert_allclose(rhs_network(z, NetworkConfig.uniform(2, gamma=g)),
                               [[0, -0.09, 0], [0, -0.18, 0]], atol=1e-16)


def test_network_uniform_gamma_matches_matrix_form():
    rng = np.random.default_rng(1)
    states = rng.uniform(-0.4, 0.4, (6, 3))
    g = 0.35
    uni = rhs_network(states, NetworkConfig.uniform(6, gamma=g))
    mx, my, mz = states.T
    n = 6
    sx, sy = mx.sum() - mx, my.sum() - my
    ref = np.column_stack([
        mx * mz + g / n * mz * sy,
        -0.9 * mz + my * mz - g / n * mz * sx,
        0.9 * my - (mx**2 + my**2) + g / n * (my * sx - mx * sy),
    ])
    np.testing.assert_allclose(uni, ref, atol=1e-15)


def test_network_flat_state_and_mismatch():
    cfg = NetworkConfig.uniform(3, gamma=0.2)
    s = np.arange(9.0) / 20
    np.testing.assert_array_equal(rhs_network(s, cfg), rhs_network(s.reshape(3, 3), cfg).ravel())
    with pytest.raises(ValueError):
        rhs_network(np.zeros((4, 3)), cfg)


def test_network_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(omega=[0.9, 0.9], kappa=1.0, coupling=[[0, 1], [0.5, 0]])
    with pytest.raises(ValueError):
        NetworkConfig(omega=[0.9, 0.9], kappa=1.0, coupling=[[1, 0], [0, 0]])
    with pytest.raises(ValueError):
        NetworkConfig(omega=[0.9, 0.9], kappa=1.0, coupling=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        NetworkConfig(omega=[0.9, 0.9], kappa=1.0, coupling=np.zeros((2, 2)), labels=[0])
    with pytest.raises(ValueError):
        NetworkConfig.uniform(4, topology="intra")


def test_intra_topology_blocks():
    cfg = NetworkConfig.uniform(4, gamma=0.5, labels=[0, 0, 1, 1], topology="intra")
    expected = 0.5 * np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    np.testing.assert_array_equal(cfg.coupling, expected)


def test_conservation_long_run():
    rec = simulate_single([0, 0, 0.1], P09, 1000.0)
    assert rec.norm_drift[0] < 1e-8
    assert rec.physical()


def test_network_norms_conserved_and_physical():
    ms = m_for_frequency(np.linspace(0.2, 0.8, 6), P09)
    cfg = NetworkConfig.uniform(6, gamma=0.35)
    rec = simulate_network(initial_states(ms), cfg, 200.0)
    assert rec.physical()
    assert np.max(rec.norm_drift) < 1e-8


def test_melted_state_settles_on_stable_branch():
    m = 0.95
    rec = simulate_single([0, 0, m], P09, 300.0)
    target = np.array([0.0, 0.9, -np.sqrt(m**2 - 0.81)])
    np.testing.assert_allclose(rec.states[-1, 0], target, atol=1e-8)


def test_sustained_oscillation_no_decay():
    # about 4000 periods at omega = sqrt(0.8)
    w = np.sqrt(0.8)
    t_end = 4000 * 2 * np.pi / w
    rec = simulate_single([0, 0, 0.1], P09, t_end, dt=0.5, rtol=1e-12, atol=1e-14)
    mz = rec.states[:, 0, 2]
    early = mz[rec.t < 200].max() - mz[rec.t < 200].min()
    late = mz[rec.t > t_end - 200].max() - mz[rec.t > t_end - 200].min()
    assert late == pytest.approx(early, rel=1e-3)


def test_integration_error_reports_time():
    # y' = y^2 from y(0) = 1 blows up at t = 1
    with pytest.raises(IntegrationError, match=r"integration stopped at t=") as exc:
        integrate(lambda y: y * y, np.array([1.0]), (0.0, 2.0), dt=0.1)
    assert exc.value.t == pytest.approx(1.0, abs=1e-3)


def test_integrate_validation():
    with pytest.raises(ValueError):
        integrate(lambda y: -y, [1.0], (1.0, 0.0), dt=0.1)
    with pytest.raises(ValueError):
        integrate(lambda y: -y, [np.nan], (0.0, 1.0), dt=0.1)
    with pytest.raises(ValueError):
        integrate(lambda y: -y, [1.0], (0.0, 1.0))


def test_uniform_grid():
    rec = simulate_single([0, 0, 0.5], P09, 10.0, dt=0.25)
    np.testing.assert_allclose(np.diff(rec.t), 0.25, atol=1e-12)
    assert rec.t[-1] == pytest.approx(10.0)
    assert default_dt(0.9) == 0.1 and default_dt(100.0) == pytest.approx(2 * np.pi / 2000)


def test_integrator_order():
    # error against a very tight reference shrinks as the tolerance is tightened
    y0 = [0.2, -0.1, 0.3]
    ref = simulate_single(y0, P09, 50.0, dt=1.0, rtol=1e-13, atol=1e-15).states
    errs = []
    for tol in (1e-6, 1e-8, 1e-10):
        got = simulate_single(y0, P09, 50.0, dt=1.0, rtol=tol, atol=tol * 1e-2).states
        errs.append(np.max(np.abs(got - ref)))
    assert errs[0] > errs[1] > errs[2]
    # an 8th-order method gains roughly a factor 100 per 100x tolerance
    assert errs[0] / errs[2] > 1e2


def test_fixed_points_center_example():
    rep = fixed_points(0.1, P09)
    assert rep.classification == "center"
    assert rep.omega_pred == pytest.approx(np.sqrt(0.80), abs=1e-15)
    assert rep.m1_physical and not rep.m2_physical


def test_fixed_points_saddle_example():
    rep = fixed_points(0.95, P09)
    assert rep.classification == "saddle"
    r = np.sqrt(0.95**2 - 0.81)
    np.testing.assert_allclose(sorted(rep.lambda1.real), [-r, 0, r], atol=1e-15)
    assert rep.omega_pred is None
    assert rep.m2_physical and not rep.m1_physical


def test_fixed_points_boundary_flag():
    rep = fixed_points(0.9, P09)
    assert rep.degenerate and rep.classification is None
    with pytest.raises(ValueError):
        fixed_points(0.0, P09)
    with pytest.raises(ValueError):
        fixed_points(1.2, P09)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.11, 2.0))
def test_only_one_fixed_point_family_physical(m, ratio):
    rep = fixed_points(m, ModelParams(ratio, 1.0))
    if not rep.degenerate:
        assert rep.m1_physical != rep.m2_physical


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.11, 2.0), st.floats(0.2, 3.0))
def test_jacobian_matches_closed_form(m, ratio, kappa):
    par = ModelParams(ratio * kappa, kappa)
    rep = fixed_points(m, par)
    if rep.degenerate or abs(m - ratio) < 1e-3:
        return
    for p in rep.physical_points():
        ev = np.linalg.eigvals(numerical_jacobian(lambda s: rhs_single(s, par), p))
        ev = ev[np.argsort(ev.imag + ev.real)]
        ref = rep.lambda1[np.argsort(rep.lambda1.imag + rep.lambda1.real)]
        if rep.m2_physical:
            # M2: one zero plus two equal real eigenvalues of the branch's sign
            branch = 0 if p[2] > 0 else 1
            ref = rep.lambda2[branch]
            ref = ref[np.argsort(ref.real)]
            ev = ev[np.argsort(ev.real)]
        np.testing.assert_allclose(ev, ref, atol=1e-6)


def test_jacobian_at_origin():
    jac = numerical_jacobian(lambda s: rhs_single(s, P09), np.zeros(3))
    expected = np.zeros((3, 3))
    expected[1, 2] = -0.9
    expected[2, 1] = 0.9
    np.testing.assert_allclose(jac, expected, atol=1e-12)


def test_jacobian_against_analytic():
    # independent route: hand-derived Jacobian of the single-CTC flow
    rng = np.random.default_rng(7)
    om, ka = 0.9, 1.3
    par = ModelParams(om, ka)
    for _ in range(5):
        x, y, z = rng.uniform(-1, 1, 3)
        exact = np.array([
            [ka * z, 0, ka * x],
            [0, ka * z, -om + ka * y],
            [-2 * ka * x, om - 2 * ka * y, 0],
        ])
        jac = numerical_jacobian(lambda s: rhs_single(s, par), [x, y, z])
        np.testing.assert_allclose(jac, exact, atol=1e-6)


def test_phase_diagram_labels():
    ms = np.linspace(0.05, 1.0, 20)
    rs = np.linspace(0.2, 2.0, 10)
    pd = phase_diagram(ms, rs)
    for i, m in enumerate(ms):
        for j, r in enumerate(rs):
            if abs(m - r) <= 1e-12:
                assert pd.labels[i, j] == BOUNDARY
            else:
                assert pd.labels[i, j] == (TIME_CRYSTAL if m < r else MELTED)
    pd = phase_diagram([0.5, 0.95, 1.0], [0.9, 1.0, 1.2])
    assert list(pd.labels[:, 2]) == [TIME_CRYSTAL] * 3
    assert pd.labels[0, 0] == TIME_CRYSTAL and pd.labels[1, 0] == MELTED
    # symmetric sector: transition exactly at Omega/kappa = 1
    assert pd.labels[2, 1] == BOUNDARY
    with pytest.raises(ValueError):
        phase_diagram([0.0], [1.0])


def test_phase_diagram_cross_check():
    pd = phase_diagram([0.1, 0.5, 0.95], [0.3, 0.9, 1.5], cross_check=4, seed=2)
    assert len(pd.checks) == 4 and pd.agreement()


def test_phase_portrait_transform():
    p, q, bad = phase_portrait(np.array([[0.4, 0.0, 0.2], [0.0, 0.3, -0.1], [0.0, 0.0, 0.5]]))
    assert p[0] == 0.0 and q[0] == 0.2
    assert p[1] == pytest.approx(np.pi / 2) and q[1] == -0.1
    assert bad.tolist() == [False, False, True] and np.isnan(p[2])


def test_phase_portrait_at_saddle():
    rep = fixed_points(0.95, P09)
    p, q, _ = phase_portrait(rep.m2.real)
    np.testing.assert_allclose(p, [np.pi / 2, np.pi / 2])
    s = np.sqrt(0.95**2 - 0.81)
    np.testing.assert_allclose(q, [s, -s])


def test_phase_portrait_closed_loop():
    m = 0.3
    w = float(oscillation_frequency(m, P09))
    period = 2 * np.pi / w
    y0 = [0.2, 0.1, 0.0]
    y0 = np.array(y0) * m / np.linalg.norm(y0)
    rec = simulate_single(y0, P09, period, dt=period / 400)
    p, q, _ = phase_portrait(rec.states[:, 0])
    assert abs(p[-1] - p[0]) < 1e-6 and abs(q[-1] - q[0]) < 1e-6
    # loop encircles the center M1 in (P, Q)
    cp, cq, _ = phase_portrait(fixed_points(m, P09).m1.real[:1])
    assert q.min() < cq[0] < q.max() and p.min() < cp[0] < p.max()


def test_frequency_inversion():
    w = np.array([0.2, 0.5, 0.85])
    ms = m_for_frequency(w, P09)
    np.testing.assert_allclose(oscillation_frequency(ms, P09), w, rtol=1e-14)
    with pytest.raises(ValueError):
        m_for_frequency([0.95], P09)


def test_initial_states_jitter_preserves_norm():
    ms = np.array([0.1, 0.5, 0.7])
    s = initial_states(ms, jitter=0.05, rng=np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(s, axis=1), ms, rtol=1e-14)
    assert not np.array_equal(s, initial_states(ms))


def test_trajectory_roundtrip(tmp_path):
    ms = [0.1, 0.4, 0.6]
    rec = simulate_network(initial_states(ms), NetworkConfig.uniform(3, gamma=0.3), 5.0)
    for name in ("traj.csv", "traj.bin"):
        back = read_trajectory(write_trajectory(rec, tmp_path / name))
        assert np.array_equal(back.t, rec.t) and np.array_equal(back.states, rec.states)
    header = (tmp_path / "traj.csv").read_text().splitlines()[0]
    assert header == "t,mx_0,my_0,mz_0,mx_1,my_1,mz_1,mx_2,my_2,mz_2"


def test_binary_layout(tmp_path):
    t = np.array([0.0, 0.5])
    states = np.arange(12.0).reshape(2, 2, 3)
    raw = write_trajectory_bin(TrajectoryRecord(t, states), tmp_path / "x.bin").read_bytes()
    assert raw[:4] == b"CTCT"
    assert int.from_bytes(raw[8:16], "little") == 2
    assert int.from_bytes(raw[16:24], "little") == 2
    body = np.frombuffer(raw[24:], dtype="<f8")
    np.testing.assert_array_equal(body[:2], t)
    # first column is mx of CTC 0 over time
    np.testing.assert_array_equal(body[2:4], states[:, 0, 0])
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_trajectory_bin(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_trajectory_bin(tmp_path / "short.bin")
