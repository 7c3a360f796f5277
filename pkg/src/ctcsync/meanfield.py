"""Mean-field dynamics of single and coupled continuous time crystals.

A single CTC is described by the rescaled Bloch vector ``(m_x, m_y, m_z)``:

    dm_x/dt = kappa m_x m_z
    dm_y/dt = -Omega m_z + kappa m_y m_z
    dm_z/dt = Omega m_y - kappa (m_x^2 + m_y^2)

The norm ``m`` is conserved and labels the spin sector (``m = J/S``). A
network adds the coherent exchange terms, with ``Gamma_ab / n`` weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError
from .liouvillian import ModelParams

__all__ = [
    "NetworkConfig",
    "TrajectoryRecord",
    "FixedPointReport",
    "PhaseDiagram",
    "rhs_single",
    "rhs_network",
    "integrate",
    "simulate_single",
    "simulate_network",
    "default_dt",
    "fixed_points",
    "numerical_jacobian",
    "phase_diagram",
    "phase_portrait",
    "oscillation_frequency",
    "m_for_frequency",
    "initial_states",
    "TIME_CRYSTAL",
    "MELTED",
    "BOUNDARY",
]

TIME_CRYSTAL = "time-crystal"
MELTED = "melted"
BOUNDARY = "boundary"

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12


def rhs_single(state, params: ModelParams) -> np.ndarray:
    mx, my, mz = state
    om, ka = params.omega, params.kappa
    return np.array([ka * mx * mz, -om * mz + ka * my * mz, om * my - ka * (mx * mx + my * my)])


@dataclass(frozen=True)
class NetworkConfig:
    """Per-CTC drive and dissipation plus a symmetric coupling matrix.

    ``labels`` optionally assigns each CTC to an ensemble (0, 1, ...).
    """

    omega: np.ndarray
    kappa: np.ndarray
    coupling: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        n = omega.size
        kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), (n,)).copy()
        coupling = np.asarray(self.coupling, dtype=float)
        if coupling.shape != (n, n):
            raise ValueError(f"coupling has shape {coupling.shape}, expected {(n, n)}")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(kappa))
                and np.all(np.isfinite(coupling))):
            raise ValueError("network parameters must be finite")
        if np.any(kappa <= 0) or np.any(omega < 0):
            raise ValueError("need kappa > 0 and omega >= 0 for every CTC")
        if not np.array_equal(coupling, coupling.T):
            raise ValueError("coupling matrix must be symmetric")
        if np.any(np.diag(coupling) != 0):
            raise ValueError("coupling matrix must have zero diagonal")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (n,):
                raise ValueError(f"labels must cover all {n} CTCs exactly once")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.omega.size

    @property
    def coupled(self) -> bool:
        return bool(np.any(self.coupling))

    @classmethod
    def uniform(cls, n: int, omega: float = 0.9, kappa: float = 1.0, gamma: float = 0.0,
                labels=None, topology: str = "all") -> "NetworkConfig":
        """Identical CTCs with coupling ``gamma`` between every pair.

        ``topology="intra"`` keeps only pairs sharing a label
        (``Gamma delta_{eps_i eps_j}``); ``"none"`` switches coupling off.
        """
        g = np.full((n, n), float(gamma))
        np.fill_diagonal(g, 0.0)
        if topology == "intra":
            if labels is None:
                raise ValueError("intra-ensemble coupling needs labels")
            lab = np.asarray(labels)
            g = g * (lab[:, None] == lab[None, :])
        elif topology == "none":
            g[:] = 0.0
        elif topology != "all":
            raise ValueError(f"unknown topology {topology!r}")
        return cls(omega=np.full(n, float(omega)), kappa=np.full(n, float(kappa)),
                   coupling=g, labels=labels)


def rhs_network(state, config: NetworkConfig) -> np.ndarray:
    """Right-hand side for ``n`` coupled CTCs; ``state`` is ``(n, 3)`` or flat."""
    s = np.asarray(state, dtype=float)
    flat = s.ndim == 1
    s = s.reshape(-1, 3)
    if s.shape[0] != config.n:
        raise ValueError(f"state holds {s.shape[0]} CTCs, config has {config.n}")
    mx, my, mz = s[:, 0], s[:, 1], s[:, 2]
    om, ka = config.omega, config.kappa
    out = np.empty_like(s)
    out[:, 0] = ka * mx * mz
    out[:, 1] = -om * mz + ka * my * mz
    out[:, 2] = om * my - ka * (mx * mx + my * my)
    if config.coupled:
        n = config.n
        xs = config.coupling @ mx / n
        ys = config.coupling @ my / n
        out[:, 0] += mz * ys
        out[:, 1] -= mz * xs
        out[:, 2] += my * xs - mx * ys
    return out.ravel() if flat else out


@dataclass(frozen=True)
class TrajectoryRecord:
    """States sampled on a uniform grid, with per-CTC norm bookkeeping."""

    t: np.ndarray
    states: np.ndarray  # (len(t), n, 3)
    norm_drift: np.ndarray = field(init=False)
    max_norm: float = field(init=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:
            states = states[:, None, :]
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "states", states)
        sq = np.sum(states**2, axis=2)
        object.__setattr__(self, "norm_drift", np.max(np.abs(sq - sq[0]), axis=0))
        object.__setattr__(self, "max_norm", float(np.sqrt(sq.max())))

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def mz(self) -> np.ndarray:
        """``(n, len(t))`` array of m_z series."""
        return self.states[:, :, 2].T

    def physical(self, tol: float = 1e-6) -> bool:
        return self.max_norm <= 1 + tol

    def unphysical_ctcs(self, tol: float = 1e-6) -> np.ndarray:
        norms = np.sqrt(np.max(np.sum(self.states**2, axis=2), axis=0))
        return np.flatnonzero(norms > 1 + tol)

    def window(self, t0: float, t1: float | None = None) -> "TrajectoryRecord":
        t1 = self.t[-1] if t1 is None else t1
        sel = (self.t >= t0 - 1e-9) & (self.t <= t1 + 1e-9)
        return TrajectoryRecord(self.t[sel], self.states[sel])


def default_dt(omega_max: float, oversample: int = 20, cap: float = 0.1) -> float:
    """Sampling step resolving ``omega_max`` at least ``oversample`` times per period."""
    if omega_max <= 0:
        return cap
    return min(cap, 2 * np.pi / (oversample * omega_max))


def integrate(
    fun: Callable[[np.ndarray], np.ndarray],
    y0,
    t_span: tuple[float, float],
    *,
    dt: float | None = None,
    t_eval: np.ndarray | None = None,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    method: str = "DOP853",
) -> TrajectoryRecord:
    """Adaptive embedded Runge-Kutta integration sampled on a uniform grid.

    ``fun`` maps a state shaped like ``y0`` to its time derivative.
    """
    y0 = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial state must be finite")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    if t_eval is None:
        if dt is None or dt <= 0:
            raise ValueError("give a positive dt or an explicit t_eval")
        k = int(round((t1 - t0) / dt))
        t_eval = t0 + dt * np.arange(k + 1)
        t_eval = t_eval[t_eval <= t1 + 1e-9 * dt]
        t_eval[-1] = min(t_eval[-1], t1)
    shape = y0.shape
    last_t = [t0]

    def wrapped(t, y):
        last_t[0] = t
        return np.asarray(fun(y.reshape(shape))).ravel()

    sol = solve_ivp(
        wrapped,
        (t0, t1),
        y0.ravel(),
        method=method,
        t_eval=t_eval,
        rtol=rtol,
        atol=atol,
    )
    if sol.status != 0:
        t_fail = float(last_t[0])
        raise IntegrationError(f"integration stopped at t={t_fail!r}: {sol.message}", t_fail)
    states = sol.y.T.reshape((-1,) + shape)
    if states.ndim == 2:
        states = states[:, None, :]
    return TrajectoryRecord(sol.t, states)


def simulate_single(state, params: ModelParams, t_end: float, *, dt: float | None = None,
                    **kw) -> TrajectoryRecord:
    dt = default_dt(params.omega) if dt is None else dt
    return integrate(lambda y: rhs_single(y, params), state, (0.0, t_end), dt=dt, **kw)


def simulate_network(state, config: NetworkConfig, t_end: float, *, dt: float | None = None,
                     **kw) -> TrajectoryRecord:
    state = np.asarray(state, dtype=float).reshape(config.n, 3)
    dt = default_dt(float(config.omega.max())) if dt is None else dt
    return integrate(lambda y: rhs_network(y, config), state, (0.0, t_end), dt=dt, **kw)


def oscillation_frequency(m, params: ModelParams):
    """Angular frequency ``kappa sqrt((Omega/kappa)^2 - m^2)``; NaN where melted."""
    r = params.ratio
    m = np.asarray(m, dtype=float)
    with np.errstate(invalid="ignore"):
        return params.kappa * np.sqrt(r * r - m * m)


def m_for_frequency(w, params: ModelParams):
    """Sector norm whose uncoupled CTC oscillates at angular frequency ``w``."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0) or np.any(w >= params.omega):
        raise ValueError("target frequencies must lie in (0, Omega)")
    return np.sqrt(params.ratio**2 - (w / params.kappa) ** 2)


def initial_states(ms, *, jitter: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """``(0, 0, m_a)`` for each CTC, optionally tilted by small random angles.

    The tilt keeps each norm ``m_a`` exactly; ``jitter`` is the polar angle
    scale in radians.
    """
    ms = np.atleast_1d(np.asarray(ms, dtype=float))
    out = np.zeros((ms.size, 3))
    out[:, 2] = ms
    if jitter:
        rng = np.random.default_rng() if rng is None else rng
        theta = jitter * np.abs(rng.standard_normal(ms.size))
        phi = rng.uniform(0, 2 * np.pi, ms.size)
        out = ms[:, None] * np.column_stack(
            [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
        )
    return out


@dataclass(frozen=True)
class FixedPointReport:
    m: float
    ratio: float
    kappa: float
    m1: np.ndarray  # (2, 3) complex, +/- branches
    m2: np.ndarray  # (2, 3) complex
    lambda1: np.ndarray  # (3,) complex
    lambda2: np.ndarray  # (2, 3) complex, per M2 branch
    m1_physical: bool
    m2_physical: bool
    degenerate: bool
    classification: str | None
    omega_pred: float | None

    def physical_points(self) -> np.ndarray:
        pts = []
        if self.m1_physical:
            pts.extend(self.m1.real)
        if self.m2_physical:
            pts.extend(self.m2.real)
        return np.array(pts).reshape(-1, 3)


def fixed_points(m: float, params: ModelParams, *, tol: float = 1e-12) -> FixedPointReport:
    """Closed-form fixed points and Jacobian spectra of the single-CTC flow."""
    if not 0 < m <= 1:
        raise ValueError(f"sector norm must satisfy 0 < m <= 1, got {m}")
    ka = params.kappa
    r = params.ratio
    csqrt = np.emath.sqrt
    mx = m * csqrt(1 - (m / r) ** 2) if r > 0 else np.nan
    my = m * m / r if r > 0 else np.nan
    m1 = np.array([[mx, my, 0], [-mx, my, 0]], dtype=complex)
    mz = csqrt(m * m - r * r)
    m2 = np.array([[0, r, mz], [0, r, -mz]], dtype=complex)
    root = ka * csqrt(m * m - r * r)
    lambda1 = np.array([0, root, -root], dtype=complex)
    lambda2 = np.array([[0, root, root], [0, -root, -root]], dtype=complex)
    degenerate = abs(m - r) <= tol * max(1.0, r)
    m1_phys = bool(r > 0 and m <= r)
    m2_phys = bool(m >= r)
    if degenerate:
        classification = None
    else:
        classification = "center" if m < r else "saddle"
    omega_pred = float(ka * np.sqrt(r * r - m * m)) if (m < r and not degenerate) else None
    return FixedPointReport(
        m=float(m), ratio=float(r), kappa=float(ka), m1=m1, m2=m2, lambda1=lambda1,
        lambda2=lambda2, m1_physical=m1_phys, m2_physical=m2_phys, degenerate=degenerate,
        classification=classification, omega_pred=omega_pred,
    )


def numerical_jacobian(fun: Callable[[np.ndarray], np.ndarray], state,
                       h: float | None = None) -> np.ndarray:
    """Central-difference Jacobian with step ``1e-6 * max(1, |state|_inf)``."""
    x = np.asarray(state, dtype=float).ravel()
    if h is None:
        h = 1e-6 * max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
    shape = np.asarray(state).shape
    f = lambda y: np.asarray(fun(y.reshape(shape)), dtype=float).ravel()
    jac = np.empty((f(x).size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        jac[:, k] = (f(x + e) - f(x - e)) / (2 * h)
    return jac


def phase_portrait(states) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map Bloch vectors to ``(P, Q) = (arctan(m_y/m_x), m_z)``.

    ``P`` uses the principal branch, with ``+/- pi/2`` where ``m_x = 0``.
    Returns ``(P, Q, undefined)``; ``undefined`` marks ``m_x = m_y = 0``
    samples, whose ``P`` is NaN.
    """
    s = np.asarray(states, dtype=float).reshape(-1, 3)
    mx, my, mz = s[:, 0], s[:, 1], s[:, 2]
    undefined = (mx == 0) & (my == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(mx != 0, np.arctan(my / np.where(mx != 0, mx, 1.0)),
                     np.sign(my) * np.pi / 2)
    p = np.where(undefined, np.nan, p)
    return p, mz.copy(), undefined


@dataclass(frozen=True)
class PhaseDiagram:
    m: np.ndarray
    ratio: np.ndarray
    labels: np.ndarray  # (len(m), len(ratio)) of str
    checks: list[dict]

    def agreement(self) -> bool:
        return all(c["agrees"] for c in self.checks)


def _label(m: float, r: float, tol: float) -> str:
    if abs(m - r) <= tol * max(1.0, r):
        return BOUNDARY
    return TIME_CRYSTAL if m < r else MELTED


def oscillation_amplitude(m: float, ratio: float, kappa: float = 1.0, *,
                          settle: float = 1e-4, t_cap: float = 5000.0) -> float:
    """Peak-to-peak m_z late in a run started from ``(0, 0, m)``."""
    params = ModelParams(ratio * kappa, kappa)
    if m < ratio:
        period = 2 * np.pi / float(oscillation_frequency(m, params))
        t_settle, window = 0.0, max(3 * period, 20.0)
    else:
        rate = kappa * np.sqrt(max(m * m - ratio * ratio, 1e-12))
        t_settle, window = min(np.log(max(m, settle) / settle) / rate, t_cap), 20.0
    t_end = t_settle + window
    rec = simulate_single([0.0, 0.0, m], params, t_end)
    mz = rec.window(t_end - window).states[:, 0, 2]
    return float(mz.max() - mz.min())


def phase_diagram(
    m_grid: Sequence[float],
    ratio_grid: Sequence[float],
    *,
    kappa: float = 1.0,
    cross_check: int = 0,
    seed: int | None = None,
    threshold: float = 1e-3,
    tol: float = 1e-12,
) -> PhaseDiagram:
    """Label each ``(m, Omega/kappa)`` cell from the fixed-point analysis.

    With ``cross_check > 0``, that many randomly chosen non-boundary cells are
    integrated from ``(0, 0, m)``; a cell agrees when the late-time m_z
    amplitude exceeds ``threshold`` exactly when it is labelled time-crystal.
    """
    m_grid = np.asarray(m_grid, dtype=float)
    ratio_grid = np.asarray(ratio_grid, dtype=float)
    if np.any((m_grid <= 0) | (m_grid > 1)) or np.any(ratio_grid <= 0):
        raise ValueError("need m in (0, 1] and Omega/kappa > 0")
    labels = np.array([[_label(m, r, tol) for r in ratio_grid] for m in m_grid], dtype=object)
    checks = []
    if cross_check:
        rng = np.random.default_rng(seed)
        cells = np.argwhere(labels != BOUNDARY)
        picks = rng.choice(len(cells), size=min(cross_check, len(cells)), replace=False)
        for i, j in cells[np.sort(picks)]:
            m, r = float(m_grid[i]), float(ratio_grid[j])
            amp = oscillation_amplitude(m, r, kappa)
            oscillating = amp > threshold
            checks.append({"m": m, "ratio": r, "label": labels[i, j], "amplitude": amp,
                           "agrees": oscillating == (labels[i, j] == TIME_CRYSTAL)})
    return PhaseDiagram(m=m_grid, ratio=ratio_grid, labels=labels, checks=checks)
