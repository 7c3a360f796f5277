"""Block Liouvillians of the driven collective-decay model.

The generator acting on a density matrix in one spin-J block is

    L(rho) = -i [Omega S_x, rho] + (kappa / S) (S_- rho S_+ - {S_+ S_-, rho} / 2)

with ``S = N/2`` (not ``J``). Density matrices are vectorized by stacking
columns, ``vec(A rho B) = (B^T kron A) vec(rho)``, throughout the package.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import BlockTooLargeError, SpectrumError, ToleranceError
from .spin import SpinOperators, SpinSector, build_operators, enumerate_sectors

__all__ = [
    "ModelParams",
    "LiouvillianBlock",
    "SpectralResult",
    "SpaceSpectrum",
    "ExactEvolution",
    "build_block",
    "spectrum",
    "dominant_over_space",
    "select_dominant",
    "evolve_exact",
    "highest_weight_state",
    "sector_for_m",
    "vec",
    "unvec",
    "write_spectrum_csv",
    "spectrum_summary",
    "fit_inverse_n",
]

DEFAULT_BUILD_CAP = 1 << 16
DEFAULT_EIG_CAP = 4096
ZERO_TOL = 1e-9
IMAG_TOL = 1e-6
TIE_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    omega: float
    kappa: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.omega) and math.isfinite(self.kappa)):
            raise ValueError("omega and kappa must be finite")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")

    @property
    def ratio(self) -> float:
        return self.omega / self.kappa


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


@dataclass(frozen=True)
class LiouvillianBlock:
    sector: SpinSector
    params: ModelParams
    superop: np.ndarray | sp.spmatrix
    ops: SpinOperators = field(repr=False)

    @property
    def dim(self) -> int:
        return self.sector.dim

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.superop)

    def dense(self) -> np.ndarray:
        return self.superop.toarray() if self.is_sparse else self.superop

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.superop @ vec(rho), self.dim)


def build_block(
    sector: SpinSector,
    params: ModelParams,
    *,
    sparse: bool = False,
    max_superop_dim: int = DEFAULT_BUILD_CAP,
) -> LiouvillianBlock:
    if not isinstance(sector, SpinSector):
        raise ValueError(f"expected SpinSector, got {type(sector).__name__}")
    if not isinstance(params, ModelParams):
        raise ValueError(f"expected ModelParams, got {type(params).__name__}")
    d = sector.dim
    if d * d > max_superop_dim:
        raise BlockTooLargeError(
            f"{sector.label()}: superoperator dimension {d * d} exceeds cap {max_superop_dim}"
        )
    ops = build_operators(sector.two_j / 2)
    h = params.omega * ops.sx
    pm = ops.sp @ ops.sm
    rate = params.kappa / sector.s
    if sparse:
        kron = lambda a, b: sp.kron(sp.csr_matrix(a), sp.csr_matrix(b), format="csr")
        eye = sp.identity(d, dtype=complex, format="csr")
    else:
        kron = np.kron
        eye = np.eye(d, dtype=complex)
    superop = -1j * (kron(eye, h) - kron(h.T, eye)) + rate * (
        kron(ops.sm.conj(), ops.sm) - 0.5 * kron(eye, pm) - 0.5 * kron(pm.T, eye)
    )
    if sparse:
        superop = sp.csr_matrix(superop)
    return LiouvillianBlock(sector=sector, params=params, superop=superop, ops=ops)


def select_dominant(
    values: Sequence[complex] | np.ndarray,
    rule: str = "oscillatory",
    *,
    zero_tol: float = ZERO_TOL,
    imag_tol: float = IMAG_TOL,
    tie_tol: float = TIE_TOL,
) -> int | None:
    """Index of the dominant non-stationary eigenvalue, or None.

    ``rule="slowest"``: maximal real part among ``|lam| >= zero_tol``; ties
    broken by larger ``|Im|``, then positive ``Im``.
    ``rule="oscillatory"``: the same ordering restricted to ``|Im| > imag_tol``,
    falling back to ``"slowest"`` when the block has no oscillatory mode.
    """
    values = np.asarray(values, dtype=complex)
    idx = np.flatnonzero(np.abs(values) >= zero_tol)
    if rule == "oscillatory":
        osc = idx[np.abs(values[idx].imag) > imag_tol]
        if osc.size:
            idx = osc
    elif rule != "slowest":
        raise ValueError(f"unknown dominant-eigenvalue rule {rule!r}")
    if idx.size == 0:
        return None
    re = values[idx].real
    idx = idx[re >= re.max() - tie_tol]
    aim = np.abs(values[idx].imag)
    idx = idx[aim >= aim.max() - tie_tol]
    pos = idx[values[idx].imag > 0]
    return int(pos[0] if pos.size else idx[0])


@dataclass(frozen=True)
class SpectralResult:
    n_spins: int
    two_j: int
    eigenvalues: np.ndarray
    lambda1: complex | None
    slowest: complex | None
    n_stationary: int
    rule: str

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def m(self) -> float:
        return self.two_j / self.n_spins

    @property
    def gap(self) -> float | None:
        return None if self.lambda1 is None else -self.lambda1.real


def spectrum(
    block: LiouvillianBlock,
    *,
    max_dim: int = DEFAULT_EIG_CAP,
    rule: str = "oscillatory",
    zero_tol: float = ZERO_TOL,
) -> SpectralResult:
    size = block.dim**2
    label = block.sector.label()
    if size > max_dim:
        raise BlockTooLargeError(f"{label}: dense eigensolve of size {size} exceeds cap {max_dim}")
    try:
        ev = np.linalg.eigvals(block.dense())
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(f"eigensolver failed on block {label}: {exc}") from exc
    if not np.all(np.isfinite(ev)):
        raise SpectrumError(f"non-finite eigenvalues on block {label}")
    ev = ev[np.lexsort((-ev.imag, -ev.real))]
    k = select_dominant(ev, rule, zero_tol=zero_tol)
    ks = select_dominant(ev, "slowest", zero_tol=zero_tol)
    return SpectralResult(
        n_spins=block.sector.n_spins,
        two_j=block.sector.two_j,
        eigenvalues=ev,
        lambda1=None if k is None else complex(ev[k]),
        slowest=None if ks is None else complex(ev[ks]),
        n_stationary=int(np.sum(np.abs(ev) < zero_tol)),
        rule=rule,
    )


@dataclass(frozen=True)
class SpaceSpectrum:
    """Per-sector spectra of one N, plus the globally dominant eigenvalue."""

    n_spins: int
    params: ModelParams
    sectors: list[SpectralResult]
    dominant: SpectralResult | None
    rule: str

    @property
    def lambda1(self) -> complex | None:
        return None if self.dominant is None else self.dominant.lambda1

    @property
    def dominant_j(self) -> float | None:
        return None if self.dominant is None else self.dominant.j

    @property
    def dominant_m(self) -> float | None:
        return None if self.dominant is None else self.dominant.m

    def by_two_j(self, two_j: int) -> SpectralResult:
        for r in self.sectors:
            if r.two_j == two_j:
                return r
        raise KeyError(two_j)


def dominant_over_space(
    n,
    params: ModelParams,
    *,
    symmetric_only: bool = False,
    rule: str = "oscillatory",
    max_dim: int = DEFAULT_EIG_CAP,
) -> SpaceSpectrum:
    sectors = enumerate_sectors(n)
    if symmetric_only:
        sectors = sectors[:1]
    results = []
    for sec in sectors:
        try:
            results.append(spectrum(build_block(sec, params), max_dim=max_dim, rule=rule))
        except (SpectrumError, BlockTooLargeError) as exc:
            raise type(exc)(f"sector {sec.label()}: {exc}") from exc
    # one candidate per sector is enough: the rule is a total order
    cands = [r.lambda1 if r.lambda1 is not None else np.nan for r in results]
    cands = np.array(cands, dtype=complex)
    finite = np.flatnonzero(np.isfinite(cands))
    k = select_dominant(cands[finite], rule) if finite.size else None
    dominant = None if k is None else results[finite[k]]
    return SpaceSpectrum(n_spins=sectors[0].n_spins, params=params, sectors=results,
                         dominant=dominant, rule=rule)


def highest_weight_state(sector: SpinSector) -> np.ndarray:
    rho = np.zeros((sector.dim, sector.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def sector_for_m(n: int, m: float) -> SpinSector:
    """Sector with ``J = m N / 2``; raises if that J is not allowed for N."""
    two_j = m * n
    if abs(two_j - round(two_j)) > 1e-9:
        raise ValueError(f"m={m} gives non-half-integer J for N={n}")
    return SpinSector(n, int(round(two_j)))


@dataclass(frozen=True)
class ExactEvolution:
    t: np.ndarray
    rho: np.ndarray  # (len(t), d, d)
    m: np.ndarray  # (len(t), 3): <S_alpha>/S
    trace_error: float
    hermiticity_error: float


def _check_density_matrix(rho0: np.ndarray, dim: int, tol: float = 1e-10) -> np.ndarray:
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise ValueError(f"rho0 has shape {rho0.shape}, expected {(dim, dim)}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > tol:
        raise ValueError("rho0 is not Hermitian")
    if abs(np.trace(rho0) - 1) > tol:
        raise ValueError(f"rho0 has trace {np.trace(rho0).real}, expected 1")
    if np.linalg.eigvalsh(0.5 * (rho0 + rho0.conj().T)).min() < -tol:
        raise ValueError("rho0 is not positive semidefinite")
    return rho0


def evolve_exact(
    block: LiouvillianBlock,
    rho0: np.ndarray,
    t_grid: Sequence[float] | np.ndarray,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    trace_tol: float = 1e-8,
) -> ExactEvolution:
    """Integrate ``d vec(rho)/dt = L vec(rho)`` and sample on ``t_grid``.

    Returned ``m`` holds ``<S_x, S_y, S_z> / S`` with ``S = N/2``.
    """
    d = block.dim
    rho0 = _check_density_matrix(rho0, d)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be a non-empty strictly increasing 1-d array")
    superop = block.superop
    if t_grid.size == 1:
        ys = vec(rho0)[:, None]
    else:
        sol = solve_ivp(
            lambda t, v: superop @ v,
            (t_grid[0], t_grid[-1]),
            vec(rho0),
            method="DOP853",
            t_eval=t_grid,
            rtol=rtol,
            atol=atol,
        )
        if sol.status != 0:
            raise ToleranceError(f"{block.sector.label()}: integration failed: {sol.message}")
        ys = sol.y
    rho = np.stack([unvec(ys[:, k], d) for k in range(ys.shape[1])])
    trace = np.trace(rho, axis1=1, axis2=2)
    trace_error = float(np.max(np.abs(trace - 1)))
    if trace_error > trace_tol:
        raise ToleranceError(
            f"{block.sector.label()}: trace drift {trace_error:.3e} exceeds {trace_tol:.1e}"
        )
    herm = float(np.max(np.abs(rho - rho.conj().transpose(0, 2, 1))))
    ops = block.ops
    s = block.sector.s
    m = np.stack(
        [np.einsum("ij,tji->t", op, rho).real / s for op in (ops.sx, ops.sy, ops.sz)],
        axis=1,
    )
    return ExactEvolution(t=t_grid, rho=rho, m=m, trace_error=trace_error,
                          hermiticity_error=herm)


def write_spectrum_csv(result: SpaceSpectrum, path) -> Path:
    """Rows ``N, J, m, re, im, is_dominant`` for every eigenvalue of every sector."""
    path = Path(path)
    dom = result.dominant
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "J", "m", "re", "im", "is_dominant"])
        for r in result.sectors:
            flagged = False
            for lam in r.eigenvalues:
                is_dom = (
                    not flagged
                    and dom is not None
                    and r.two_j == dom.two_j
                    and complex(lam) == dom.lambda1
                )
                flagged |= is_dom
                w.writerow([r.n_spins, r.j, r.m, repr(float(lam.real)),
                            repr(float(lam.imag)), int(is_dom)])
    return path


def _c(z: complex | None):
    return None if z is None else [z.real, z.imag]


def spectrum_summary(result: SpaceSpectrum) -> dict:
    dom = result.dominant
    return {
        "N": result.n_spins,
        "parity": "even" if result.n_spins % 2 == 0 else "odd",
        "omega": result.params.omega,
        "kappa": result.params.kappa,
        "rule": result.rule,
        "lambda1": _c(result.lambda1),
        "gap": None if dom is None else dom.gap,
        "J": None if dom is None else dom.j,
        "m": None if dom is None else dom.m,
        "sectors": [
            {"J": r.j, "m": r.m, "multiplicity": SpinSector(r.n_spins, r.two_j).multiplicity,
             "lambda1": _c(r.lambda1), "slowest": _c(r.slowest)}
            for r in result.sectors
        ],
    }


def fit_inverse_n(ns: Sequence[int], values: Sequence[float]) -> dict:
    """Least-squares line ``values = slope / N + intercept`` with its R^2."""
    x = 1.0 / np.asarray(ns, dtype=float)
    y = np.asarray(values, dtype=float)
    a = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ np.array([slope, intercept])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}

