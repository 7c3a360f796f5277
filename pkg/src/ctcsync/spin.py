"""Collective spin operators and the total-spin decomposition of N spins-1/2.

Quantum numbers are carried as ``two_j = 2J`` so half-integer spins never go
through floating-point equality. Basis ordering is ``m_J = J, J-1, ..., -J``
everywhere, so index 0 is the highest-weight state.
"""
from __future__ import annotations

import numbers
from dataclasses import dataclass
from fractions import Fraction
from math import factorial

import numpy as np

__all__ = [
    "SpinSector",
    "SpinOperators",
    "enumerate_sectors",
    "build_operators",
    "multiplicity",
    "as_two_j",
]


def _as_count(n) -> int:
    if isinstance(n, bool) or not isinstance(n, numbers.Integral):
        raise ValueError(f"particle count must be an integer, got {n!r}")
    n = int(n)
    if n < 1:
        raise ValueError(f"particle count must be >= 1, got {n}")
    return n


def as_two_j(j) -> int:
    """Return ``2J`` as an int, rejecting negative or non-half-integer ``J``."""
    if isinstance(j, bool) or not isinstance(j, numbers.Real):
        raise ValueError(f"invalid spin {j!r}")
    if isinstance(j, float):
        twice = 2 * j
        if not (np.isfinite(twice) and twice.is_integer()):
            raise ValueError(f"spin must be a multiple of 1/2, got {j!r}")
        two_j = int(twice)
    else:
        twice = 2 * Fraction(j)
        if twice.denominator != 1:
            raise ValueError(f"spin must be a multiple of 1/2, got {j!r}")
        two_j = int(twice)
    if two_j < 0:
        raise ValueError(f"spin must be non-negative, got {j!r}")
    return two_j


def multiplicity(n: int, two_j: int) -> int:
    """Number of copies of the spin-J irrep in the product of ``n`` spins-1/2.

    ``n! (2J+1) / ((n/2+J+1)! (n/2-J)!)``, evaluated in exact integer arithmetic.
    """
    n = _as_count(n)
    if two_j < 0 or two_j > n or (n - two_j) % 2:
        raise ValueError(f"2J={two_j} is not a valid total spin for N={n}")
    upper = (n + two_j) // 2  # N/2 + J
    lower = (n - two_j) // 2  # N/2 - J
    num = factorial(n) * (two_j + 1)
    den = factorial(upper + 1) * factorial(lower)
    q, r = divmod(num, den)
    assert r == 0
    return q


@dataclass(frozen=True)
class SpinSector:
    """One spin-J block of the Clebsch-Gordan decomposition of N spins-1/2."""

    n_spins: int
    two_j: int

    def __post_init__(self):
        n = _as_count(self.n_spins)
        if self.two_j < 0 or self.two_j > n or (n - self.two_j) % 2:
            raise ValueError(f"2J={self.two_j} is not a valid total spin for N={n}")

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def s(self) -> float:
        """Maximal spin ``S = N/2``."""
        return self.n_spins / 2

    @property
    def dim(self) -> int:
        return self.two_j + 1

    @property
    def multiplicity(self) -> int:
        return multiplicity(self.n_spins, self.two_j)

    @property
    def m(self) -> float:
        """Rescaled total spin ``J/S`` used as the mean-field norm."""
        return self.two_j / self.n_spins

    @property
    def is_symmetric(self) -> bool:
        return self.two_j == self.n_spins

    def label(self) -> str:
        j = f"{self.two_j // 2}" if self.two_j % 2 == 0 else f"{self.two_j}/2"
        return f"N={self.n_spins},J={j}"


def enumerate_sectors(n) -> list[SpinSector]:
    """All spin-J sectors of ``n`` spins-1/2, largest J first.

    J runs from N/2 down to 0 (even N) or 1/2 (odd N).
    """
    n = _as_count(n)
    return [SpinSector(n, two_j) for two_j in range(n, -1, -2)]


@dataclass(frozen=True)
class SpinOperators:
    """Spin-J matrices in the ``|J, m>`` basis with descending ``m``."""

    two_j: int
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    sp: np.ndarray
    sm: np.ndarray

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def dim(self) -> int:
        return self.two_j + 1

    def casimir(self) -> np.ndarray:
        return self.sx @ self.sx + self.sy @ self.sy + self.sz @ self.sz


def build_operators(j) -> SpinOperators:
    """Standard angular-momentum matrices for total spin ``j``.

    ``<J,m+1|S_+|J,m> = sqrt(J(J+1) - m(m+1))``; ``S_z = diag(J, ..., -J)``.
    ``S_x`` and ``S_y`` are derived from the ladder operators so that
    ``S_+ = S_x + i S_y`` holds exactly.
    """
    two_j = as_two_j(j)
    jj = two_j / 2
    dim = two_j + 1
    m = jj - np.arange(dim)
    sp = np.zeros((dim, dim))
    # column k holds |J, m_k>; S_+ raises m_k -> m_{k-1}
    mk = m[1:]
    sp[np.arange(dim - 1), np.arange(1, dim)] = np.sqrt(jj * (jj + 1) - mk * (mk + 1))
    sm = sp.T.copy()
    sx = 0.5 * (sp + sm)
    sy = -0.5j * (sp - sm)
    sz = np.diag(m)
    return SpinOperators(
        two_j=two_j,
        sx=sx.astype(complex),
        sy=sy,
        sz=sz.astype(complex),
        sp=sp.astype(complex),
        sm=sm.astype(complex),
    )
