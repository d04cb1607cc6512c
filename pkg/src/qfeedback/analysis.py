"""State comparison and phase-space diagnostics.

Quadratures are X1 = a + a^dag and X2 = -i(a - a^dag), so the vacuum has
unit variance in both and alpha = (X1 + i X2) / 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, PSDViolation, SpaceMismatchError
from .fock import FOCK, DensityMatrix

CLAMP_TOL = 1e-10
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ComparisonReport:
    bures: float
    trace_term: float
    clamped: int = 0
    convention: str = "printed"


def _as_array(rho) -> np.ndarray:
    return np.asarray(rho.matrix if isinstance(rho, DensityMatrix) else rho, dtype=complex)


def _psd_sqrt(m: np.ndarray) -> tuple[np.ndarray, int]:
    """Hermitian square root by eigendecomposition; returns (root, number clamped)."""
    m = 0.5 * (m + m.conj().T)
    vals, vecs = np.linalg.eigh(m)
    if vals.min() < -CLAMP_TOL:
        raise PSDViolation(f"eigenvalue {vals.min():.3e} below -{CLAMP_TOL:g}")
    neg = vals < 0
    vals = np.where(neg, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T, int(neg.sum())


def fidelity_term(rho1, rho2) -> tuple[float, int]:
    """Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)) and the clamped-eigenvalue count.

    Evaluated as the nuclear norm of sqrt(rho2) sqrt(rho1), which avoids taking
    square roots of the roundoff-level eigenvalues of the inner product.
    """
    m1, m2 = _as_array(rho1), _as_array(rho2)
    if m1.shape != m2.shape:
        raise SpaceMismatchError("states have different dimensions")
    r1, k1 = _psd_sqrt(m1)
    r2, k2 = _psd_sqrt(m2)
    t = float(np.linalg.svd(r2 @ r1, compute_uv=False).sum())
    return min(t, 1.0), k1 + k2


def bures_distance(rho1, rho2, convention: str = "printed") -> ComparisonReport:
    """Bures distance between two states.

    ``printed`` is sqrt(2) (1 - T) with T = Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)),
    the form used for every acceptance threshold.  ``standard`` is
    sqrt(2 (1 - T)).  Both lie in [0, sqrt(2)].
    """
    if isinstance(rho1, DensityMatrix) and isinstance(rho2, DensityMatrix) and rho1.space != rho2.space:
        raise SpaceMismatchError("states live on different spaces")
    t, clamped = fidelity_term(rho1, rho2)
    gap = max(1.0 - t, 0.0)
    if convention == "printed":
        b = SQRT2 * gap
    elif convention == "standard":
        b = math.sqrt(2.0 * gap)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return ComparisonReport(b, t, clamped, convention)


# ---------------------------------------------------------------------------
# moments and symmetry checks


def _system_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        if len(rho.space.factors) != 1 or rho.space.factors[0].kind != FOCK:
            raise ContractViolation("expected a single-mode state; reduce compound states first")
    return _as_array(rho)


def moments(rho) -> dict:
    """<n>, <X1>, <X2>, Var X1, Var X2 from normally ordered moments."""
    m = _system_matrix(rho)
    d = m.shape[0]
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1)
    ea = complex(np.trace(a @ m))
    ea2 = complex(np.trace(a @ a @ m))
    n = float(np.real(np.trace(np.diag(np.arange(d)) @ m)))
    x1 = 2.0 * ea.real
    x2 = 2.0 * ea.imag
    x1sq = 2.0 * ea2.real + 2.0 * n + 1.0
    x2sq = -2.0 * ea2.real + 2.0 * n + 1.0
    return {"n": n, "X1": x1, "X2": x2, "var_X1": x1sq - x1 ** 2, "var_X2": x2sq - x2 ** 2}


def parity_violation(rho) -> float:
    """max |rho_nm| over |n - m| odd (photon-number parity of a single mode)."""
    m = _system_matrix(rho)
    idx = np.arange(m.shape[0])
    odd = (idx[:, None] - idx[None, :]) % 2 == 1
    return float(np.max(np.abs(m[odd]))) if odd.any() else 0.0


# ---------------------------------------------------------------------------
# Wigner function


@dataclass(frozen=True)
class WignerGrid:
    """W(X1, X2) sampled on a rectangular grid; ``values[j, i]`` is at (x1[i], x2[j])."""

    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray
    cell_area: float
    normalization: float
    support_warning: bool = False

    def reflection_asymmetry(self) -> float:
        """max |W(X) - W(-X)|, valid for grids symmetric about the origin."""
        if not (np.allclose(self.x1, -self.x1[::-1]) and np.allclose(self.x2, -self.x2[::-1])):
            raise ValueError("grid is not symmetric about the origin")
        return float(np.max(np.abs(self.values - self.values[::-1, ::-1])))


def default_axes(limit: float = 10.0, points: int = 201) -> np.ndarray:
    return np.linspace(-limit, limit, points)


def wigner(rho, x1: np.ndarray | None = None, x2: np.ndarray | None = None) -> WignerGrid:
    """Wigner function normalized so that the integral over dX1 dX2 is 1.

    Uses the Laguerre-type recursion over Fock matrix elements of
    (2/pi) Tr[rho D(alpha) P D(alpha)^dag], P the parity, then applies the
    Jacobian 1/4 of alpha = (X1 + i X2)/2.
    """
    m = _system_matrix(rho)
    x1 = default_axes() if x1 is None else np.asarray(x1, dtype=float)
    x2 = default_axes() if x2 is None else np.asarray(x2, dtype=float)
    alpha = 0.5 * (x1[None, :] + 1j * x2[:, None])
    M = m.shape[0]
    # w[n] holds the <m|...|n> basis function for the current row m
    w = [np.exp(-2.0 * np.abs(alpha) ** 2) / np.pi + 0j]
    acc = np.real(m[0, 0]) * np.real(w[0])
    for n in range(1, M):
        w.append(2.0 * alpha * w[n - 1] / math.sqrt(n))
        acc = acc + 2.0 * np.real(m[0, n] * w[n])
    for row in range(1, M):
        prev = w[row].copy()
        w[row] = (2.0 * np.conj(alpha) * prev - math.sqrt(row) * w[row - 1]) / math.sqrt(row)
        acc = acc + np.real(m[row, row] * w[row])
        for n in range(row + 1, M):
            nxt = (2.0 * alpha * w[n - 1] - math.sqrt(row) * prev) / math.sqrt(n)
            prev = w[n].copy()
            w[n] = nxt
            acc = acc + 2.0 * np.real(m[row, n] * w[n])
    values = 0.5 * acc
    dx1 = float(np.mean(np.diff(x1))) if x1.size > 1 else 1.0
    dx2 = float(np.mean(np.diff(x2))) if x2.size > 1 else 1.0
    area = dx1 * dx2
    norm = float(values.sum() * area)
    flag = not (0.99 <= norm <= 1.01)
    if flag:
        warnings.warn(f"Wigner grid captures normalization {norm:.4f}; widen the grid", RuntimeWarning, stacklevel=2)
    return WignerGrid(x1, x2, values, area, norm, flag)
