"""Stationary states of static Lindblad generators.

Small problems are solved directly: one row of L is replaced by the trace
functional and the system is factorized with sparse LU.  LU fill-in makes
that impractical for mode-ancilla compounds (d ~ 360), so above a size
threshold the solver switches to GMRES on the Sylvester-preconditioned
system S^{-1} L, where S(X) = A X + X A^dag and A = -iH - (1/2) sum c^dag c is
the no-jump generator.  Either way the residual is measured on the
unmodified L.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractViolation, ConvergenceError, MultiplicityError
from .fock import DensityMatrix, partial_trace, truncation_health
from .models import GeneratorDescriptor
from .superop import SuperOp, trace_row, unvec, vec

__all__ = ["DensityMatrix", "SteadyReport", "steady_state", "reduced_steady", "no_jump_generator"]

log = logging.getLogger(__name__)

# d^2 above which the direct LU is skipped when a preconditioner is available
DIRECT_MAX_UNKNOWNS = 12_000
# two independent solves must agree to this (max-abs) or the kernel is degenerate
MULTIPLICITY_TOL = 1e-7


@dataclass
class SteadyReport:
    state: DensityMatrix
    residual: float
    method: str
    truncation_health: dict
    tolerance: float = 0.0
    iterations: int = 0


def no_jump_generator(desc: GeneratorDescriptor) -> np.ndarray:
    """A = -iH - (1/2) sum_k rate_k c_k^dag c_k as a dense matrix."""
    A = -1j * desc.hamiltonian.dense()
    for ch in desc.channels:
        c = ch.op.dense()
        A = A - 0.5 * ch.rate * (c.conj().T @ c)
    return A


def _finish(L: SuperOp, x: np.ndarray, tol: float, method: str, iterations: int = 0) -> SteadyReport:
    d = L.dim
    rho = unvec(x, d)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.max(np.abs(L.matrix @ vec(rho))))
    if not np.isfinite(residual) or residual > tol:
        raise ConvergenceError(f"steady-state residual {residual:.3e} exceeds tolerance {tol:.3e} ({method})")
    state = DensityMatrix(L.space, rho)
    return SteadyReport(state, residual, method, truncation_health(L.space, state), tol, iterations)


def _direct(L: SuperOp, row: int) -> np.ndarray:
    d = L.dim
    n = d * d
    keep = np.ones(n)
    keep[row] = 0.0
    cols = np.arange(d) * (d + 1)
    tr = sp.csr_matrix((np.ones(d), (np.full(d, row), cols)), shape=(n, n))
    M = (sp.diags(keep) @ L.matrix + tr).tocsc()
    rhs = np.zeros(n, dtype=complex)
    rhs[row] = 1.0
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise MultiplicityError(f"row-replaced generator is singular: {exc}") from None
    return lu.solve(rhs)


class _Sylvester:
    """Approximately solves A X + X A^dag = Y.

    The default uses the eigendecomposition of A, which turns the equation
    into an elementwise division; with a badly conditioned eigenbasis it falls
    back to a complex Schur decomposition and LAPACK trsyl.  Only a fixed
    nonsingular linear map is required of a preconditioner, so the moderate
    accuracy of the eigenbasis route does not affect the final residual.
    """

    COND_LIMIT = 1e9

    def __init__(self, A: np.ndarray):
        lam, V = np.linalg.eig(A)
        if np.linalg.cond(V) < self.COND_LIMIT:
            self.kind = "eig"
            self.V, self.Vi = V, np.linalg.inv(V)
            self.den = lam[:, None] + lam.conj()[None, :]
        else:
            self.kind = "schur"
            self.R, self.Q = la.schur(A, output="complex")
            self.trsyl = la.get_lapack_funcs("trsyl", (self.R,))

    def solve(self, Y: np.ndarray) -> np.ndarray:
        if self.kind == "eig":
            return self.V @ ((self.Vi @ Y @ self.Vi.conj().T) / self.den) @ self.V.conj().T
        Qh = self.Q.conj().T
        C = Qh @ Y @ self.Q
        X, scale, info = self.trsyl(self.R, self.R, C, trana="N", tranb="C", isgn=1)
        if info < 0:
            raise ConvergenceError(f"trsyl failed with info={info}")
        return self.Q @ (X / scale) @ Qh


def _preconditioned(L: SuperOp, syl: _Sylvester, anchor: np.ndarray, rtol: float, maxiter: int):
    """GMRES on (P L + v tr) x = v with v = P(anchor), P ~ S^{-1}, anchor of unit trace.

    Any solution has L x = anchor (1 - tr x), and taking the trace gives tr x = 1.
    """
    d = L.dim
    n = d * d
    tr = trace_row(d)
    v = vec(syl.solve(anchor))

    def matvec(x):
        x = np.asarray(x).ravel()
        y = vec(syl.solve(unvec(L.matrix @ x, d)))
        return y + v * (tr @ x)[0]

    op = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
    x0 = vec(anchor)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(op, v, x0=x0, rtol=rtol, atol=0.0, restart=200, maxiter=maxiter,
                         callback=cb, callback_type="pr_norm")
    if info < 0:
        raise ConvergenceError(f"gmres breakdown (info={info})")
    return x, count[0]


def _inverse_iteration(L: SuperOp, n_iter: int = 30) -> np.ndarray:
    """Smallest singular vector of L via shifted inverse iteration on L^dag L."""
    d = L.dim
    M = (L.matrix.conj().T @ L.matrix).tocsc()
    shift = 1e-12 * max(L.norm(), 1.0) ** 2
    lu = spla.splu(M + shift * sp.identity(d * d, format="csc"))
    x = vec(np.eye(d) / d).astype(complex)
    for _ in range(n_iter):
        x = lu.solve(x)
        x = x / np.linalg.norm(x)
    return x / (trace_row(d) @ x)[0]


def steady_state(L: Union[SuperOp, GeneratorDescriptor], tol: float | None = None, method: str = "auto",
                 check_multiplicity: bool = True, maxiter: int = 60) -> SteadyReport:
    """Unique rho with L rho = 0 and Tr rho = 1.

    Args:
        L: trace-preserving generator, or a static descriptor (which also
            supplies the no-jump generator for the iterative method).
        tol: residual bound on max |L vec(rho)|; default 1e-10 * max |L|.
        method: ``direct``, ``iterative`` or ``auto``.
        check_multiplicity: re-solve with an independent normalization and
            raise :class:`MultiplicityError` if the two answers differ.

    Raises:
        MultiplicityError: the kernel of L is not one-dimensional.
        ConvergenceError: residual above ``tol`` after the fallback.
    """
    desc = None
    if isinstance(L, GeneratorDescriptor):
        if L.time_dependent:
            raise ContractViolation("steady_state needs a static generator")
        desc, L = L, L.superop()
    if L.trace_defect() > 1e-10:
        raise ContractViolation(f"generator is not trace preserving (defect {L.trace_defect():.2e})")
    d = L.dim
    if tol is None:
        tol = 1e-10 * L.norm()
    if method == "auto":
        method = "iterative" if desc is not None and d * d > DIRECT_MAX_UNKNOWNS else "direct"

    if method == "direct":
        try:
            x = _direct(L, 0)
            report = _finish(L, x, tol, "direct-lu")
        except ConvergenceError:
            log.warning("direct solve missed tolerance, falling back to inverse iteration")
            report = _finish(L, _inverse_iteration(L), tol, "inverse-iteration")
            x = vec(report.state.matrix)
        if check_multiplicity:
            x2 = _direct(L, d * d - 1)
            x2 = x2 / (trace_row(d) @ x2)[0]
            gap = float(np.max(np.abs(unvec(x2, d) - report.state.matrix)))
            if not np.isfinite(gap) or gap > MULTIPLICITY_TOL:
                raise MultiplicityError(f"steady state depends on the normalization row (diff {gap:.2e})")
        return report

    if method == "iterative":
        if desc is None:
            raise ValueError("the iterative method needs a GeneratorDescriptor for its preconditioner")
        syl = _Sylvester(no_jump_generator(desc))
        x, its = _preconditioned(L, syl, np.eye(d) / d, rtol=1e-14, maxiter=maxiter)
        report = _finish(L, x, tol, "gmres-sylvester", its)
        if check_multiplicity:
            w = np.linspace(1.0, 2.0, d)
            anchor = np.diag(w / w.sum()).astype(complex)
            x2, _ = _preconditioned(L, syl, anchor, rtol=1e-10, maxiter=maxiter)
            x2 = x2 / (trace_row(d) @ x2)[0]
            gap = float(np.max(np.abs(unvec(x2, d) - report.state.matrix)))
            if not np.isfinite(gap) or gap > MULTIPLICITY_TOL:
                raise MultiplicityError(f"steady state depends on the normalization (diff {gap:.2e})")
        return report
    raise ValueError(f"unknown method {method!r}")


def reduced_steady(L: Union[SuperOp, GeneratorDescriptor], keep: int = 0, **kw) -> DensityMatrix:
    """Steady state of a compound generator, reduced to factor ``keep``."""
    return partial_trace(steady_state(L, **kw).state, keep)
