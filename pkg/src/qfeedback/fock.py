"""Truncated Hilbert spaces, elementary operators and density matrices.

Tensor factors are always ordered (system, ancilla).  Two-level factors use
the basis (|up>, |down>), so that ``pauli(..., "z") = diag(1, -1)`` and the
ground state |down> is index 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, KindMismatchError, PSDViolation, SpaceMismatchError

FOCK = "fock"
TWO_LEVEL = "two-level"

# embedded operators above this dimension are stored sparse
SPARSE_ABOVE = 64

HERMITIAN_RTOL = 1e-12


@dataclass(frozen=True)
class Factor:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (FOCK, TWO_LEVEL):
            raise ValueError(f"unknown factor kind {self.kind!r}")
        if int(self.dim) < 1:
            raise ValueError("factor dimension must be positive")
        if self.kind == TWO_LEVEL and self.dim != 2:
            raise ValueError("a two-level factor has dim exactly 2")


@dataclass(frozen=True)
class SpaceSpec:
    """Ordered tensor-factor layout of a truncated Hilbert space."""

    factors: tuple[Factor, ...]

    def __post_init__(self):
        if not self.factors:
            raise ValueError("a space needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    @classmethod
    def of(cls, *factors: tuple[str, int]) -> "SpaceSpec":
        """``SpaceSpec.of(("fock", 36), ("two-level", 2))``."""
        return cls(tuple(Factor(kind, int(dim)) for kind, dim in factors))

    @classmethod
    def fock(cls, n_max: int) -> "SpaceSpec":
        """Single Fock factor holding photon numbers 0..n_max."""
        return cls.of((FOCK, n_max + 1))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def factor(self, index: int) -> Factor:
        if not 0 <= index < len(self.factors):
            raise IndexError(f"factor index {index} out of range")
        return self.factors[index]

    def sub(self, index: int) -> "SpaceSpec":
        return SpaceSpec((self.factor(index),))


def _as_storage(matrix, total_dim: int):
    if total_dim > SPARSE_ABOVE:
        return sp.csr_matrix(matrix, dtype=complex)
    if sp.issparse(matrix):
        return np.asarray(matrix.toarray(), dtype=complex)
    return np.asarray(matrix, dtype=complex)


def _max_abs(m) -> float:
    if sp.issparse(m):
        return float(abs(m).max()) if m.nnz else 0.0
    return float(np.max(np.abs(m))) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class Operator:
    """Matrix on a :class:`SpaceSpec`, dense up to 64 dims and CSR above."""

    space: SpaceSpec
    matrix: object
    hermitian_hint: bool | None = None

    def __post_init__(self):
        d = self.space.total_dim
        m = _as_storage(self.matrix, d)
        if m.shape != (d, d):
            raise SpaceMismatchError(f"matrix shape {m.shape} does not match total_dim {d}")
        object.__setattr__(self, "matrix", m)
        if self.hermitian_hint:
            scale = _max_abs(m)
            if _max_abs(m - m.conj().T) > HERMITIAN_RTOL * max(scale, 1e-300):
                raise ContractViolation("operator flagged Hermitian is not Hermitian")

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else m

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T, self.hermitian_hint)

    def is_hermitian(self, rtol: float = HERMITIAN_RTOL) -> bool:
        m = self.matrix
        return _max_abs(m - m.conj().T) <= rtol * max(_max_abs(m), 1e-300)

    def _check(self, other: "Operator"):
        if other.space != self.space:
            raise SpaceMismatchError("operators act on different spaces")

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        herm = bool(self.hermitian_hint and other.hermitian_hint) or None
        return Operator(self.space, self.matrix + other.matrix, herm)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check(other)
        herm = bool(self.hermitian_hint and other.hermitian_hint) or None
        return Operator(self.space, self.matrix - other.matrix, herm)

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.matrix, self.hermitian_hint)

    def __mul__(self, scalar) -> "Operator":
        herm = self.hermitian_hint if np.isrealobj(scalar) else None
        return Operator(self.space, self.matrix * scalar, herm)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Operator":
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.space, self.matrix @ other.matrix)
        return self.matrix @ other

    def expect(self, state) -> complex:
        """Expectation value in a state vector or density matrix."""
        if isinstance(state, DensityMatrix):
            state = state.matrix
        state = np.asarray(state)
        if state.ndim == 1:
            return complex(np.vdot(state, self.matrix @ state))
        return complex(np.trace(np.asarray(self.matrix @ state)))


# ---------------------------------------------------------------------------
# factor-local matrices


def _destroy(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    # (sigma_x - i sigma_y) / 2 : |up> -> |down>
    "lower": np.array([[0, 0], [1, 0]], dtype=complex),
}


def embed(space: SpaceSpec, index: int, local) -> Operator:
    """Place a factor-local matrix at ``index``, identity elsewhere."""
    return tensor_embed(space, [(index, local)])


def tensor_embed(space: SpaceSpec, ops: Sequence[tuple[int, object]]) -> Operator:
    """Tensor product of factor-local operators in fixed factor order.

    ``ops`` is a list of ``(factor_index, matrix_or_Operator)``; factors not
    listed get the identity.
    """
    locals_: dict[int, object] = {}
    for index, op in ops:
        f = space.factor(index)
        if index in locals_:
            raise ValueError(f"factor {index} given twice")
        m = op.dense() if isinstance(op, Operator) else np.asarray(
            op.toarray() if sp.issparse(op) else op, dtype=complex)
        if m.shape != (f.dim, f.dim):
            raise SpaceMismatchError(
                f"local operator of shape {m.shape} does not fit factor {index} (dim {f.dim})")
        locals_[index] = m
    out = None
    for i, f in enumerate(space.factors):
        m = sp.csr_matrix(locals_[i]) if i in locals_ else sp.identity(f.dim, dtype=complex, format="csr")
        out = m if out is None else sp.kron(out, m, format="csr")
    hints = [Operator(space.sub(i), m).is_hermitian() for i, m in locals_.items()]
    return Operator(space, out, True if all(hints) else None)


def identity(space: SpaceSpec) -> Operator:
    return Operator(space, sp.identity(space.total_dim, dtype=complex, format="csr"), True)


def annihilation(space: SpaceSpec, factor_index: int = 0) -> Operator:
    """Exact finite section of the ladder operator on a Fock factor."""
    f = space.factor(factor_index)
    if f.kind != FOCK:
        raise KindMismatchError(f"factor {factor_index} is {f.kind}, not fock")
    return embed(space, factor_index, _destroy(f.dim))


def number(space: SpaceSpec, factor_index: int = 0) -> Operator:
    f = space.factor(factor_index)
    if f.kind != FOCK:
        raise KindMismatchError(f"factor {factor_index} is {f.kind}, not fock")
    return embed(space, factor_index, np.diag(np.arange(f.dim, dtype=float)))


def pauli(space: SpaceSpec, factor_index: int, which: str) -> Operator:
    f = space.factor(factor_index)
    if f.kind != TWO_LEVEL:
        raise KindMismatchError(f"factor {factor_index} is {f.kind}, not two-level")
    try:
        local = _PAULI[which]
    except KeyError:
        raise ValueError(f"unknown Pauli component {which!r}") from None
    return embed(space, factor_index, local)


def basis_vector(space: SpaceSpec, levels: Sequence[int]) -> np.ndarray:
    """Product basis state with the given level index in each factor."""
    idx = np.ravel_multi_index(tuple(levels), space.dims)
    v = np.zeros(space.total_dim, dtype=complex)
    v[idx] = 1.0
    return v


def ground_levels(space: SpaceSpec) -> list[int]:
    """Vacuum for Fock factors, |down> (index 1) for two-level factors."""
    return [0 if f.kind == FOCK else 1 for f in space.factors]


# ---------------------------------------------------------------------------
# functions of Hermitian operators


def exp_i_scaled(t: float) -> Callable[[np.ndarray], np.ndarray]:
    """x -> exp(i t x); ``exp_i_scaled(-1)`` gives exp(-iZ)."""
    return lambda x: np.exp(1j * t * x)


def arctan_half() -> Callable[[np.ndarray], np.ndarray]:
    """x -> arctan(x / 2)."""
    return lambda x: np.arctan(x / 2.0)


def tabulated(values: Sequence[float], outputs: Sequence[complex]) -> Callable[[np.ndarray], np.ndarray]:
    """Piecewise-linear lookup table, for functions given only as samples."""
    xs = np.asarray(values, dtype=float)
    ys = np.asarray(outputs, dtype=complex)
    return lambda x: np.interp(x, xs, ys.real) + 1j * np.interp(x, xs, ys.imag)


def op_function(Z: Operator, f: Callable[[np.ndarray], np.ndarray], *, fast_path: bool = True) -> Operator:
    """Apply a scalar function to a Hermitian operator through its eigenbasis."""
    if not Z.is_hermitian():
        raise ContractViolation("op_function needs a Hermitian operator")
    m = Z.dense()
    if fast_path and np.count_nonzero(m - np.diag(np.diag(m))) == 0:
        return Operator(Z.space, np.diag(np.asarray(f(np.diag(m).real), dtype=complex)))
    vals, vecs = np.linalg.eigh(m)
    fv = np.asarray(f(vals), dtype=complex)
    return Operator(Z.space, (vecs * fv) @ vecs.conj().T)


# ---------------------------------------------------------------------------
# density matrices

DM_HERMITIAN_TOL = 1e-10
DM_TRACE_TOL = 1e-10
DM_MIN_EIG = -1e-8


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace state; small negative eigenvalues are kept, not clamped."""

    space: SpaceSpec
    matrix: np.ndarray
    min_eigenvalue: float = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix, dtype=complex)
        d = self.space.total_dim
        if m.shape != (d, d):
            raise SpaceMismatchError(f"density matrix shape {m.shape} does not match {d}")
        if np.max(np.abs(m - m.conj().T)) > DM_HERMITIAN_TOL:
            raise ContractViolation("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > DM_TRACE_TOL:
            raise ContractViolation(f"density matrix trace {np.trace(m).real:.3e} != 1")
        lam = float(np.linalg.eigvalsh(m).min())
        if lam < DM_MIN_EIG:
            raise PSDViolation(f"density matrix eigenvalue {lam:.3e} below {DM_MIN_EIG}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "min_eigenvalue", lam)

    @classmethod
    def pure(cls, space: SpaceSpec, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(space, np.outer(psi, psi.conj()))

    @classmethod
    def ground(cls, space: SpaceSpec) -> "DensityMatrix":
        return cls.pure(space, basis_vector(space, ground_levels(space)))

    def ptrace(self, keep: int) -> "DensityMatrix":
        return partial_trace(self, keep)


def partial_trace(rho: Union[DensityMatrix, np.ndarray], keep: int, space: SpaceSpec | None = None):
    """Trace out every factor except ``keep``.

    Accepts a :class:`DensityMatrix` (returns one) or a raw square array
    together with its ``space`` (returns an array).
    """
    if isinstance(rho, DensityMatrix):
        space, m, wrap = rho.space, rho.matrix, True
    else:
        if space is None:
            raise ValueError("raw arrays need an explicit space")
        m, wrap = np.asarray(rho, dtype=complex), False
    dims = space.dims
    if m.shape != (space.total_dim,) * 2:
        raise SpaceMismatchError("matrix does not match space")
    space.factor(keep)
    n = len(dims)
    t = m.reshape(dims + dims)
    left = list(range(n))
    right = [n + i if i == keep else i for i in range(n)]
    out = np.einsum(t, left + right, [keep, n + keep])
    # exact Hermiticity: the reduction of a Hermitian matrix is Hermitian up to rounding
    out = 0.5 * (out + out.conj().T)
    if wrap:
        return DensityMatrix(space.sub(keep), out)
    return out


def truncation_health(space: SpaceSpec, state) -> dict[int, float]:
    """Population in the top two levels of each Fock factor.

    ``state`` may be a state vector, a density matrix array or a
    :class:`DensityMatrix`.
    """
    if isinstance(state, DensityMatrix):
        state = state.matrix
    state = np.asarray(state)
    if state.ndim == 1:
        probs = np.abs(state) ** 2
    else:
        probs = np.real(np.diag(state))
    probs = probs.reshape(space.dims)
    out = {}
    for i, f in enumerate(space.factors):
        if f.kind != FOCK:
            continue
        axes = tuple(j for j in range(len(space.dims)) if j != i)
        marginal = probs.sum(axis=axes) if axes else probs
        out[i] = float(marginal[-2:].sum())
    return out


def top_level_population(space: SpaceSpec, state) -> dict[int, float]:
    """Population of the single highest level of each Fock factor."""
    state = np.asarray(state.matrix if isinstance(state, DensityMatrix) else state)
    probs = np.abs(state) ** 2 if state.ndim == 1 else np.real(np.diag(state))
    probs = probs.reshape(space.dims)
    out = {}
    for i, f in enumerate(space.factors):
        if f.kind != FOCK:
            continue
        axes = tuple(j for j in range(len(space.dims)) if j != i)
        marginal = probs.sum(axis=axes) if axes else probs
        out[i] = float(marginal[-1])
    return out
