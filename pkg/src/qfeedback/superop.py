"""Superoperators acting on column-stacked density matrices.

Convention: ``vec(rho) = rho.reshape(-1, order="F")`` so that
``vec(A rho B) = (B.T kron A) vec(rho)``.  Everything here assembles concrete
sparse matrices; nothing is composed lazily.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, SpaceMismatchError
from .fock import Operator, SpaceSpec, exp_i_scaled, op_function

TP_RTOL = 1e-10


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    return v.reshape((d, d), order="F")


def trace_row(d: int) -> sp.csr_matrix:
    """Row vector vec(1)^dagger, so that ``trace_row(d) @ vec(rho) = Tr rho``."""
    cols = np.arange(d) * (d + 1)
    return sp.csr_matrix((np.ones(d), (np.zeros(d, dtype=int), cols)), shape=(1, d * d))


@dataclass(frozen=True, eq=False)
class SuperOp:
    """Linear map on vectorized d x d matrices, held as a sparse d^2 x d^2 matrix."""

    space: SpaceSpec
    matrix: sp.csr_matrix
    tp_hint: bool | None = None

    def __post_init__(self):
        d = self.space.total_dim
        m = sp.csr_matrix(self.matrix, dtype=complex)
        if m.shape != (d * d, d * d):
            raise SpaceMismatchError(f"superoperator shape {m.shape} does not match d={d}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho), self.dim)

    def norm(self) -> float:
        """Max-abs entry."""
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def trace_defect(self) -> float:
        """max |vec(1)^dagger L| relative to max |L|; zero for trace-preserving maps."""
        row = trace_row(self.dim) @ self.matrix
        worst = float(abs(row).max()) if row.nnz else 0.0
        return worst / max(self.norm(), 1e-300)

    def is_trace_preserving(self, rtol: float = TP_RTOL) -> bool:
        return self.trace_defect() <= rtol

    def hermiticity_defect(self, n_samples: int = 8, seed: int = 0) -> float:
        """max |L(rho^dag) - L(rho)^dag| over random Hermitian inputs, relative to |L|."""
        rng = np.random.default_rng(seed)
        d = self.dim
        worst = 0.0
        for _ in range(n_samples):
            x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            x = x + x.conj().T
            y = self.apply(x)
            worst = max(worst, float(np.max(np.abs(y - y.conj().T))))
        return worst / max(self.norm(), 1e-300)

    def _check(self, other: "SuperOp"):
        if other.space != self.space:
            raise SpaceMismatchError("superoperators act on different spaces")

    def __add__(self, other: "SuperOp") -> "SuperOp":
        self._check(other)
        tp = bool(self.tp_hint and other.tp_hint) or None
        return SuperOp(self.space, self.matrix + other.matrix, tp)

    def __sub__(self, other: "SuperOp") -> "SuperOp":
        self._check(other)
        return SuperOp(self.space, self.matrix - other.matrix)

    def __neg__(self) -> "SuperOp":
        return SuperOp(self.space, -self.matrix)

    def __mul__(self, scalar) -> "SuperOp":
        return SuperOp(self.space, self.matrix * scalar, self.tp_hint)

    __rmul__ = __mul__

    def __matmul__(self, other: "SuperOp") -> "SuperOp":
        self._check(other)
        return SuperOp(self.space, self.matrix @ other.matrix)


def zero(space: SpaceSpec) -> SuperOp:
    n = space.total_dim ** 2
    return SuperOp(space, sp.csr_matrix((n, n), dtype=complex), True)


def unit(space: SpaceSpec) -> SuperOp:
    return SuperOp(space, sp.identity(space.total_dim ** 2, dtype=complex, format="csr"))


def _same_space(*ops: Operator) -> SpaceSpec:
    space = ops[0].space
    for op in ops[1:]:
        if op.space != space:
            raise SpaceMismatchError("operators act on different spaces")
    return space


def spre(A: Operator) -> sp.csr_matrix:
    """Left multiplication rho -> A rho."""
    return sp.kron(sp.identity(A.dim, format="csr"), A.sparse(), format="csr")


def spost(B: Operator) -> sp.csr_matrix:
    """Right multiplication rho -> rho B."""
    return sp.kron(B.sparse().T, sp.identity(B.dim, format="csr"), format="csr")


def commutator(H: Operator) -> SuperOp:
    """C[H] rho = -i [H, rho]."""
    return SuperOp(H.space, -1j * (spre(H) - spost(H)), True)


def sandwich(c: Operator) -> SuperOp:
    """J[c] rho = c rho c^dagger."""
    m = c.sparse()
    return SuperOp(c.space, sp.kron(m.conj(), m, format="csr"))


def anticomm(c: Operator) -> SuperOp:
    """A[c] rho = {c^dagger c, rho} / 2."""
    cdc = c.dag() @ c
    return SuperOp(c.space, 0.5 * (spre(cdc) + spost(cdc)))


def dissipator(c: Operator) -> SuperOp:
    """D[c] = J[c] - A[c]."""
    L = sandwich(c) - anticomm(c)
    return SuperOp(L.space, L.matrix, True)


def cascade_term(c: Operator, s: Operator, gamma: float) -> SuperOp:
    """W -> sqrt(gamma) ([c W, s^dag] + [s, W c^dag]): output of ``c`` driving ``s``."""
    space = _same_space(c, s)
    if gamma < 0:
        raise ValueError("cascade rate must be non-negative")
    sd, cd = s.dag(), c.dag()
    m = (spre(c) @ spost(sd) - spre(sd @ c) + spre(s) @ spost(cd) - spost(cd @ s))
    return SuperOp(space, np.sqrt(gamma) * m)


def lindblad(H: Operator | None, channels: Sequence[tuple[Operator, float]], space: SpaceSpec | None = None) -> SuperOp:
    """-i[H, .] + sum_k rate_k D[c_k]."""
    if space is None:
        space = H.space if H is not None else channels[0][0].space
    L = zero(space) if H is None else commutator(H)
    for c, rate in channels:
        L = L + rate * dissipator(c)
    return SuperOp(space, L.matrix, True)


# ---------------------------------------------------------------------------
# feedback superoperators


def _eig_hermitian(Z: Operator):
    if not Z.is_hermitian():
        raise ContractViolation("feedback operator Z must be Hermitian")
    m = Z.dense()
    if np.count_nonzero(m - np.diag(np.diag(m))) == 0:
        return np.diag(m).real.copy(), None
    vals, vecs = np.linalg.eigh(m)
    return vals, vecs


def _in_basis(weights: np.ndarray, vecs: np.ndarray | None, space: SpaceSpec) -> SuperOp:
    """Superoperator acting as rho_ab -> w_ab rho_ab in the eigenbasis ``vecs``."""
    diag = sp.diags(vec(weights), format="csr")
    if vecs is None:
        return SuperOp(space, diag)
    to_eig = np.kron(vecs.T, vecs.conj().T)     # X -> V^dag X V
    from_eig = np.kron(vecs.conj(), vecs)       # Y -> V Y V^dag
    m = from_eig @ (diag @ to_eig)
    m[np.abs(m) < 1e-15 * max(1.0, np.abs(m).max())] = 0.0
    return SuperOp(space, sp.csr_matrix(m))


def resolvent_feedback(Z: Operator, c: Operator, form: str) -> SuperOp:
    """Feedback part of the adiabatic generators.

    ``form="eo_tla"``: C[Z] (1 - C[Z])^{-1} J[c], applied elementwise in the
    eigenbasis of Z as rho_ab -> -i w / (1 + i w) rho_ab with w = z_a - z_b.

    ``form="ao"``: C[Z] J[(1 + iZ/2)^{-1} c].
    """
    space = _same_space(Z, c)
    if form == "eo_tla":
        z, vecs = _eig_hermitian(Z)
        w = z[:, None] - z[None, :]
        denom = 1.0 + 1j * w
        assert np.all(np.abs(denom) >= 1.0)
        return _in_basis(-1j * w / denom, vecs, space) @ sandwich(c)
    if form == "ao":
        inv = op_function(Z, lambda x: 1.0 / (1.0 + 0.5j * x))
        return commutator(Z) @ sandwich(inv @ c)
    raise ValueError(f"unknown resolvent form {form!r}")


def superop_distance(L1: SuperOp, L2: SuperOp) -> float:
    """Max-abs entrywise difference."""
    if L1.space != L2.space:
        raise SpaceMismatchError("superoperators act on different spaces")
    diff = L1.matrix - L2.matrix
    return float(abs(diff).max()) if diff.nnz else 0.0


# ---------------------------------------------------------------------------
# feedback master equations for general (H, c, Z)


def half_line_rule(q_max: float = 45.0, panel: float = 0.5, order: int = 16):
    """Nodes and weights for int_0^inf dq e^{-q} g(q), composite Gauss-Legendre.

    The tail beyond ``q_max`` carries weight e^{-q_max}.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    starts = np.arange(0.0, q_max, panel)
    q = (starts[:, None] + 0.5 * panel * (x[None, :] + 1.0)).ravel()
    weights = np.tile(0.5 * panel * w, starts.size) * np.exp(-q)
    return q, weights


def scheme_generator(scheme: str, H: Operator, c: Operator, Z: Operator, **kw) -> SuperOp:
    """Generator of one feedback master equation for arbitrary H, c, Z.

    Schemes: ``none``, ``simple``, ``simple_3rd``, ``eo_tla`` (closed resolvent
    form), ``eo_tla_quadrature``, ``eo_tla_3rd``, ``ao`` (rational form),
    ``ao_arctan``, ``ao_3rd``, ``eo_mode`` (needs ``diffusion=Gamma/eps^2``).
    """
    base = commutator(H)
    if scheme == "none":
        L = base + dissipator(c)
    elif scheme == "simple":
        L = base + dissipator(op_function(Z, exp_i_scaled(-1.0)) @ c)
    elif scheme == "eo_mode":
        L = (base + dissipator(op_function(Z, exp_i_scaled(-1.0)) @ c)
             + kw["diffusion"] * dissipator(Z))
    elif scheme == "eo_tla":
        L = base + dissipator(c) + resolvent_feedback(Z, c, "eo_tla")
    elif scheme == "eo_tla_quadrature":
        q, w = kw.get("rule") or half_line_rule()
        z, vecs = _eig_hermitian(Z)
        acc = None
        for qk, wk in zip(q, w):
            ph = np.exp(-1j * qk * z)
            U = np.diag(ph) if vecs is None else (vecs * ph) @ vecs.conj().T
            term = wk * dissipator(Operator(Z.space, U) @ c).matrix
            acc = term if acc is None else acc + term
        L = base + SuperOp(H.space, acc)
    elif scheme == "ao":
        L = base + dissipator(c) + resolvent_feedback(Z, c, "ao")
    elif scheme == "ao_arctan":
        U = op_function(Z, lambda x: np.exp(-2j * np.arctan(x / 2.0)))
        L = base + dissipator(U @ c)
    elif scheme in ("simple_3rd", "eo_tla_3rd", "ao_3rd"):
        C = commutator(Z)
        C2 = C @ C
        if scheme == "simple_3rd":
            poly = C + 0.5 * C2 + (1.0 / 6.0) * (C2 @ C)
        elif scheme == "eo_tla_3rd":
            poly = C + C2 + C2 @ C
        else:
            poly = C + 0.5 * C2 + 0.25 * (C @ (sandwich(Z) - 2.0 * anticomm(Z)))
        L = base + dissipator(c) + poly @ sandwich(c)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    tp = scheme not in ("simple_3rd", "eo_tla_3rd", "ao_3rd") or None
    return SuperOp(H.space, L.matrix, tp)


@dataclass
class ScalingReport:
    pair: tuple[str, str]
    chi_values: np.ndarray
    distances: np.ndarray
    powers: np.ndarray
    fitted_power: float


def expansion_order_probe(scheme_pair: tuple[str, str], Z_base: Operator, c: Operator, H: Operator,
                          chi_values: Sequence[float], **kw) -> ScalingReport:
    """Leading power p in ||L1(chi) - L2(chi)|| ~ chi^p, with Z = chi * Z_base.

    ``powers`` are the successive-ratio estimates; ``fitted_power`` is the
    least-squares slope in log-log coordinates (nan when all distances vanish).
    """
    chis = np.asarray(chi_values, dtype=float)
    if chis.size < 3:
        raise ValueError("expansion_order_probe needs at least 3 chi values")
    if np.any(np.diff(chis) >= 0):
        raise ValueError("chi values must be strictly decreasing")
    dist = np.array([
        superop_distance(scheme_generator(scheme_pair[0], H, c, chi * Z_base, **kw),
                         scheme_generator(scheme_pair[1], H, c, chi * Z_base, **kw))
        for chi in chis
    ])
    with np.errstate(divide="ignore", invalid="ignore"):
        powers = np.log(dist[:-1] / dist[1:]) / np.log(chis[:-1] / chis[1:])
        if np.all(dist > 0):
            fitted = float(np.polyfit(np.log(chis), np.log(dist), 1)[0])
        else:
            fitted = float("nan")
    return ScalingReport(tuple(scheme_pair), chis, dist, powers, fitted)
