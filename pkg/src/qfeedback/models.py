"""Master-equation builders for the degenerate parametric oscillator under feedback.

System units: cavity damping gamma = 1, H_s = -(i lam / 4)(a^2 - a^dag^2),
feedback operator Z = chi a^dag a, detected channel c = a.  Compound spaces
are ordered (system, ancilla).

Raw builders take free parameters; the ``link_*`` helpers fill in the
scheme-specific relations between g, Gamma, eps and chi used in sweeps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import ContractViolation
from .fock import (FOCK, TWO_LEVEL, Operator, SpaceSpec, annihilation, exp_i_scaled, number,
                   op_function, pauli)
from .superop import SuperOp, cascade_term, commutator, dissipator, lindblad, resolvent_feedback, scheme_generator


@dataclass(frozen=True)
class SystemParams:
    lam: float
    chi: float
    n_max: int

    def __post_init__(self):
        if int(self.n_max) < 2:
            raise ValueError("n_max must be at least 2")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def space(self) -> SpaceSpec:
        return SpaceSpec.fock(self.n_max)


@dataclass(frozen=True)
class AncillaParams:
    """Ancilla rates.  ``g`` means K = g a^dag a for the atom and all-optical
    schemes, the JC coupling for ``jc_*``, and the coefficient of
    a^dag a (b + b^dag + eps f) for the transformed electro-optic mode model.
    """

    gamma: float
    g: float = 0.0
    eps: float | None = None
    ancilla_dim: int = 8
    delta: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("ancilla damping Gamma must be positive")
        if int(self.ancilla_dim) < 2:
            raise ValueError("ancilla_dim must be at least 2")


# ---------------------------------------------------------------------------
# parameter linkage


def link_eo_tla(sys: SystemParams, gamma: float, **kw) -> AncillaParams:
    """K = Gamma Z = g a^dag a, i.e. g = Gamma chi."""
    return AncillaParams(gamma=gamma, g=gamma * sys.chi, **kw)


def link_ao(sys: SystemParams, gamma: float, **kw) -> AncillaParams:
    """Z = 4K / Gamma, i.e. 4 g / Gamma = chi."""
    return AncillaParams(gamma=gamma, g=gamma * sys.chi / 4.0, **kw)


def link_eo_mode(sys: SystemParams, gamma: float, diffusion_half: float = 0.001, **kw) -> AncillaParams:
    """Gamma / (2 eps^2) = ``diffusion_half`` and eps g_mode / Gamma = chi.

    The returned ``g`` is the coefficient in front of a^dag a (b + b^dag + eps f),
    which is half of the g in V = g a^dag a (b + b^dag) / 2; hence g = Gamma chi / (2 eps).
    """
    eps = math.sqrt(gamma / (2.0 * diffusion_half))
    return AncillaParams(gamma=gamma, g=gamma * sys.chi / (2.0 * eps), eps=eps, **kw)


def link_jc(sys: SystemParams, gamma: float, delta: float, z_coeff: float | None = None, **kw) -> AncillaParams:
    """Choose g so that 2 g^2 / (Gamma Delta) = z_coeff with Delta = delta + g^2/delta.

    Solves g^2 (2/(Gamma delta) - z_coeff/delta^2) ... exactly:
    2 g^2 = z Gamma (delta + g^2/delta)  =>  g^2 = z Gamma delta / (2 - z Gamma / delta).
    """
    z = sys.chi if z_coeff is None else z_coeff
    denom = 2.0 - z * gamma / delta
    if denom <= 0:
        raise ValueError("no real JC coupling reaches this Z_eff; increase delta")
    g = math.sqrt(z * gamma * delta / denom)
    return AncillaParams(gamma=gamma, g=g, delta=delta, ancilla_dim=2, **kw)


# ---------------------------------------------------------------------------
# operators


def system_hamiltonian(sys: SystemParams, space: SpaceSpec | None = None) -> Operator:
    """Two-photon drive -(i lam / 4)(a^2 - a^dag^2)."""
    space = space or sys.space
    a = annihilation(space, 0)
    ad = a.dag()
    return Operator(space, (-0.25j * sys.lam) * ((a @ a) - (ad @ ad)).matrix, True)


def feedback_operator(sys: SystemParams, space: SpaceSpec | None = None, chi: float | None = None) -> Operator:
    """Z = chi a^dag a."""
    space = space or sys.space
    return (sys.chi if chi is None else chi) * number(space, 0)


def kerr_hamiltonian(sys: SystemParams, space: SpaceSpec | None = None) -> Operator:
    """(chi / 2) a^dag^2 a^2."""
    space = space or sys.space
    a = annihilation(space, 0)
    ad = a.dag()
    return Operator(space, (0.5 * sys.chi) * (ad @ ad @ a @ a).matrix, True)


def compound_space(sys: SystemParams, kind: str, ancilla_dim: int = 2) -> SpaceSpec:
    if kind in ("two-level", "tla", "atom"):
        return SpaceSpec.of((FOCK, sys.n_max + 1), (TWO_LEVEL, 2))
    if kind == "mode":
        return SpaceSpec.of((FOCK, sys.n_max + 1), (FOCK, ancilla_dim))
    raise ValueError(f"unknown ancilla kind {kind!r}")


def _atom_flip(space: SpaceSpec) -> Operator:
    """exp(-i (pi/2) sigma_x) on the ancilla atom."""
    return op_function(Operator(space, pauli(space, 1, "x").matrix, True), exp_i_scaled(-math.pi / 2))


# ---------------------------------------------------------------------------
# system-only generators


def build_no_feedback(sys: SystemParams) -> SuperOp:
    return lindblad(system_hamiltonian(sys), [(annihilation(sys.space), 1.0)])


def _system_scheme(sys: SystemParams, scheme: str, **kw) -> SuperOp:
    space = sys.space
    return scheme_generator(scheme, system_hamiltonian(sys), annihilation(space), feedback_operator(sys), **kw)


def build_simple_feedback(sys: SystemParams) -> SuperOp:
    """-i[H, .] + D[exp(-i chi a^dag a) a]."""
    return _system_scheme(sys, "simple")


def build_eo_tla_adiabatic(sys: SystemParams, form: str = "closed") -> SuperOp:
    """Atom-mediated electro-optic feedback after eliminating the atom.

    ``closed``: C[H] + D[a] + C[Z](1 - C[Z])^{-1} J[a];
    ``quadrature``: C[H] + int_0^inf dq e^{-q} D[exp(-iqZ) a], by quadrature.
    """
    if form == "closed":
        return _system_scheme(sys, "eo_tla")
    if form == "quadrature":
        return _system_scheme(sys, "eo_tla_quadrature")
    raise ValueError(f"unknown form {form!r}")


def build_eo_mode_adiabatic(sys: SystemParams, anc: AncillaParams | None = None, *,
                            diffusion: float | None = None) -> SuperOp:
    """-i[H, .] + D[exp(-iZ) a] + (Gamma / eps^2) D[Z]."""
    if diffusion is None:
        if anc is None or anc.eps is None:
            raise ValueError("eo-mode adiabatic generator needs Gamma and eps (or diffusion)")
        diffusion = anc.gamma / anc.eps ** 2
    return _system_scheme(sys, "eo_mode", diffusion=diffusion)


def build_ao_adiabatic(sys: SystemParams, form: str = "rational") -> SuperOp:
    """All-optical feedback after eliminating the ancilla.

    ``rational``: C[H] + D[a] + C[Z] J[(1 + iZ/2)^{-1} a];
    ``arctan``: -i[H, .] + D[exp(-2i arctan(Z/2)) a].
    """
    if form == "rational":
        return _system_scheme(sys, "ao")
    if form == "arctan":
        return _system_scheme(sys, "ao_arctan")
    raise ValueError(f"unknown form {form!r}")


def build_kerr(sys: SystemParams) -> SuperOp:
    H = system_hamiltonian(sys) + kerr_hamiltonian(sys)
    return lindblad(H, [(annihilation(sys.space), 1.0)])


def third_order_expansion(sys: SystemParams, scheme: str) -> SuperOp:
    """Third-order small-Z expansion of ``simple``, ``eo_tla`` or ``ao``."""
    return _system_scheme(sys, f"{scheme}_3rd")


# ---------------------------------------------------------------------------
# compound generators


def build_eo_tla_compound(sys: SystemParams, anc: AncillaParams) -> SuperOp:
    """System plus atom: -i[H_s + g s^dag s a^dag a + delta s^dag s, .]
    + D[exp(-i pi sigma_x / 2) a] + Gamma D[s]."""
    space = compound_space(sys, "tla")
    a = annihilation(space, 0)
    s = pauli(space, 1, "lower")
    ee = s.dag() @ s
    H = system_hamiltonian(sys, space) + anc.g * (ee @ number(space, 0)) + anc.delta * ee
    H = Operator(space, H.matrix, True)
    return lindblad(H, [(_atom_flip(space) @ a, 1.0), (s, anc.gamma)])


def ao_compound_parts(sys: SystemParams, anc: AncillaParams, ancilla_kind: str = "tla"):
    """Hamiltonian and collapse operator of the cascaded compound in Lindblad form.

    The cascaded generator D[a] + Gamma D[x] + cascade(a, x) equals
    D[a + sqrt(Gamma) x] - i[(i sqrt(Gamma)/2)(a^dag x - x^dag a), .].
    """
    space = compound_space(sys, ancilla_kind, anc.ancilla_dim)
    a = annihilation(space, 0)
    x = pauli(space, 1, "lower") if ancilla_kind in ("tla", "two-level", "atom") else annihilation(space, 1)
    H = system_hamiltonian(sys, space) + anc.g * (number(space, 0) @ (x.dag() @ x))
    root = math.sqrt(anc.gamma)
    Hc = 0.5j * root * ((a.dag() @ x) - (x.dag() @ a))
    return space, Operator(space, (H + Hc).matrix, True), a + root * x, a, x


def build_ao_compound(sys: SystemParams, anc: AncillaParams, ancilla_kind: str = "tla") -> SuperOp:
    """-i[H_s + g a^dag a x^dag x, .] + D[a] + Gamma D[x] + cascade(a, x, Gamma), x = sigma or b."""
    space, _, _, a, x = ao_compound_parts(sys, anc, ancilla_kind)
    H = system_hamiltonian(sys, space) + anc.g * (number(space, 0) @ (x.dag() @ x))
    H = Operator(space, H.matrix, True)
    L = lindblad(H, [(a, 1.0), (x, anc.gamma)]) + cascade_term(a, x, anc.gamma)
    return SuperOp(space, L.matrix, True)


def _check_jc_hierarchy(anc: AncillaParams):
    if anc.delta == 0:
        raise ValueError("JC models need a non-zero detuning delta")
    if not (abs(anc.delta) > anc.g > anc.gamma):
        warnings.warn(
            f"JC parameters outside delta >> g >> Gamma (delta={anc.delta}, g={anc.g}, Gamma={anc.gamma})",
            RuntimeWarning, stacklevel=3)


def build_jc_compound_interaction(sys: SystemParams, anc: AncillaParams) -> SuperOp:
    """Jaynes-Cummings atom with feedback, interaction picture w.r.t. -g^2 (n + s^dag s)/delta.

    The two-photon drive is taken to be resonant with the shifted cavity, so it
    stays time independent in this frame.
    """
    _check_jc_hierarchy(anc)
    space = compound_space(sys, "tla")
    a = annihilation(space, 0)
    s = pauli(space, 1, "lower")
    ee = s.dag() @ s
    g, delta = anc.g, anc.delta
    H = (system_hamiltonian(sys, space)
         + (g * g / delta) * (number(space, 0) + ee)
         + g * ((a @ s.dag()) + (s @ a.dag()))
         + delta * ee)
    H = Operator(space, H.matrix, True)
    return lindblad(H, [(_atom_flip(space) @ a, 1.0), (s, anc.gamma)])


def jc_effective(anc: AncillaParams) -> dict:
    """Delta, Z_eff coefficient 2g^2/(Gamma Delta), extra damping and Kerr coefficients."""
    g, delta, gamma = anc.g, anc.delta, anc.gamma
    Delta = delta + g * g / delta
    return {
        "Delta": Delta,
        "z_coeff": 2.0 * g * g / (gamma * Delta),
        "extra_damping": gamma * g * g / Delta ** 2,
        "kerr": g ** 4 / Delta ** 3,
    }


def jc_extra_terms(sys: SystemParams, anc: AncillaParams) -> tuple[SuperOp, SuperOp]:
    """(Gamma g^2/Delta^2) D[a] and -i[g^4 a^dag^2 a^2 / Delta^3, .]."""
    eff = jc_effective(anc)
    space = sys.space
    a = annihilation(space)
    ad = a.dag()
    damp = eff["extra_damping"] * dissipator(a)
    kerr = commutator(Operator(space, eff["kerr"] * (ad @ ad @ a @ a).matrix, True))
    return damp, kerr


def build_jc_adiabatic(sys: SystemParams, anc: AncillaParams) -> SuperOp:
    """C[H_s] + D[a] + extra damping + Kerr + eo-TLA resolvent feedback with Z_eff."""
    _check_jc_hierarchy(anc)
    eff = jc_effective(anc)
    space = sys.space
    a = annihilation(space)
    Z_eff = eff["z_coeff"] * number(space)
    damp, kerr = jc_extra_terms(sys, anc)
    L = commutator(system_hamiltonian(sys)) + dissipator(a) + damp + kerr + resolvent_feedback(Z_eff, a, "eo_tla")
    return SuperOp(space, L.matrix, True)


# ---------------------------------------------------------------------------
# time-dependent descriptor (transformed electro-optic mode model)


@dataclass(frozen=True)
class Channel:
    op: Operator
    rate: float
    increments_f: bool = False

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("channel rates must be positive")


@dataclass(frozen=True)
class GeneratorDescriptor:
    """Lindblad data for unravelling.

    Static when ``f_operator`` is None.  Otherwise the Hamiltonian is
    ``hamiltonian + f(t) * f_operator`` where f jumps by 1 on channels with
    ``increments_f`` and decays as exp(-f_decay t) in between.
    """

    space: SpaceSpec
    hamiltonian: Operator
    channels: tuple[Channel, ...]
    f_operator: Operator | None = None
    f_decay: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        for ch in self.channels:
            if ch.op.space != self.space:
                raise ContractViolation("channel operator on the wrong space")
        if self.f_operator is not None:
            n_inc = sum(ch.increments_f for ch in self.channels)
            if n_inc != 1:
                raise ContractViolation("time-dependent models need exactly one f-incrementing channel")

    @property
    def time_dependent(self) -> bool:
        return self.f_operator is not None

    def superop(self, f: float = 0.0) -> SuperOp:
        """Liouvillian with the classical filter frozen at ``f``."""
        H = self.hamiltonian if self.f_operator is None or f == 0 else self.hamiltonian + f * self.f_operator
        return lindblad(H, [(ch.op, ch.rate) for ch in self.channels], self.space)


def describe_static(H: Operator, channels: Sequence[tuple[Operator, float]], label: str = "") -> GeneratorDescriptor:
    return GeneratorDescriptor(H.space, H, tuple(Channel(c, r) for c, r in channels), label=label)


def build_eo_mode_compound_transformed(sys: SystemParams, anc: AncillaParams) -> GeneratorDescriptor:
    """-i[g a^dag a (b + b^dag + eps f) + H_s, W] + D[a] W + Gamma D[b] W.

    f jumps by one on each system detection and decays at Gamma/2.
    """
    if anc.eps is None:
        raise ValueError("the electro-optic mode model needs eps")
    space = compound_space(sys, "mode", anc.ancilla_dim)
    a = annihilation(space, 0)
    b = annihilation(space, 1)
    n = number(space, 0)
    H = system_hamiltonian(sys, space) + anc.g * (n @ (b + b.dag()))
    H = Operator(space, H.matrix, True)
    f_op = None
    if anc.eps != 0 and anc.g != 0:
        f_op = Operator(space, (anc.g * anc.eps) * n.matrix, True)
    channels = (Channel(a, 1.0, increments_f=f_op is not None), Channel(b, anc.gamma))
    return GeneratorDescriptor(space, H, channels, f_op, anc.gamma / 2.0, label="eo_mode_transformed")


def describe_no_feedback(sys: SystemParams) -> GeneratorDescriptor:
    return describe_static(system_hamiltonian(sys), [(annihilation(sys.space), 1.0)], "none")


def describe_simple_feedback(sys: SystemParams) -> GeneratorDescriptor:
    space = sys.space
    U = op_function(feedback_operator(sys), exp_i_scaled(-1.0))
    return describe_static(system_hamiltonian(sys), [(U @ annihilation(space), 1.0)], "simple")


def describe_ao_compound(sys: SystemParams, anc: AncillaParams, ancilla_kind: str = "tla") -> GeneratorDescriptor:
    space, H, jump, _, _ = ao_compound_parts(sys, anc, ancilla_kind)
    return describe_static(H, [(jump, 1.0)], f"ao_{ancilla_kind}")


def with_chi(sys: SystemParams, chi: float) -> SystemParams:
    return replace(sys, chi=chi)
