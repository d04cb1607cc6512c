import math
import warnings

import numpy as np
import pytest

from qfeedback.analysis import bures_distance
from qfeedback.errors import ContractViolation
from qfeedback.fock import annihilation, number
from qfeedback.models import (AncillaParams, Channel, GeneratorDescriptor, SystemParams, build_ao_adiabatic,
                              build_ao_compound, build_eo_mode_adiabatic, build_eo_mode_compound_transformed,
                              build_eo_tla_adiabatic, build_eo_tla_compound, build_jc_adiabatic,
                              build_jc_compound_interaction, build_kerr, build_no_feedback, build_simple_feedback,
                              compound_space, describe_ao_compound, describe_simple_feedback, jc_effective,
                              jc_extra_terms, kerr_hamiltonian, link_ao, link_eo_mode, link_eo_tla, link_jc,
                              system_hamiltonian, third_order_expansion, with_chi)
from qfeedback.steady import reduced_steady, steady_state
from qfeedback.superop import lindblad, superop_distance

from oracles import liouvillian_by_columns

SYS = SystemParams(lam=0.6, chi=math.pi / 2, n_max=6)


def test_params_validation():
    with pytest.raises(ValueError):
        SystemParams(0.5, 1.0, 1)
    with pytest.raises(ValueError):
        SystemParams(-0.1, 1.0, 5)
    with pytest.raises(ValueError):
        AncillaParams(gamma=0.0)
    with pytest.raises(ValueError):
        AncillaParams(gamma=1.0, ancilla_dim=1)


def test_parameter_links():
    assert link_eo_tla(SYS, 3.0).g == pytest.approx(3.0 * SYS.chi)
    assert 4 * link_ao(SYS, 3.0).g / 3.0 == pytest.approx(SYS.chi)
    anc = link_eo_mode(SYS, 10.0)
    assert anc.gamma / (2 * anc.eps ** 2) == pytest.approx(0.001)
    assert 2 * anc.eps * anc.g / anc.gamma == pytest.approx(SYS.chi)
    jc = link_jc(SYS, 4.0, 100.0)
    assert jc_effective(jc)["z_coeff"] == pytest.approx(SYS.chi)
    with pytest.raises(ValueError):
        link_jc(SYS, 4.0, 1.0)


def test_system_hamiltonian_matches_definition():
    a = annihilation(SYS.space).dense()
    ad = a.conj().T
    H = -0.25j * SYS.lam * (a @ a - ad @ ad)
    assert np.allclose(system_hamiltonian(SYS).dense(), H)
    assert np.allclose(kerr_hamiltonian(SYS).dense(), 0.5 * SYS.chi * ad @ ad @ a @ a)


def test_no_feedback_against_oracle():
    a = annihilation(SYS.space).dense()
    ref = liouvillian_by_columns(system_hamiltonian(SYS).dense(), [(a, 1.0)])
    assert np.allclose(build_no_feedback(SYS).matrix.toarray(), ref, atol=1e-13)


def test_simple_feedback_against_oracle():
    a = annihilation(SYS.space).dense()
    U = np.diag(np.exp(-1j * SYS.chi * np.arange(SYS.n_max + 1)))
    ref = liouvillian_by_columns(system_hamiltonian(SYS).dense(), [(U @ a, 1.0)])
    assert np.allclose(build_simple_feedback(SYS).matrix.toarray(), ref, atol=1e-13)


def _all_generators():
    yield "none", build_no_feedback(SYS)
    yield "simple", build_simple_feedback(SYS)
    yield "eo_tla_closed", build_eo_tla_adiabatic(SYS)
    yield "eo_tla_quadrature", build_eo_tla_adiabatic(SYS, "quadrature")
    yield "eo_mode", build_eo_mode_adiabatic(SYS, link_eo_mode(SYS, 10.0))
    yield "ao_rational", build_ao_adiabatic(SYS)
    yield "ao_arctan", build_ao_adiabatic(SYS, "arctan")
    yield "kerr", build_kerr(SYS)
    yield "eo_tla_compound", build_eo_tla_compound(SYS, link_eo_tla(SYS, 2.0))
    yield "ao_tla_compound", build_ao_compound(SYS, link_ao(SYS, 2.0))
    yield "ao_mode_compound", build_ao_compound(SYS, link_ao(SYS, 2.0, ancilla_dim=3), "mode")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jc = link_jc(SYS, 2.0, 50.0)
        yield "jc_compound", build_jc_compound_interaction(SYS, jc)
        yield "jc_adiabatic", build_jc_adiabatic(SYS, jc)


@pytest.mark.parametrize("name,L", list(_all_generators()), ids=lambda x: x if isinstance(x, str) else "")
def test_generators_are_trace_and_hermiticity_preserving(name, L):
    assert L.trace_defect() < 1e-12
    assert L.hermiticity_defect() < 1e-12


@pytest.mark.parametrize("scheme,build", [("ao", build_ao_adiabatic), ("eo_tla", build_eo_tla_adiabatic),
                                          ("simple", build_simple_feedback)])
def test_third_order_remainder_is_fourth_order(scheme, build):
    d1, d2 = (superop_distance(third_order_expansion(with_chi(SYS, x), scheme), build(with_chi(SYS, x)))
              for x in (0.01, 0.005))
    assert d1 < 1e-4
    assert d1 / d2 == pytest.approx(16.0, rel=0.05)


def test_ao_descriptor_matches_cascade_form():
    anc = link_ao(SYS, 3.0)
    for kind, anc_k in (("tla", anc), ("mode", link_ao(SYS, 3.0, ancilla_dim=3))):
        desc = describe_ao_compound(SYS, anc_k, kind)
        assert superop_distance(desc.superop(), build_ao_compound(SYS, anc_k, kind)) < 1e-13


def test_compound_space_kinds():
    assert compound_space(SYS, "tla").dims == (7, 2)
    assert compound_space(SYS, "mode", 5).dims == (7, 5)
    with pytest.raises(ValueError):
        compound_space(SYS, "qutrit")


def test_eo_tla_compound_approaches_adiabatic_at_large_gamma():
    sysp = SystemParams(0.6, math.pi / 2, 8)
    ref = steady_state(build_eo_tla_adiabatic(sysp)).state
    dist = [bures_distance(reduced_steady(build_eo_tla_compound(sysp, link_eo_tla(sysp, g))), ref).bures
            for g in (5.0, 50.0, 500.0)]
    assert dist[0] > dist[1] > dist[2]
    assert dist[2] < 1e-3


def test_zero_feedback_compounds_reduce_to_no_feedback():
    sysp = with_chi(SYS, 0.0)
    ref = steady_state(build_no_feedback(sysp)).state
    eo = reduced_steady(build_eo_tla_compound(sysp, link_eo_tla(sysp, 2.0)))
    ao = reduced_steady(build_ao_compound(sysp, link_ao(sysp, 2.0)))
    # the atom flip is unconditional, so with g = 0 the eo-TLA compound has no back-action on the system
    assert bures_distance(eo, ref).bures < 1e-10
    assert bures_distance(ao, ref).bures < 1e-10


def test_jc_hierarchy_checks():
    with pytest.raises(ValueError):
        build_jc_compound_interaction(SYS, AncillaParams(gamma=1.0, g=2.0, delta=0.0, ancilla_dim=2))
    with pytest.warns(RuntimeWarning):
        build_jc_adiabatic(SYS, AncillaParams(gamma=5.0, g=2.0, delta=10.0, ancilla_dim=2))


def test_jc_extra_terms_scale_with_detuning():
    jc1 = AncillaParams(gamma=2.0, g=10.0, delta=100.0, ancilla_dim=2)
    jc2 = AncillaParams(gamma=2.0, g=10.0, delta=400.0, ancilla_dim=2)
    d1, k1 = jc_extra_terms(SYS, jc1)
    d2, k2 = jc_extra_terms(SYS, jc2)
    D1, D2 = jc_effective(jc1)["Delta"], jc_effective(jc2)["Delta"]
    assert d1.norm() / d2.norm() == pytest.approx((D2 / D1) ** 2, rel=1e-12)
    assert k1.norm() / k2.norm() == pytest.approx((D2 / D1) ** 3, rel=1e-12)


def test_eo_mode_transformed_descriptor():
    anc = link_eo_mode(SYS, 10.0, ancilla_dim=3)
    desc = build_eo_mode_compound_transformed(SYS, anc)
    assert desc.time_dependent
    assert desc.f_decay == pytest.approx(5.0)
    assert sum(ch.increments_f for ch in desc.channels) == 1
    F = desc.f_operator.dense()
    assert np.allclose(F, anc.g * anc.eps * number(desc.space, 0).dense())
    frozen = desc.superop(0.7)
    H = desc.hamiltonian + 0.7 * desc.f_operator
    ref = lindblad(H, [(ch.op, ch.rate) for ch in desc.channels])
    assert superop_distance(frozen, ref) < 1e-14
    static = build_eo_mode_compound_transformed(SYS, AncillaParams(10.0, anc.g, 0.0, 3))
    assert not static.time_dependent


def test_descriptor_contracts():
    desc = describe_simple_feedback(SYS)
    with pytest.raises(ContractViolation):
        GeneratorDescriptor(desc.space, desc.hamiltonian, desc.channels, desc.hamiltonian, 1.0)
    with pytest.raises(ValueError):
        Channel(annihilation(SYS.space), 0.0)
    other = compound_space(SYS, "tla")
    with pytest.raises(ContractViolation):
        GeneratorDescriptor(other, desc.hamiltonian, desc.channels)
