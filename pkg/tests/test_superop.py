import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qfeedback.errors import ContractViolation, SpaceMismatchError
from qfeedback.fock import Operator, SpaceSpec, annihilation, number, pauli
from qfeedback.superop import (SuperOp, cascade_term, commutator, dissipator, expansion_order_probe,
                               half_line_rule, lindblad, resolvent_feedback, scheme_generator, spost, spre,
                               superop_distance, trace_row, unvec, vec)

from oracles import liouvillian_by_columns


def _random_ops(d, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    c = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    s = SpaceSpec.fock(d - 1)
    return s, Operator(s, h + h.conj().T, True), Operator(s, c)


def test_vec_is_column_stacking():
    m = np.arange(6).reshape(2, 3)
    assert list(vec(m)) == [0, 3, 1, 4, 2, 5]
    assert np.array_equal(unvec(vec(np.eye(3) * 2.0)), np.eye(3) * 2.0)
    assert np.allclose(trace_row(3) @ vec(np.diag([1.0, 2.0, 3.0])), 6.0)


def test_spre_spost_act_by_multiplication():
    s, A, B = _random_ops(4, 3)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(4, 4)) + 0j
    assert np.allclose(unvec(spre(A) @ vec(X)), A.dense() @ X)
    assert np.allclose(unvec(spost(B) @ vec(X)), X @ B.dense())


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_lindblad_matches_columnwise_oracle(d, seed, rate):
    s, H, c = _random_ops(d, seed)
    L = lindblad(H, [(c, rate)])
    ref = liouvillian_by_columns(H.dense(), [(c.dense(), rate)])
    assert np.allclose(L.matrix.toarray(), ref, atol=1e-11)
    assert L.trace_defect() < 1e-13
    assert L.hermiticity_defect() < 1e-13


def test_cascade_equals_lindblad_form():
    s = SpaceSpec.of(("fock", 4), ("two-level", 2))
    a = annihilation(s, 0)
    sm = pauli(s, 1, "lower")
    gamma = 2.7
    r = np.sqrt(gamma)
    lhs = dissipator(a) + gamma * dissipator(sm) + cascade_term(a, sm, gamma)
    Hc = Operator(s, (0.5j * r * ((a.dag() @ sm) - (sm.dag() @ a))).matrix, True)
    rhs = lindblad(Hc, [(a + r * sm, 1.0)])
    assert superop_distance(lhs, rhs) < 1e-13


def test_cascade_rejects_negative_rate():
    s = SpaceSpec.fock(2)
    a = annihilation(s)
    with pytest.raises(ValueError):
        cascade_term(a, a, -1.0)


def test_resolvent_eo_tla_elementwise_weights():
    s = SpaceSpec.fock(4)
    Z = 0.9 * number(s)
    a = annihilation(s)
    F = resolvent_feedback(Z, a, "eo_tla")
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    J = a.dense() @ X @ a.dense().conj().T
    w = 0.9 * (np.arange(5)[:, None] - np.arange(5)[None, :])
    assert np.allclose(F.apply(X), (-1j * w / (1 + 1j * w)) * J, atol=1e-13)


def test_resolvent_non_diagonal_Z():
    # unitary rotation of Z and c must rotate the superoperator consistently
    s, H, c = _random_ops(4, 9)
    Zd = np.diag([0.0, 0.4, 1.1, 2.0]).astype(complex)
    from scipy.stats import unitary_group

    U = unitary_group.rvs(4, random_state=2)
    Z = Operator(s, U @ Zd @ U.conj().T, True)
    F = resolvent_feedback(Z, c, "eo_tla")
    Fd = resolvent_feedback(Operator(s, Zd, True), Operator(s, U.conj().T @ c.dense() @ U), "eo_tla")
    X = np.eye(4) + 0.3 * np.ones((4, 4))
    lhs = F.apply(X)
    rhs = U @ Fd.apply(U.conj().T @ X @ U) @ U.conj().T
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_resolvent_needs_hermitian_Z():
    s, H, c = _random_ops(3, 1)
    with pytest.raises(ContractViolation):
        resolvent_feedback(c, c, "eo_tla")
    with pytest.raises(ValueError):
        resolvent_feedback(H, c, "bogus")


def test_half_line_rule_integrates_moments():
    q, w = half_line_rule()
    for k in range(6):
        assert np.sum(w * q ** k) == pytest.approx(math.factorial(k), rel=1e-12)
    # oscillatory integrand: int e^{-q} e^{-i a q} dq = 1/(1 + i a)
    for a in (0.5, 3.0, 20.0):
        assert np.sum(w * np.exp(-1j * a * q)) == pytest.approx(1 / (1 + 1j * a), abs=1e-12)


@pytest.mark.parametrize("scheme", ["none", "simple", "eo_tla", "eo_tla_quadrature", "ao", "ao_arctan"])
def test_scheme_generators_preserve_trace_and_hermiticity(scheme):
    s, H, c = _random_ops(5, 11)
    Z = 0.8 * number(s)
    L = scheme_generator(scheme, H, c, Z)
    assert L.trace_defect() < 1e-12
    assert L.hermiticity_defect() < 1e-12


def test_eo_mode_generator_with_zero_diffusion_is_simple():
    s, H, c = _random_ops(4, 5)
    Z = 0.6 * number(s)
    assert superop_distance(scheme_generator("eo_mode", H, c, Z, diffusion=0.0),
                            scheme_generator("simple", H, c, Z)) < 1e-14


def test_all_schemes_agree_at_first_order():
    s, H, c = _random_ops(4, 6)
    Zb = number(s)
    for other in ("eo_tla", "ao", "simple_3rd"):
        rep = expansion_order_probe(("simple", other), Zb, c, H, [1e-2, 5e-3, 2.5e-3])
        assert rep.fitted_power > 1.9


def test_probe_validates_chi_values():
    s, H, c = _random_ops(3, 2)
    with pytest.raises(ValueError):
        expansion_order_probe(("simple", "ao"), number(s), c, H, [0.1, 0.2, 0.05])
    with pytest.raises(ValueError):
        expansion_order_probe(("simple", "ao"), number(s), c, H, [0.1, 0.05])


def test_probe_identical_schemes_gives_nan_power():
    s, H, c = _random_ops(3, 2)
    rep = expansion_order_probe(("ao", "ao"), number(s), c, H, [0.1, 0.05, 0.025])
    assert np.all(rep.distances == 0) and np.isnan(rep.fitted_power)


def test_unknown_scheme():
    s, H, c = _random_ops(3, 2)
    with pytest.raises(ValueError):
        scheme_generator("nope", H, c, number(s))


def test_superop_space_checks():
    L1 = commutator(number(SpaceSpec.fock(2)))
    L2 = commutator(number(SpaceSpec.fock(3)))
    with pytest.raises(SpaceMismatchError):
        superop_distance(L1, L2)
    with pytest.raises(SpaceMismatchError):
        SuperOp(SpaceSpec.fock(2), np.eye(4))
