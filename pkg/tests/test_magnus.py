import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from optoprep.driving import PERIOD, PhaseSchedule, ProtocolParams, schedule_squeeze
from optoprep.errors import DimensionError, ProtocolError
from optoprep.fockspace import QuantumState, vacuum
from optoprep.magnus import (CompositeLadder, cancellation_check, cubic_mirror_coefficient, interaction_terms,
                             magnus1_squeeze, magnus_quadrature, magnus_terms_single_period,
                             propagator_cubic, propagator_fourth, propagator_squeeze, qm_operator,
                             squeeze_decomposition, squeeze_parameters)


def _e0(dim):
    v = np.zeros(dim, complex)
    v[0] = 1
    return v


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 20), st.floats(0.0005, 0.002), st.floats(1.0, 5.0))
def test_squeeze_decomposition_reproduces_the_shear(N, k, eta):
    p = ProtocolParams(k, eta, N, 1)
    dim = 80
    shear = propagator_squeeze(p, dim).toarray() @ _e0(dim)
    decomposed = squeeze_decomposition(p, dim).toarray() @ _e0(dim)
    assert abs(np.vdot(shear, decomposed)) ** 2 >= 1 - 1e-8


def test_squeeze_parameters_closed_form():
    p = ProtocolParams(1 / 400, 10.0, 11, 1)
    res = squeeze_parameters(p)
    mod = (2 * math.pi * p.k * p.eta) ** 2 * p.N / math.tan(math.pi / p.N)
    assert res.modulus == pytest.approx(mod)
    assert res.delta == pytest.approx(math.atan(mod))
    vx, vp = res.principal_variances("half")
    assert vx * vp == pytest.approx(0.25)
    with pytest.raises(ProtocolError):
        squeeze_parameters(ProtocolParams(0.01, 1.0, 2, 1))


def test_magnus1_squeeze_is_hermitian_and_checks_detuning():
    assert magnus1_squeeze(ProtocolParams(0.01, 2.0, 4, 1)).is_hermitian()
    with pytest.raises(ProtocolError):
        magnus1_squeeze(ProtocolParams(0.01, 2.0, 4, 2))


def test_closed_form_propagators_are_unitary():
    p = ProtocolParams(1 / 60, 20.0, 20, 2)
    Vm, Vc = propagator_cubic(p, 40, 3)
    for U in (Vm.matrix().toarray(), Vc.toarray(), propagator_fourth(p, 40).matrix().toarray(),
              propagator_squeeze(ProtocolParams(0.002, 5.0, 8, 1), 40).toarray()):
        assert np.abs(U.conj().T @ U - np.eye(U.shape[0])).max() < 1e-10


def test_propagator_dag_inverts_the_action():
    p = ProtocolParams(1 / 60, 20.0, 20, 2)
    V = propagator_fourth(p, 60)
    v = np.random.default_rng(1).normal(size=60) + 0j
    v /= np.linalg.norm(v)
    assert np.allclose(V.dag().apply(V.apply(v)), v, atol=1e-10)
    out = V.act(vacuum(60))
    assert np.linalg.norm(out.data) == pytest.approx(1.0)
    rho = V.act(QuantumState.from_density(np.outer(_e0(60), _e0(60))))
    assert np.allclose(rho.data, np.outer(out.data, out.data.conj()), atol=1e-10)


def test_qm_operator_is_a_hermitian_band():
    Q = qm_operator(30).toarray()
    assert np.allclose(Q, Q.conj().T)
    i, j = np.nonzero(np.abs(Q) > 1e-14)
    assert np.abs(i - j).max() == 3
    with pytest.raises(DimensionError):
        qm_operator(3)


def test_reference_m2_matches_quadrature():
    p = ProtocolParams(0.01, 2.0, 5, 2)
    dims = (4, 8)
    exact = magnus_quadrature(p, schedule_squeeze(5), dims, order=2, t_span=(0, PERIOD))[1].operator.toarray()
    closed = sum(t.operator.toarray() for t in magnus_terms_single_period(p, dims) if t.order == 2)
    assert np.abs(exact - closed).max() < 1e-12 * np.abs(closed).max() + 1e-15


@pytest.mark.parametrize("eta", [1.0, 3.0])
def test_vacuum_projected_third_order_is_pure_cubic(eta):
    p = ProtocolParams(0.01, eta, 5, 2)
    dims = (3, 10)
    M3 = magnus_quadrature(p, schedule_squeeze(5), dims, order=3, t_span=(0, PERIOD))[2].operator.toarray()
    ref = cubic_mirror_coefficient(p.replace(N=1)) * qm_operator(dims[1], linear=0.0).toarray()
    assert np.abs(M3[:dims[1], :dims[1]] - ref).max() < 1e-10 * np.abs(ref).max()


def test_magnus_error_scales_one_order_above_truncation():
    dims = (5, 14)
    s = schedule_squeeze(3)

    def error(k, order):
        p = ProtocolParams(k, 2.0, 3, 2)
        L = CompositeLadder(dims, margin=3)
        ops, coeffs = interaction_terms(p, s, L)
        ops = [L.crop(o).toarray() for o in ops]
        v = _e0(ops[0].shape[0])
        exact = solve_ivp(lambda t, y: -1j * sum(g * o for g, o in zip(coeffs(np.array(t)), ops)) @ y,
                          (0, PERIOD), v, method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1]
        M = sum(t.operator.toarray() for t in magnus_quadrature(p, s, dims, order=order, t_span=(0, PERIOD)))
        return np.linalg.norm(exact - sla.expm(-1j * M) @ v)

    e1, e2 = error(0.02, 3), error(0.01, 3)
    assert math.log2(e1 / e2) == pytest.approx(4.0, abs=0.1)


def test_cancellation_passes_for_roots_of_unity_and_flags_constant_phase():
    p = ProtocolParams(0.01, 2.0, 5, 2)
    terms = magnus_terms_single_period(p, (4, 8))
    assert all(t.is_hermitian() for t in terms)
    assert cancellation_check(schedule_squeeze(5), terms).passed
    flagged = cancellation_check(PhaseSchedule("step", 5, (0.0,) * 5), terms).flagged
    assert {"m2c", "m2I", "m3I"} <= set(flagged)
    assert "m3m" not in flagged


def test_cancellation_needs_step_schedule():
    from optoprep.driving import schedule_continuous
    with pytest.raises(ProtocolError):
        cancellation_check(schedule_continuous(5, 2), [])


def test_whole_window_first_order_vanishes_for_step_schedule():
    p = ProtocolParams(0.01, 2.0, 5, 2)
    M1 = magnus_quadrature(p, schedule_squeeze(5), (3, 8), order=1)[0]
    assert M1.period == 0
    assert np.abs(M1.operator.toarray()).max() < 1e-12
