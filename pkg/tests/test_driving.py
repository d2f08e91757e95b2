import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from optoprep.driving import (PERIOD, EnvelopeTable, PhaseSchedule, ProtocolParams, backaction_shift,
                              continuous_amplitudes, drive, envelope_f, envelope_function, phase_sums,
                              schedule_continuous, schedule_cubic, schedule_squeeze)
from optoprep.errors import ConfigError, ProtocolError


def test_params_validation_and_warning():
    with pytest.raises(ConfigError):
        ProtocolParams(-0.1, 1.0, 3)
    with pytest.raises(ConfigError):
        ProtocolParams(0.01, 1.0, 0)
    with pytest.raises(ConfigError):
        ProtocolParams(0.01, 1.0, 3, detuning=3)
    with pytest.warns(UserWarning):
        ProtocolParams(0.2, 1.0, 3)
    assert ProtocolParams(0.0, 0.0, 1).duration == PERIOD


@given(st.integers(3, 40))
def test_roots_of_unity_schedule(N):
    s = schedule_squeeze(N)
    assert s.phases[0] == 0.0
    assert np.allclose(np.diff(s.phases), 2 * math.pi / N)
    first, second = phase_sums(s.phases)
    assert abs(first) < 1e-12 * N and abs(second) < 1e-12 * N


def test_short_schedules_rejected():
    for bad in (1, 2):
        with pytest.raises(ProtocolError):
            schedule_squeeze(bad)
    with pytest.raises(ProtocolError):
        schedule_continuous(10, 7)


@given(st.integers(3, 30), st.floats(0.001, 0.05), st.floats(0.0, 20.0))
def test_backaction_corrected_schedule(N, k, eta):
    s = schedule_cubic(N, k, eta)
    delta = backaction_shift(k, eta)
    assert delta == pytest.approx(4 * math.pi / 3 * (k * eta) ** 2)
    assert np.allclose(s.effective_phases(), schedule_squeeze(N).phases)


def test_continuous_amplitude_oracles():
    for N in (5, 20):
        assert np.allclose(continuous_amplitudes(N, 1), [1 / N])
        assert np.allclose(continuous_amplitudes(N, 2), [4 / (3 * N), 1 / (6 * N)])
    assert continuous_amplitudes(20, 0).size == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 30), st.integers(1, 6), st.integers(0, 29))
def test_continuous_phase_is_flat_at_step_centres(N, d, j):
    s = schedule_continuous(N, d)
    t = (2 * (j % N) + 1) * math.pi
    for order in range(1, 2 * d, 2):
        assert abs(s.phase_derivative(t, order)) < 1e-9 * max(1.0, order ** (2 * d))
    # the linear ramp adds 2π/N per period
    assert s.phase(t + PERIOD) - s.phase(t) == pytest.approx(2 * math.pi / N)


def test_phase_derivative_matches_finite_difference():
    s = schedule_continuous(12, 3)
    t = np.linspace(0.1, 6.0, 7)
    h = 1e-5
    fd = (s.phase(t + h) - s.phase(t - h)) / (2 * h)
    assert np.allclose(fd, s.phase_derivative(t), atol=1e-8)


def test_schedule_round_trip():
    for s in (schedule_squeeze(7, 0.01), schedule_continuous(9, 2)):
        assert PhaseSchedule.from_json(s.to_json()) == s
    with pytest.raises(ProtocolError):
        PhaseSchedule("step", 3, (0.0,))


@pytest.mark.parametrize("detuning", [1, 2])
def test_step_envelope_closed_form_matches_quadrature(detuning):
    p = ProtocolParams(0.01, 3.0, 4, detuning)
    s = schedule_squeeze(4)
    for t in (0.3, 2.0, 7.7, 15.0, 4 * PERIOD):
        re = integrate.quad(lambda x: drive(x, p, s).real, 0, t, limit=200, points=[PERIOD, 2 * PERIOD, 3 * PERIOD])[0]
        im = integrate.quad(lambda x: drive(x, p, s).imag, 0, t, limit=200, points=[PERIOD, 2 * PERIOD, 3 * PERIOD])[0]
        assert envelope_f(t, p, s) == pytest.approx(complex(re, im), abs=1e-8)


@given(st.integers(3, 20), st.floats(0.5, 20.0))
def test_step_envelope_vanishes_at_period_boundaries(N, eta):
    p = ProtocolParams(0.01, eta, N, 2)
    f = envelope_function(p, schedule_squeeze(N))
    assert np.abs(f(PERIOD * np.arange(N + 1))).max() < 1e-12 * eta


def test_continuous_envelope_table_matches_adaptive_quadrature():
    p = ProtocolParams(0.01, 20.0, 5, 2)
    s = schedule_continuous(5, 3)
    table = EnvelopeTable(p, s)
    for t in (0.0, 1.3, 9.9, 21.0, p.duration):
        assert table(t)[0] == pytest.approx(envelope_f(t, p, s), abs=1e-9)


def test_envelope_rejects_times_outside_window():
    p = ProtocolParams(0.01, 1.0, 3, 2)
    with pytest.raises(ProtocolError):
        envelope_f(-1.0, p, schedule_squeeze(3))
    with pytest.raises(ProtocolError):
        envelope_f(p.duration + 1.0, p, schedule_squeeze(3))
