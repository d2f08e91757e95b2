import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optoprep.analysis import fidelity
from optoprep.driving import PhaseSchedule, ProtocolParams, schedule_squeeze
from optoprep.dynamics import (IntegratorConfig, NoiseParams, hamiltonian_displaced, hamiltonian_rotating,
                               lindblad_propagate, mech_damping_correction, photon_loss_correction,
                               schrodinger_propagate)
from optoprep.errors import ConfigError, PerturbativeRegimeError, ProtocolError
from optoprep.fockspace import (QuantumState, coherent_state, embed, expectation, fock_state, number,
                                product_state, vacuum)
from optoprep.magnus import propagator_squeeze


def _vac(dims):
    return product_state(vacuum(dims[0], "cavity"), vacuum(dims[1], "mirror"))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 12.5), st.integers(1, 2))
def test_hamiltonians_are_hermitian_with_zero_vacuum_energy(t, detuning):
    p = ProtocolParams(0.01, 3.0, 2, detuning)
    s = PhaseSchedule("step", 2, (0.0, math.pi))
    dims = (3, 5)
    for H in (hamiltonian_rotating(t, p, s, dims), hamiltonian_displaced(t, p, s, dims)):
        assert H.is_hermitian(1e-12)
    H = hamiltonian_rotating(t, p, s, dims).toarray()
    assert abs(H[0, 0]) < 1e-14


def test_hamiltonian_time_window_is_enforced():
    p = ProtocolParams(0.01, 3.0, 3, 2)
    with pytest.raises(ProtocolError):
        hamiltonian_rotating(-1.0, p, schedule_squeeze(3), (2, 3))


def test_config_validation():
    with pytest.raises(ConfigError):
        IntegratorConfig(method="euler")
    with pytest.raises(ConfigError):
        IntegratorConfig(frame="lab")
    with pytest.raises(ConfigError):
        NoiseParams(kappa=-1.0)
    assert IntegratorConfig().tolerances(False) == (1e-8, 1e-10)


def test_zero_coupling_is_the_identity():
    p = ProtocolParams(0.0, 0.0, 3, 2)
    dims = (2, 6)
    psi = product_state(vacuum(2, "cavity"), coherent_state(6, 0.0, "mirror"))
    out = schrodinger_propagate(psi, p, schedule_squeeze(3), dims)
    assert fidelity(out, psi) >= 1 - 1e-12


def test_mechanical_fock_state_decays_exponentially():
    p = ProtocolParams(0.0, 0.0, 3, 2)
    dims = (2, 4)
    gamma = 0.01
    rho = product_state(vacuum(2, "cavity"), fock_state(4, 1, "mirror"))
    out = lindblad_propagate(rho, p, schedule_squeeze(3), dims, NoiseParams(0.0, gamma, 0.0))
    n = expectation(out, embed(number(4, "mirror"), dims)).real
    assert n == pytest.approx(math.exp(-gamma * p.duration), rel=1e-2)


class TestSmallProtocol:
    p = ProtocolParams(0.01, 2.0, 3, 2)
    dims = (4, 10)
    s = schedule_squeeze(3)

    @pytest.fixture(scope="class")
    @classmethod
    def reference(cls):
        return schrodinger_propagate(_vac(cls.dims), cls.p, cls.s, cls.dims)

    def test_closed_master_equation_matches_schrodinger(self, reference):
        rho = lindblad_propagate(_vac(self.dims), self.p, self.s, self.dims, NoiseParams())
        assert fidelity(reference, rho) >= 1 - 1e-6

    @pytest.mark.parametrize("frame", ["rotating", "displaced"])
    def test_frames_agree(self, reference, frame):
        other = schrodinger_propagate(_vac(self.dims), self.p, self.s, self.dims, IntegratorConfig(frame=frame))
        assert fidelity(reference, other) >= 1 - 1e-6

    def test_norm_and_metadata(self, reference):
        assert np.linalg.norm(reference.data) == pytest.approx(1.0, abs=1e-12)
        assert "max_top_level_population" in reference.metadata

    def test_dims_mismatch(self):
        with pytest.raises(ConfigError):
            schrodinger_propagate(_vac((3, 10)), self.p, self.s, self.dims)


@pytest.mark.slow
def test_fidelity_degrades_monotonically_with_k_at_fixed_k_eta():
    dims = (8, 60)
    infid = []
    for k in (1 / 240, 1 / 120, 1 / 60):
        p = ProtocolParams(k, (1 / 40) / k, 5, 1)
        out = schrodinger_propagate(_vac(dims), p, schedule_squeeze(5), dims)
        ideal = QuantumState.from_ket(propagator_squeeze(p, dims[1]).toarray()[:, 0])
        infid.append(1 - fidelity(out.reduced("mirror"), ideal))
    assert infid[0] < infid[1] < infid[2]


class TestCorrections:
    p = ProtocolParams(1 / 60, 20.0, 20, 2)
    ideal = product_state(coherent_state(3, 0.3, "cavity"), coherent_state(30, 0.5 + 0.2j, "mirror"))

    def test_zero_rates_are_identity(self):
        rho = self.ideal.density_matrix()
        assert np.allclose(photon_loss_correction(self.ideal, self.p, 0.0).density_matrix(), rho)
        assert np.allclose(mech_damping_correction(self.ideal, self.p, NoiseParams()).density_matrix(), rho)

    @pytest.mark.parametrize("form", ["kraus", "linear"])
    def test_trace_and_hermiticity_are_preserved(self, form):
        out = mech_damping_correction(self.ideal, self.p, NoiseParams(1e-4, 1e-6, 1.0), form=form)
        rho = out.density_matrix()
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(rho, rho.conj().T)
        assert np.linalg.eigvalsh(rho).min() > -1e-12

    def test_kraus_and_linear_agree_at_first_order(self):
        base = self.ideal.density_matrix()
        kraus = photon_loss_correction(self.ideal, self.p, 1e-6).density_matrix()
        linear = photon_loss_correction(self.ideal, self.p, 1e-6, form="linear").density_matrix()
        first = np.abs(kraus - base).max()
        assert np.abs(kraus - linear).max() < 1e-3 * first

    def test_channels_add_at_first_order(self):
        noise = NoiseParams(1e-4, 1e-6, 1.0)
        loss = 1 - fidelity(self.ideal, photon_loss_correction(self.ideal, self.p, noise.kappa))
        damp = 1 - fidelity(self.ideal, mech_damping_correction(self.ideal, self.p, noise))
        both = 1 - fidelity(self.ideal, mech_damping_correction(
            photon_loss_correction(self.ideal, self.p, noise.kappa), self.p, noise))
        assert (loss + damp) / both == pytest.approx(1.0, rel=0.3)

    def test_regime_error_for_large_rates(self):
        with pytest.raises(PerturbativeRegimeError):
            mech_damping_correction(self.ideal, self.p, NoiseParams(0.0, 1e-2, 1.0))

    def test_mirror_only_state_rejected(self):
        with pytest.raises(ConfigError):
            photon_loss_correction(vacuum(5), self.p, 1e-3)
