"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion. Thresholds are fixed here and never tuned.
"""

import math
import sys
import time
import warnings

import numpy as np
import pytest

from optoprep.analysis import fidelity, nonclassicality, quadrature_stats, wigner
from optoprep.driving import ProtocolParams, schedule_squeeze
from optoprep.dynamics import IntegratorConfig, hamiltonian_rotating, schrodinger_propagate
from optoprep.experiments import execute, preset_config, cubic_state, squeeze_state
from optoprep.fockspace import (Convention, Mode, QuantumState, embed, expectation, number, product_state,
                                quadratures, truncation_scan, vacuum)
from optoprep.magnus import (magnus_terms_single_period, cancellation_check, propagator_cubic,
                             propagator_fourth, propagator_squeeze, qm_operator)

# ---- pinned thresholds ----------------------------------------------------
C1_DX2, C1_DX2_TOL = 0.16, 0.02
C1_DP2, C1_DP2_TOL = 1.57, 0.08
C1_RUNTIME_S = 60.0
C2_PRODUCT, C2_TOL = 0.25, 0.01
C3_RANGE = (17.0, 21.0)
C3_CONVERGENCE = 5e-3
C3_RUNTIME_S = 600.0
C4_RATIO_MIN = 0.9
C5_NEGATIVITY = -0.01
C6_F_N20, C6_F_N10 = 0.985, 0.999
C7_SQUEEZE_F, C7_CAVITY_POP, C7_CUBIC_F = 0.99, 1e-3, 0.98
C8_KAPPA, C8_MAX_LOSS, C8_POINTS = 1e-2, 0.05, 10
C9_GAMMA_MAX, C9_LOSS_T0, C9_LOSS_T1 = 1e-5, 5e-3, 5e-2
C10_MAX_LOSS, C10_RUNTIME_S = 0.10, 3600.0
C11_NEG_NBAR1, C11_RATIO = -0.005, 10.0
C12_RATIO_D0, C12_RATIO_D0_FACTOR = 0.2, 2.0
C12_RATIO_D3, C12_SUPPRESSION, C12_FIDELITY = 1e-5, 1e4, 0.95
C13_CASES, C13_RUNTIME_S = 100, 300.0

FIG2 = dict(k=1 / 60, eta=20.0, N=20, detuning=2)


@pytest.fixture(scope="module")
def fig1():
    t0 = time.perf_counter()
    res = execute(preset_config("fig1_squeeze"))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def fig3():
    return execute(preset_config("fig3_nonclassicality"))


def test_c01_squeezing_endpoint(fig1):
    res, elapsed = fig1
    dx2, dp2 = res.summary["dX2"], res.summary["dP2"]
    assert elapsed < C1_RUNTIME_S
    assert abs(dx2 - C1_DX2) <= C1_DX2_TOL, f"dX2 = {dx2:.4f}"
    assert abs(dp2 - C1_DP2) <= C1_DP2_TOL, f"dP2 = {dp2:.4f}"


def test_c02_minimum_uncertainty(fig1):
    res, _ = fig1
    assert abs(res.summary["product"] - C2_PRODUCT) <= C2_TOL


def test_c03_population_at_n20():
    t0 = time.perf_counter()
    p = ProtocolParams(**FIG2)
    report = truncation_scan(lambda d: cubic_state(p, d),
                             {"mean_n": lambda s: expectation(s, number(s.dim)).real}, (240, 480, 960),
                             threshold=C3_CONVERGENCE)
    elapsed = time.perf_counter() - t0
    n = report.values["mean_n"][-1]
    assert elapsed < C3_RUNTIME_S
    assert report.converged["mean_n"], f"<n> not converged: {report.values['mean_n']}"
    assert C3_RANGE[0] <= n <= C3_RANGE[1], f"<n_m> = {n:.4f}"


def test_c04_nonclassicality_saturation(fig3):
    tab = fig3.tables["nonclassicality"]
    I, n = tab.column("I"), tab.column("mean_n")
    assert np.all(I >= 0) and np.all(I <= n), list(zip(I, n))
    assert I[-1] / n[-1] >= C4_RATIO_MIN, f"I/<n> = {I[-1] / n[-1]:.4f}"


def test_c05_wigner_negativity():
    res = execute(preset_config("fig2_wigner"))
    assert res.summary["min_W_cut"] < C5_NEGATIVITY, res.summary["min_W_cut"]


def test_c06_order4_agreement():
    res = execute(preset_config("figS1_order4"))
    tab = res.tables["order4_fidelity"]
    N, F = tab.column("N"), tab.column("F34")
    assert F[N == 20][0] >= C6_F_N20, f"F34(20) = {F[N == 20][0]:.4f}"
    assert np.all(F[N <= 10] >= C6_F_N10), f"min F34(N<=10) = {F[N <= 10].min():.5f}"


def test_c07_magnus_numeric_oracle():
    sq = ProtocolParams(k=1 / 400, eta=10.0, N=11, detuning=1)
    dims = (12, 60)
    psi0 = product_state(vacuum(dims[0], Mode.CAVITY), vacuum(dims[1]))
    num = schrodinger_propagate(psi0, sq, schedule_squeeze(sq.N), dims)
    analytic = squeeze_state(sq, dims[1])
    f_sq = fidelity(analytic, num.reduced("mirror"))
    n_c = expectation(num, embed(number(dims[0], Mode.CAVITY), dims)).real

    cu = ProtocolParams(k=1 / 60, eta=20.0, N=5, detuning=2)
    dims3 = (12, 80)
    psi0 = product_state(vacuum(dims3[0], Mode.CAVITY), vacuum(dims3[1]))
    num3 = schrodinger_propagate(psi0, cu, schedule_squeeze(cu.N), dims3)
    f_cu = fidelity(cubic_state(cu, dims3[1]), num3.reduced("mirror"))
    failures = []
    if f_sq < C7_SQUEEZE_F:
        failures.append(f"squeeze fidelity {f_sq:.5f}")
    if n_c >= C7_CAVITY_POP:
        failures.append(f"cavity population {n_c:.2e}")
    if f_cu < C7_CUBIC_F:
        failures.append(f"cubic fidelity {f_cu:.5f}")
    assert not failures, "; ".join(failures)


def test_c08_photon_loss():
    cfg = preset_config("figS2_photon_loss")
    assert len(cfg.options["kappa_values"]) == C8_POINTS
    assert max(cfg.options["kappa_values"]) == pytest.approx(C8_KAPPA)
    res = execute(cfg)
    F = res.tables["photon_loss"].column("fidelity")
    assert 1 - F[-1] <= C8_MAX_LOSS
    assert np.all(np.diff(F) <= 1e-12), "fidelity not monotone in kappa"


def test_c09_mechanical_damping():
    cfg = preset_config("figS4_mech_damping")
    assert max(cfg.options["gamma_values"]) <= C9_GAMMA_MAX * (1 + 1e-12)
    res = execute(cfg)
    assert res.summary["fidelity_loss_max_nbar_0"] <= C9_LOSS_T0
    assert res.summary["fidelity_loss_max_nbar_1"] <= C9_LOSS_T1


def test_c10_full_lindblad_numerics():
    cfg = preset_config("figS6_master_equation")
    assert (cfg.truncation.cavity_dim, cfg.truncation.mirror_dim) == (15, 35)
    assert (cfg.params.k, cfg.params.eta, cfg.params.N, cfg.noise.nbar_bath) == (1 / 90, 20.0, 20, 1.0)
    t0 = time.perf_counter()
    res = execute(cfg)
    elapsed = time.perf_counter() - t0
    assert elapsed < C10_RUNTIME_S
    assert res.summary["fidelity_loss_max"] <= C10_MAX_LOSS, res.tables["master_equation"].rows


def test_c11_thermal_robustness():
    res = execute(preset_config("figS3_thermal"))
    m1, m10 = res.summary["min_W_nbar_1"], res.summary["min_W_nbar_10"]
    assert m1 < C11_NEG_NBAR1, f"min W (nbar=1) = {m1:.4g}"
    neg1, neg10 = max(0.0, -m1), max(0.0, -m10)
    assert neg10 * C11_RATIO <= neg1, f"negativity nbar=10 {neg10:.3g} vs nbar=1 {neg1:.3g}"


def test_c12_continuous_phase_suppression():
    res = execute(preset_config("figS5_continuous_phase"))
    r0, r3, f3 = res.summary["ratio_d0"], res.summary["ratio_d3"], res.summary["fidelity_d3"]
    failures = []
    if not C12_RATIO_D0 / C12_RATIO_D0_FACTOR <= r0 <= C12_RATIO_D0 * C12_RATIO_D0_FACTOR:
        failures.append(f"ratio(d=0) = {r0:.3g}")
    if r3 > C12_RATIO_D3:
        failures.append(f"ratio(d=3) = {r3:.3g}")
    if r0 / r3 < C12_SUPPRESSION:
        failures.append(f"suppression = {r0 / r3:.3g}")
    if f3 < C12_FIDELITY:
        failures.append(f"fidelity(d=3) = {f3:.4f}")
    assert not failures, "; ".join(failures)


def test_c13_algebraic_invariant_suite():
    rng = np.random.default_rng(20261014)
    t0 = time.perf_counter()
    counts = dict(cancellation=0, unitarity=0, hermiticity=0, normalization=0, convention=0)
    for _ in range(C13_CASES):
        N = int(rng.integers(3, 21))
        k = float(rng.uniform(1e-3, 0.04))
        eta = float(rng.uniform(0.5, 20.0))
        p2 = ProtocolParams(k, eta, N, 2)
        p1 = ProtocolParams(k, eta, N, 1)

        # phase cancellation of every single-period term under the roots-of-unity schedule
        terms = magnus_terms_single_period(p2, dims=(5, 8))
        assert cancellation_check(schedule_squeeze(N), terms).passed
        counts["cancellation"] += 1

        # unitarity of the closed-form propagators
        d = int(rng.integers(8, 30))
        U = propagator_squeeze(p1, d).toarray()
        assert np.abs(U.conj().T @ U - np.eye(d)).max() < 1e-10
        for prop in (propagator_cubic(p2, d)[0], propagator_fourth(p2, d)):
            V = prop.matrix().toarray()
            assert np.abs(V.conj().T @ V - np.eye(d)).max() < 1e-10
        counts["unitarity"] += 1

        # Hermiticity of Hamiltonians and generators
        t = float(rng.uniform(0, p2.duration))
        assert hamiltonian_rotating(t, p2, schedule_squeeze(N), (3, 4)).is_hermitian(1e-12)
        assert qm_operator(d).is_hermitian(1e-12)
        assert all(term.is_hermitian(1e-12) for term in terms)
        counts["hermiticity"] += 1

        # normalization of evolved states and of Wigner grids
        dim = int(rng.integers(4, 12))
        raw = rng.normal(size=(dim, 3)) + 1j * rng.normal(size=(dim, 3))
        lam = rng.dirichlet(np.ones(3))
        rho = (raw * lam) @ raw.conj().T
        rho /= np.trace(rho).real
        st = QuantumState.from_density(rho, (dim,))
        out = propagator_cubic(ProtocolParams(k, min(eta, 5.0), N, 2), dim)[0].act(st)
        assert abs(np.trace(out.density_matrix()).real - 1) < 1e-10
        axis = np.linspace(-7, 7, 141)
        assert abs(wigner(st, axis, axis).normalization() - 1) < 1e-3
        counts["normalization"] += 1

        # convention scaling: unscaled quadrature = √2 × half, variances scale by exactly 2
        Xp, _ = quadratures(dim, Convention.PAPER)
        Xh, _ = quadratures(dim, Convention.HALF)
        assert np.abs(Xp.toarray() - math.sqrt(2) * Xh.toarray()).max() < 1e-14
        qp = quadrature_stats(st, Convention.PAPER)
        qh = quadrature_stats(st, Convention.HALF)
        assert qp.dx2 == 2 * qh.dx2 and qp.dp2 == 2 * qh.dp2
        X0, P0 = rng.uniform(-2, 2, size=2)
        wp = wigner(st, [X0], [P0], Convention.PAPER, check=False).values[0, 0]
        wh = wigner(st, [X0 / math.sqrt(2)], [P0 / math.sqrt(2)], Convention.HALF, check=False).values[0, 0]
        assert abs(wp - wh / 2) < 1e-12
        counts["convention"] += 1
    assert min(counts.values()) >= C13_CASES
    assert time.perf_counter() - t0 < C13_RUNTIME_S


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
