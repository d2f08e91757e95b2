"""Direct numerical propagation of the driven cavity-mirror system.

Three equivalent pictures are available. All remove the free rotation at
ω_c and ω_m, so every numerical frequency is O(ω_m).

``rotating``
    H̃(t) = i(ξ̃ a† − ξ̃* a) − k n_c X_m(t) with the drive explicit. The
    cavity carries the full coherent amplitude |f| ~ 2η, so it needs many
    cavity levels. This picture is only practical for small η.
``displaced``
    Cavity displaced by the drive envelope f(t). Here
    H_I = −k(n_c + f a† + f* a + |f|²)X_m(t), the Hamiltonian the Magnus
    expansion starts from. Photon loss acquires the extra term
    (iκ/2)(f* a − f a†).
``meanfield``
    Both modes displaced by the classical solution (α, β) of the mean-field
    equations, including damping. The linear terms cancel, so the
    fluctuation operators keep the standard dissipators and only quantum
    fluctuations have to fit into the truncation. This is the default.

Returned states are always expressed in the free-rotation picture.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .driving import PERIOD, PhaseSchedule, ProtocolParams, drive, envelope_function
from .errors import ConfigError, InstabilityError, IntegrationError, PerturbativeRegimeError, ProtocolError
from .fockspace import Mode, ModeOperator, QuantumState, ladder_matrix, top_level_population

FRAMES = ("rotating", "displaced", "meanfield")
LEAK_THRESHOLD = 1e-6
POSITIVITY_TOL = 1e-6
LOCAL_TOL_FACTOR = 1e-2
REGIME_LIMIT = 0.25


class TruncationLeakWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NoiseParams:
    """Decoherence rates in units of ω_m: photon loss κ, mechanical damping γ_m, bath occupation."""

    kappa: float = 0.0
    gamma_m: float = 0.0
    nbar_bath: float = 0.0

    def __post_init__(self):
        if min(self.kappa, self.gamma_m, self.nbar_bath) < 0:
            raise ConfigError("noise parameters must be non-negative")
        if self.kappa >= 0.1:
            warnings.warn(f"kappa = {self.kappa} is outside the resolved-sideband regime", stacklevel=3)

    @property
    def closed(self) -> bool:
        return self.kappa == 0 and self.gamma_m == 0


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping controls.

    ``method`` is ``adaptive-RK`` (scipy DOP853 for kets, RK45 for density
    matrices) or ``fixed-step`` (classical RK4 with step ``max_step``).
    Tolerances left as None default to 1e-8 for kets and 1e-6 for density
    matrices. ``samples_per_period`` sets how often diagnostics and density
    clean-up run in adaptive mode.
    """

    method: str = "adaptive-RK"
    rel_tol: float | None = None
    abs_tol: float | None = None
    max_step: float = PERIOD / 200
    frame: str = "meanfield"
    samples_per_period: int = 4
    diagnostics_path: str | None = None

    def __post_init__(self):
        if self.method not in ("adaptive-RK", "fixed-step"):
            raise ConfigError(f"unknown integrator method {self.method!r}")
        for tol in (self.rel_tol, self.abs_tol):
            if tol is not None and tol <= 0:
                raise ConfigError("tolerances must be positive")
        if self.max_step <= 0:
            raise ConfigError("max_step must be positive")
        if self.frame not in FRAMES:
            raise ConfigError(f"frame must be one of {FRAMES}")

    def tolerances(self, density: bool) -> tuple[float, float]:
        rel = self.rel_tol if self.rel_tol is not None else (1e-6 if density else 1e-8)
        abs_ = self.abs_tol if self.abs_tol is not None else rel * 1e-2
        return rel, abs_


# ----------------------------------------------------------------------------
# operators


class _Ops:
    """Composite ladder operators on the truncated space (cavity slow, mirror fast)."""

    def __init__(self, dims):
        dc, dm = dims
        self.dims = (int(dc), int(dm))
        Ic = sp.identity(dc, dtype=complex, format="csr")
        Im = sp.identity(dm, dtype=complex, format="csr")
        self.a = sp.kron(ladder_matrix(dc), Im, format="csr")
        self.ad = self.a.conj().T.tocsr()
        self.b = sp.kron(Ic, ladder_matrix(dm), format="csr")
        self.bd = self.b.conj().T.tocsr()
        self.nc = (self.ad @ self.a).tocsr()
        self.nm = (self.bd @ self.b).tocsr()


def _check_time(t, params):
    if t < -1e-9 or t > params.duration * (1 + 1e-12) + 1e-9:
        raise ProtocolError(f"t = {t} outside the protocol window [0, {params.duration}]")


def hamiltonian_rotating(t: float, params: ProtocolParams, schedule: PhaseSchedule,
                         dims: Sequence[int]) -> ModeOperator:
    """H̃(t) = i(ξ̃ a† − ξ̃* a) − k n_c (b† e^{it} + b e^{−it})."""
    _check_time(t, params)
    o = _Ops(dims)
    xi = complex(drive(t, params, schedule))
    H = 1j * (xi * o.ad - np.conj(xi) * o.a) - params.k * (o.nc @ (o.bd * np.exp(1j * t) + o.b * np.exp(-1j * t)))
    return ModeOperator(H, Mode.COMPOSITE, tuple(dims))


def hamiltonian_displaced(t: float, params: ProtocolParams, schedule: PhaseSchedule,
                          dims: Sequence[int]) -> ModeOperator:
    """H_I(t) = −k(n_c + f a† + f* a + |f|²)(b† e^{it} + b e^{−it})."""
    _check_time(t, params)
    o = _Ops(dims)
    f = complex(np.ravel(envelope_function(params, schedule)(t))[0])
    Xm = o.bd * np.exp(1j * t) + o.b * np.exp(-1j * t)
    cav = o.nc + f * o.ad + np.conj(f) * o.a + abs(f) ** 2 * sp.identity(o.nc.shape[0], format="csr")
    return ModeOperator(-params.k * (cav @ Xm), Mode.COMPOSITE, tuple(dims))


@dataclass
class _Model:
    """H(t) = Σ_j c_j(t, classical) O_j plus jump operators and a classical ODE."""

    ops: list
    coeffs: Callable
    jumps: list = field(default_factory=list)
    classical_rhs: Callable | None = None
    classical0: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))


def _jumps(o: _Ops, noise: NoiseParams):
    out = []
    if noise.kappa > 0:
        out.append((noise.kappa, o.a))
    if noise.gamma_m > 0:
        out.append((noise.gamma_m * (noise.nbar_bath + 1), o.b))
        if noise.nbar_bath > 0:
            out.append((noise.gamma_m * noise.nbar_bath, o.bd))
    return out


def _build_model(frame: str, params: ProtocolParams, schedule: PhaseSchedule, o: _Ops,
                 noise: NoiseParams) -> _Model:
    k = params.k
    jumps = _jumps(o, noise)
    if frame == "rotating":
        def coeffs(t, cl):
            xi = drive(t, params, schedule)
            return np.array([1j * xi, -1j * np.conj(xi), -k * np.exp(1j * t), -k * np.exp(-1j * t)])
        return _Model([o.ad, o.a, o.nc @ o.bd, o.nc @ o.b], coeffs, jumps)

    if frame == "displaced":
        f = envelope_function(params, schedule)
        kappa = noise.kappa

        def coeffs(t, cl):
            fv = complex(np.ravel(f(t))[0])
            ep, em = np.exp(1j * t), np.exp(-1j * t)
            af = abs(fv) ** 2
            base = -k * np.array([ep, em, fv * ep, fv * em, np.conj(fv) * ep, np.conj(fv) * em, af * ep, af * em])
            # D[a + f] = D[a] − i[(i/2)(f* a − f a†), ·]
            loss = np.array([0.5j * kappa * np.conj(fv), -0.5j * kappa * fv])
            return np.concatenate([base, loss])
        ops = [o.nc @ o.bd, o.nc @ o.b, o.ad @ o.bd, o.ad @ o.b, o.a @ o.bd, o.a @ o.b, o.bd, o.b, o.a, o.ad]
        return _Model(ops, coeffs, jumps)

    # mean-field displaced frame
    kappa, gamma = noise.kappa, noise.gamma_m

    def classical(t, cl):
        alpha, beta = cl
        xb = beta * np.exp(-1j * t) + np.conj(beta) * np.exp(1j * t)
        dalpha = drive(t, params, schedule) + 1j * k * xb * alpha - 0.5 * kappa * alpha
        dbeta = 1j * k * abs(alpha) ** 2 * np.exp(1j * t) - 0.5 * gamma * beta
        return np.array([dalpha, dbeta])

    def coeffs(t, cl):
        alpha, beta = cl
        ep, em = np.exp(1j * t), np.exp(-1j * t)
        ac = np.conj(alpha)
        xb = beta * em + np.conj(beta) * ep
        return -k * np.array([ac * em, ac * ep, alpha * em, alpha * ep, xb, em, ep])

    ops = [o.a @ o.b, o.a @ o.bd, o.ad @ o.b, o.ad @ o.bd, o.nc, o.nc @ o.b, o.nc @ o.bd]
    return _Model(ops, coeffs, jumps, classical, np.zeros(2, dtype=complex))


def _displace(o: _Ops, alpha: complex, beta: complex, vec: np.ndarray) -> np.ndarray:
    """Apply D_c(α) ⊗ D_m(β) to a ket or to the columns of a matrix."""
    gen = alpha * o.ad - np.conj(alpha) * o.a + beta * o.bd - np.conj(beta) * o.b
    if abs(alpha) == 0 and abs(beta) == 0:
        return vec
    return expm_multiply(gen.tocsr(), vec, traceA=0.0)


# ----------------------------------------------------------------------------
# integration engine


class _Diagnostics:
    def __init__(self, path):
        self.rows = []
        self.path = path

    def record(self, t, norm, leak):
        self.rows.append((t, norm, leak))

    def flush(self, header):
        if self.path:
            with open(self.path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for r in self.rows:
                    w.writerow([f"{x:.17e}" for x in r])


def _segments(params: ProtocolParams, schedule: PhaseSchedule):
    """Integration intervals: one per period so step discontinuities are breakpoints."""
    return [(s * PERIOD, (s + 1) * PERIOD) for s in range(params.N)]


def _rk4(fun, t0, t1, y, h):
    n = max(1, int(math.ceil((t1 - t0) / h - 1e-12)))
    dt = (t1 - t0) / n
    t = t0
    for _ in range(n):
        k1 = fun(t, y)
        k2 = fun(t + dt / 2, y + dt / 2 * k1)
        k3 = fun(t + dt / 2, y + dt / 2 * k2)
        k4 = fun(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
        yield t, y


class _Engine:
    def __init__(self, model: _Model, o: _Ops, density: bool):
        self.m = model
        self.o = o
        self.density = density
        self.D = o.a.shape[0]
        self.nc_cl = len(model.classical0)
        # Σ r LρL† acting on row-major vec(ρ) is the constant matrix Σ r L ⊗ conj(L)
        self.jumps = None
        if density and model.jumps:
            self.jumps = sum(r * sp.kron(L, L.conj(), format="csr") for r, L in model.jumps).tocsr()
        # anti-Hermitian part of the effective Hamiltonian, −(i/2) Σ r L†L
        self.decay = sum((-0.5j * r) * (L.conj().T @ L) for r, L in model.jumps) if model.jumps else None

    def rhs(self, t, y):
        ncl = self.nc_cl
        cl = y[:ncl]
        c = self.m.coeffs(t, cl)
        if self.density:
            rho = y[ncl:].reshape(self.D, self.D)
            H = self._hamiltonian(c)
            drho = (-1j * H) @ rho
            body = (drho + drho.conj().T).ravel()
            if self.jumps is not None:
                body += self.jumps @ y[ncl:]
        else:
            psi = y[ncl:]
            Hpsi = sum(cj * (Oj @ psi) for cj, Oj in zip(c, self.m.ops) if cj != 0)
            body = -1j * Hpsi if not np.isscalar(Hpsi) else np.zeros_like(psi)
        if ncl:
            return np.concatenate([self.m.classical_rhs(t, cl), body])
        return body

    def _hamiltonian(self, c):
        """Σ c_j O_j as one sparse matrix, with the decay term folded in for density matrices."""
        H = sp.csr_matrix((self.D, self.D), dtype=complex)
        for cj, Oj in zip(c, self.m.ops):
            if cj != 0:
                H = H + cj * Oj
        if self.density and self.decay is not None:
            H = H + self.decay
        return H

    def clean(self, y):
        if not self.density:
            return y
        ncl = self.nc_cl
        rho = y[ncl:].reshape(self.D, self.D)
        rho = 0.5 * (rho + rho.conj().T)
        out = y.copy()
        out[ncl:] = rho.ravel()
        return out


def _propagate(state0: QuantumState, params: ProtocolParams, schedule: PhaseSchedule, dims,
               noise: NoiseParams, config: IntegratorConfig) -> QuantumState:
    dims = tuple(int(d) for d in dims)
    if state0.dims != dims:
        raise ConfigError(f"initial state dims {state0.dims} do not match {dims}")
    if schedule.N != params.N:
        raise ProtocolError("schedule and parameters disagree on N")
    density = not state0.is_ket
    o = _Ops(dims)
    model = _build_model(config.frame, params, schedule, o, noise)
    eng = _Engine(model, o, density)
    rel, abs_ = config.tolerances(density)
    y = np.concatenate([model.classical0, state0.data.ravel()]).astype(complex)
    diag = _Diagnostics(config.diagnostics_path)
    ncl = eng.nc_cl

    def monitor(t, yv):
        body = yv[ncl:]
        if density:
            rho = body.reshape(eng.D, eng.D)
            norm = float(np.trace(rho).real)
            lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
            if lam < -POSITIVITY_TOL:
                raise InstabilityError(f"density matrix lost positivity at t = {t:.4f} (eigenvalue {lam:.2e})")
            pops = np.real(np.diag(rho))
        else:
            norm = float(np.vdot(body, body).real)
            pops = np.abs(body) ** 2
        leak = _top_population(pops, dims)
        diag.record(t, norm, leak)
        return leak

    worst_leak = monitor(0.0, y)
    scheme = "DOP853" if rel < 1e-7 else "RK45"
    for t0, t1 in _segments(params, schedule):
        if config.method == "fixed-step":
            samples = max(1, int(math.ceil((t1 - t0) / config.max_step - 1e-12)))
            every = max(1, samples // max(1, config.samples_per_period))
            for i, (t, y) in enumerate(_rk4(eng.rhs, t0, t1, y, config.max_step), start=1):
                y = eng.clean(y)
                if i % every == 0 or i == samples:
                    worst_leak = max(worst_leak, monitor(t, y))
            continue
        t_eval = np.linspace(t0, t1, config.samples_per_period + 1)[1:]
        # the ket norm is quadratic, so local errors accumulate into it over thousands of
        # steps; Runge-Kutta preserves the (linear) trace of a density matrix exactly
        tight = 1.0 if density else LOCAL_TOL_FACTOR
        sol = solve_ivp(eng.rhs, (t0, t1), y, method=scheme, rtol=rel * tight, atol=abs_ * tight,
                        max_step=config.max_step, t_eval=t_eval)
        if sol.status != 0:
            raise IntegrationError(f"integrator failed in [{t0:.3f}, {t1:.3f}]: {sol.message}")
        for j, t in enumerate(sol.t):
            yj = eng.clean(sol.y[:, j])
            worst_leak = max(worst_leak, monitor(t, yj))
        y = eng.clean(sol.y[:, -1])
    diag.flush(["t", "trace" if density else "norm", "top_level_population"])

    body = y[ncl:]
    if density:
        rho = body.reshape(eng.D, eng.D)
        tr = np.trace(rho).real
        if abs(tr - 1) > 1e-6:
            raise IntegrationError(f"trace drifted to {tr!r}")
    else:
        norm = np.vdot(body, body).real
        if abs(norm - 1) > 10 * rel:
            raise IntegrationError(f"norm drifted to {norm!r} (tolerance {10 * rel:.1e})")
    if worst_leak > LEAK_THRESHOLD:
        warnings.warn(f"top Fock levels reached population {worst_leak:.2e}; enlarge the truncation",
                      TruncationLeakWarning, stacklevel=3)

    # back to the free-rotation picture
    if config.frame == "meanfield":
        alpha, beta = y[0], y[1]
        shift_c, shift_m = alpha, beta
    elif config.frame == "displaced":
        shift_c, shift_m = complex(np.ravel(envelope_function(params, schedule)(params.duration))[0]), 0j
    else:
        shift_c, shift_m = 0j, 0j
    meta = {**state0.metadata, "frame": config.frame, "max_top_level_population": worst_leak,
            "classical_alpha": [float(np.real(shift_c)), float(np.imag(shift_c))],
            "classical_beta": [float(np.real(shift_m)), float(np.imag(shift_m))]}
    if density:
        half = _displace(o, shift_c, shift_m, rho)
        rho = _displace(o, shift_c, shift_m, half.conj().T).conj().T
        return QuantumState.from_density(rho, dims, Mode.COMPOSITE, clean=True, metadata=meta)
    psi = _displace(o, shift_c, shift_m, body)
    return QuantumState.from_ket(psi, dims, Mode.COMPOSITE, normalize=True, metadata=meta)


def _top_population(pops, dims, fraction=0.1):
    dc, dm = dims
    p = np.asarray(pops).reshape(dc, dm)
    pc, pm = p.sum(axis=1), p.sum(axis=0)
    kc, km = max(1, int(math.ceil(fraction * dc))), max(1, int(math.ceil(fraction * dm)))
    return float(max(pc[-kc:].sum() if dc > 1 else 0.0, pm[-km:].sum()))


def schrodinger_propagate(psi0: QuantumState, params: ProtocolParams, schedule: PhaseSchedule,
                          dims: Sequence[int], config: IntegratorConfig | None = None) -> QuantumState:
    """Integrate the closed-system dynamics over N periods; returns the ket at t = NT."""
    if not psi0.is_ket:
        raise ConfigError("schrodinger_propagate needs a ket")
    return _propagate(psi0, params, schedule, dims, NoiseParams(), config or IntegratorConfig())


def lindblad_propagate(rho0: QuantumState, params: ProtocolParams, schedule: PhaseSchedule,
                       dims: Sequence[int], noise: NoiseParams,
                       config: IntegratorConfig | None = None) -> QuantumState:
    """Integrate the master equation with photon loss and mechanical damping.

    dρ/dt = −i[H, ρ] + κ D[a]ρ + γ_m(n̄+1) D[b]ρ + γ_m n̄ D[b†]ρ, with
    D[L]ρ = LρL† − ½{L†L, ρ}.
    """
    return _propagate(rho0.to_density(), params, schedule, dims, noise, config or IntegratorConfig())


# ----------------------------------------------------------------------------
# perturbative decoherence corrections


def _dissipator(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    LdL = L.conj().T @ L
    return L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)


def _first_order(rho: np.ndarray, channels, form: str) -> np.ndarray:
    """First-order action of Σ ε_j D[L_j] on ρ.

    ``linear`` is ρ + Σ ε D[L]ρ, which on pure states carries O(ε²) negative
    eigenvalues. ``kraus`` writes the same first-order map as
    M₀ρM₀† + Σ ε LρL† with M₀ = 1 − ½Σ ε L†L, which is positive by construction
    and differs only at O(ε²).
    """
    if form == "linear":
        out = rho.copy()
        for eps, L in channels:
            out = out + eps * _dissipator(L, rho)
        return out
    if form != "kraus":
        raise ConfigError(f"unknown first-order form {form!r}")
    decay = sum(eps * (L.conj().T @ L) for eps, L in channels)
    lost = float(np.real(np.trace(decay @ rho)))
    if lost > REGIME_LIMIT:
        raise PerturbativeRegimeError(
            f"first-order jump probability {lost:.3f} exceeds {REGIME_LIMIT}; outside the perturbative regime")
    M0 = np.eye(rho.shape[0]) - 0.5 * decay
    out = M0 @ rho @ M0.conj().T
    for eps, L in channels:
        out = out + eps * (L @ rho @ L.conj().T)
    return out


def _finish(rho: np.ndarray, state: QuantumState, label: str) -> QuantumState:
    rho = 0.5 * (rho + rho.conj().T)
    lam, U = np.linalg.eigh(rho)
    if lam.min() < -POSITIVITY_TOL:
        raise PerturbativeRegimeError(
            f"{label}: first-order state has eigenvalue {lam.min():.2e}; outside the perturbative regime")
    if lam.min() < 0:
        lam = np.clip(lam, 0, None)
        rho = (U * lam) @ U.conj().T
    rho = rho / np.trace(rho).real
    return QuantumState.from_density(rho, state.dims, state.mode, clean=True, metadata=state.metadata)


def displacement_matrix(dim: int, amplitude: complex, margin: int = 40) -> np.ndarray:
    """exp(amplitude·b† − amplitude*·b) cropped from a larger space."""
    big = ladder_matrix(dim + margin).toarray()
    G = amplitude * big.conj().T - np.conj(amplitude) * big
    return sla.expm(G)[:dim, :dim]


def photon_loss_correction(rho_ideal: QuantumState, params: ProtocolParams, kappa: float,
                           form: str = "kraus") -> QuantumState:
    """First-order photon-loss correction ρ + κNT D[ã]ρ with ã = a ⊗ e^{k(b − b†)}.

    ``form`` selects how the first-order map is written; see ``_first_order``.
    """
    if kappa < 0:
        raise ConfigError("kappa must be non-negative")
    state = rho_ideal.to_density()
    if state.mode is not Mode.COMPOSITE:
        raise ConfigError("photon-loss correction acts on the composite cavity-mirror state")
    rho = state.density_matrix()
    if kappa == 0:
        return state
    dc, dm = state.dims
    a = ladder_matrix(dc).toarray()
    # e^{k(b − b†)} is a mirror displacement by amplitude −k
    L = np.kron(a, displacement_matrix(dm, -params.k))
    rho = _first_order(rho, [(kappa * params.duration, L)], form)
    return _finish(rho, state, "photon_loss_correction")


def mech_damping_correction(rho_ideal: QuantumState, params: ProtocolParams, noise: NoiseParams,
                            coefficient: str | float = "kappa", form: str = "kraus") -> QuantumState:
    """First-order mechanical-damping correction with b̃ = b − c(a†a + η²/2).

    ``coefficient`` selects c: ``"kappa"`` (the literal reading, noise.kappa),
    ``"k"`` (the coupling) or an explicit number. The rate is multiplied by
    the protocol duration NT.
    """
    state = rho_ideal.to_density()
    if state.mode is not Mode.COMPOSITE:
        raise ConfigError("mechanical-damping correction acts on the composite cavity-mirror state")
    if noise.gamma_m == 0:
        return state
    if coefficient == "kappa":
        c = noise.kappa
    elif coefficient == "k":
        c = params.k
    else:
        c = float(coefficient)
    dc, dm = state.dims
    a = ladder_matrix(dc).toarray()
    b = ladder_matrix(dm).toarray()
    nc = a.conj().T @ a
    bt = np.kron(np.eye(dc), b) - c * np.kron(nc + 0.5 * params.eta ** 2 * np.eye(dc), np.eye(dm))
    rho = state.density_matrix()
    n = noise.nbar_bath
    eps = noise.gamma_m * params.duration
    channels = [((n + 1) * eps, bt)] + ([(n * eps, bt.conj().T)] if n > 0 else [])
    rho = _first_order(rho, channels, form)
    return _finish(rho, state, "mech_damping_correction")
