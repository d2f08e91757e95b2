"""Magnus generators and end-of-protocol propagators.

Sign convention: a generator M enters the propagator as V = exp(−i M), and
all operators use unscaled quadratures X = b + b†, P = i(b† − b).
The interaction-frame Hamiltonian is

    H_I(t) = −k (n_c + f a† + f* a + |f|²) (b† e^{it} + b e^{−it}),

where f is the drive envelope from :mod:`optoprep.driving`.

Products of truncated ladder operators differ from the untruncated ones in
the top few Fock levels. Every polynomial generator here is therefore built
on a space enlarged by its degree and cropped, which reproduces the exact
matrix elements.
"""

from __future__ import annotations

import math
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .driving import PERIOD, PhaseSchedule, ProtocolParams, envelope_function
from .errors import DimensionError, ProtocolError
from .fockspace import (
    Mode,
    ModeOperator,
    QuantumState,
    crop,
    exact_polynomial,
    ladder_matrix,
)

SQRT3 = math.sqrt(3.0)


# ----------------------------------------------------------------------------
# composite operator algebra with exact edges


class CompositeLadder:
    """Ladder operators on an enlarged cavity ⊗ mirror space.

    Polynomials of degree ≤ ``margin`` in each mode are formed from the
    attributes and then passed through :meth:`crop` to obtain exact matrix
    elements on ``dims``.
    """

    def __init__(self, dims: Sequence[int], margin: int = 4):
        self.dims = tuple(int(d) for d in dims)
        dc, dm = self.dims
        self.big = (dc + margin, dm + margin)
        Dc, Dm = self.big
        a1, b1 = ladder_matrix(Dc), ladder_matrix(Dm)
        Ic = sp.identity(Dc, dtype=complex, format="csr")
        Im = sp.identity(Dm, dtype=complex, format="csr")
        self.a = sp.kron(a1, Im, format="csr")
        self.ad = self.a.conj().T.tocsr()
        self.b = sp.kron(Ic, b1, format="csr")
        self.bd = self.b.conj().T.tocsr()
        self.nc = self.ad @ self.a
        self.nm = self.bd @ self.b
        self.Xc = self.a + self.ad
        self.Pc = 1j * (self.ad - self.a)
        self.Xm = self.b + self.bd
        self.Pm = 1j * (self.bd - self.b)
        self.I = sp.identity(Dc * Dm, dtype=complex, format="csr")
        c, m = np.meshgrid(np.arange(dc), np.arange(dm), indexing="ij")
        self._keep = (c * Dm + m).ravel()

    def crop(self, matrix) -> sp.csr_matrix:
        mat = sp.csr_matrix(matrix)
        return mat[self._keep][:, self._keep].tocsr()

    def operator(self, matrix) -> ModeOperator:
        return ModeOperator(self.crop(matrix), Mode.COMPOSITE, self.dims)

    def qm(self, linear: float = 1.5) -> sp.csr_matrix:
        z = (1 + 1 / SQRT3) * self.b + (1 - 1 / SQRT3) * self.bd
        zd = z.conj().T
        return z @ z @ z + zd @ zd @ zd + linear * self.Xm


# ----------------------------------------------------------------------------
# result types


@dataclass(frozen=True, eq=False)
class MagnusTerm:
    """One Magnus generator contribution.

    ``period`` is the 1-based period label, 0 for the whole protocol window.
    """

    order: int
    operator: ModeOperator
    period: int = 1
    label: str = ""

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return self.operator.is_hermitian(tol)


@dataclass(frozen=True)
class SqueezeResult:
    zeta: complex
    delta: float
    N: int
    k: float
    eta: float

    @property
    def modulus(self) -> float:
        return abs(self.zeta)

    @property
    def r_exact(self) -> float:
        """Squeezing modulus of the exact shear exp(i|ζ|P²/2)|0>, asinh|ζ|."""
        return math.asinh(abs(self.zeta))

    def principal_variances(self, convention: str = "half") -> tuple[float, float]:
        scale = 0.5 if convention == "half" else 1.0
        r = self.r_exact
        return scale * math.exp(-2 * r), scale * math.exp(2 * r)


# ----------------------------------------------------------------------------
# squeezing protocol


def _require(params: ProtocolParams, detuning: int, what: str):
    if params.detuning != detuning:
        raise ProtocolError(f"{what} needs detuning multiple {detuning}, got {params.detuning}")


def magnus1_squeeze(params: ProtocolParams, dims: Sequence[int] = (4, 8)) -> MagnusTerm:
    """First-order single-period generator −2πkη X_c ⊗ P_m."""
    _require(params, 1, "magnus1_squeeze")
    L = CompositeLadder(dims, margin=1)
    M = -2 * math.pi * params.k * params.eta * (L.Xc @ L.Pm)
    return MagnusTerm(1, L.operator(M), 1, "M1")


def shear_coefficient(params: ProtocolParams) -> float:
    """c in V_m = exp(i c P_m²): 2(πkη)² N cot(π/N)."""
    if params.N < 3:
        raise ProtocolError("squeezing closed form needs N >= 3")
    return 2 * (math.pi * params.k * params.eta) ** 2 * params.N / math.tan(math.pi / params.N)


def squeeze_parameters(params: ProtocolParams) -> SqueezeResult:
    """ζ = i|ζ|e^{iδ} with |ζ| = (2πkη)² N cot(π/N) and δ = arctan|ζ|."""
    mod = 2.0 * shear_coefficient(params)
    delta = math.atan(mod)
    zeta = 1j * mod * complex(math.cos(delta), math.sin(delta))
    return SqueezeResult(zeta, delta, params.N, params.k, params.eta)


def _hermitian_expm(H: np.ndarray, coef: float) -> np.ndarray:
    """exp(i·coef·H) for Hermitian H via eigendecomposition."""
    lam, U = np.linalg.eigh(H)
    return (U * np.exp(1j * coef * lam)) @ U.conj().T


def _p_squared(dim: int) -> sp.csr_matrix:
    return exact_polynomial(dim, lambda b: -((b.conj().T - b) @ (b.conj().T - b)), 2)


def propagator_squeeze(params: ProtocolParams, dim: int) -> ModeOperator:
    """Mirror unitary exp(2i(πkη)² N cot(π/N) P_m²), dense on ``dim`` levels."""
    _require(params, 1, "propagator_squeeze")
    c = shear_coefficient(params)
    V = _hermitian_expm(_p_squared(dim).toarray(), c)
    return ModeOperator(sp.csr_matrix(V), Mode.MIRROR, (dim,))


def squeeze_decomposition(params: ProtocolParams, dim: int, exact: bool = True) -> ModeOperator:
    """Squeeze ∘ rotation form exp((ζ'* b² − ζ' b†²)/2) e^{iδ b†b}.

    ζ' = i r e^{iδ}. With ``exact`` the modulus is r = asinh|ζ| and the
    product equals the shear exp(i|ζ|P²/2) up to a global phase; otherwise
    r = |ζ|, the small-|ζ| approximation.
    """
    res = squeeze_parameters(params)
    r = res.r_exact if exact else res.modulus
    zp = 1j * r * complex(math.cos(res.delta), math.sin(res.delta))
    gen = 0.5 * (np.conj(zp) * (ladder_matrix(dim + 2) @ ladder_matrix(dim + 2))
                 - zp * (ladder_matrix(dim + 2).T @ ladder_matrix(dim + 2).T))
    S = sla.expm(gen.toarray())[:dim, :dim]
    R = np.exp(1j * res.delta * np.arange(dim))
    return ModeOperator(sp.csr_matrix(S * R[None, :]), Mode.MIRROR, (dim,))


def cavity_propagator(params: ProtocolParams, dim: int) -> ModeOperator:
    """Diagonal residual cavity unitary left by either protocol."""
    n = np.arange(dim, dtype=float)
    k2, eta2, N = params.k ** 2, params.eta ** 2, params.N
    if params.detuning == 1:
        phase = 2 * math.pi * N * k2 * (n ** 2 + 7 * eta2 * n)
    else:
        phase = 2 * math.pi * k2 * (n ** 2 + (2.0 / 3.0) * eta2 * n) * N
    return ModeOperator(sp.diags(np.exp(1j * phase), 0, format="csr"), Mode.CAVITY, (dim,))


# ----------------------------------------------------------------------------
# cubic protocol


def qm_operator(dim: int, linear: float = 1.5) -> ModeOperator:
    """Q_m = (X + iP/√3)³ + (X − iP/√3)³ + c·X with c = 3/2, a Hermitian band of width 3.

    The third-order Magnus quadrature projected on the cavity vacuum gives
    c = 0; ``linear`` selects the coefficient.
    """
    if dim < 4:
        raise DimensionError("Q_m needs dim >= 4")

    def build(b):
        bd = b.conj().T
        z = (1 + 1 / SQRT3) * b + (1 - 1 / SQRT3) * bd
        zd = z.conj().T
        return z @ z @ z + zd @ zd @ zd + linear * (b + bd)

    return ModeOperator(exact_polynomial(dim, build, 3), Mode.MIRROR, (dim,))


@dataclass(frozen=True, eq=False)
class Propagator:
    """Ordered product of matrix exponentials, applied by exponential action.

    ``factors`` holds ``(c, G)`` pairs in written left-to-right order, so the
    operator is exp(c₁G₁)·exp(c₂G₂)·…; the rightmost factor acts first.
    """

    factors: tuple
    mode: Mode = Mode.MIRROR
    dims: tuple = ()

    @property
    def dim(self) -> int:
        return self.factors[0][1].shape[0]

    def apply(self, vector: np.ndarray) -> np.ndarray:
        out = np.asarray(vector, dtype=complex)
        for c, G in reversed(self.factors):
            if c == 0:
                continue
            out = expm_multiply(c * G, out, traceA=0.0)
        return out

    def dag(self) -> "Propagator":
        return Propagator(tuple((np.conj(c), G.conj().T.tocsr()) for c, G in reversed(self.factors)),
                          self.mode, self.dims)

    def matrix(self) -> ModeOperator:
        """Dense unitary; only sensible for modest dimensions."""
        out = np.eye(self.dim, dtype=complex)
        for c, G in self.factors:
            out = out @ sla.expm(c * G.toarray())
        return ModeOperator(sp.csr_matrix(out), self.mode, self.dims or (self.dim,))

    def act(self, state: QuantumState) -> QuantumState:
        if state.is_ket:
            return QuantumState.from_ket(self.apply(state.data), state.dims, state.mode, normalize=True,
                                         metadata=state.metadata)
        half = self.apply(state.data)
        rho = self.apply(half.conj().T).conj().T
        return QuantumState.from_density(rho, state.dims, state.mode, clean=True, metadata=state.metadata)

    __matmul__ = apply


def cubic_mirror_coefficient(params: ProtocolParams) -> float:
    """θ in V_m^(3) = exp(−iθ Q_m): (π/3) N k³ η²."""
    return math.pi / 3.0 * params.N * params.k ** 3 * params.eta ** 2


def propagator_cubic(params: ProtocolParams, dim: int, cavity_dim: int = 2,
                     q_linear: float = 1.5) -> tuple[Propagator, ModeOperator]:
    """(V_m^(3), V_c): cubic mirror propagator and diagonal cavity phase."""
    _require(params, 2, "propagator_cubic")
    Q = qm_operator(dim, q_linear).elements
    Vm = Propagator(((-1j * cubic_mirror_coefficient(params), Q),), Mode.MIRROR, (dim,))
    return Vm, cavity_propagator(params, cavity_dim)


def zeta_fourth(params: ProtocolParams) -> float:
    if params.N < 3:
        raise ProtocolError("fourth-order closed form needs N >= 3")
    return (math.pi * params.k ** 2 * params.eta) ** 2 * params.N / math.tan(math.pi / params.N)


def propagator_fourth(params: ProtocolParams, dim: int) -> Propagator:
    """Fourth-order mirror propagator: cubic, quartic shear and quadratic factors, in that order."""
    _require(params, 2, "propagator_fourth")
    k, eta, N = params.k, params.eta, params.N
    Q = qm_operator(dim).elements
    shear = exact_polynomial(dim, lambda b: (b.conj().T @ b.conj().T + b @ b) @ (b.conj().T @ b.conj().T + b @ b), 4)

    def quad(b):
        bd = b.conj().T
        return (124 * eta - 5) / 20.0 * (b @ b + bd @ bd) + (575 + 634 * eta) / 90.0 * (bd @ b)

    quadratic = exact_polynomial(dim, quad, 2)
    factors = (
        (-1j * cubic_mirror_coefficient(params), Q),
        (-0.5j * zeta_fourth(params), shear),
        (1j * math.pi * k ** 4 * eta ** 2 * N, quadratic),
    )
    return Propagator(factors, Mode.MIRROR, (dim,))


# ----------------------------------------------------------------------------
# single-period terms of the cubic protocol


def magnus_terms_single_period(params: ProtocolParams, dims: Sequence[int] = (6, 12)) -> list[MagnusTerm]:
    """Second- and third-order generators of the first period, split by sub-term.

    Labels: ``m2c`` (cavity), ``m2I`` (interaction), ``m2_scalar``,
    ``m3m`` (mirror, ηQ_m) and ``m3I`` (interaction); prefactors πk² and
    (π/3)k³η are included.
    """
    _require(params, 2, "magnus_terms_single_period")
    k, eta = params.k, params.eta
    L = CompositeLadder(dims, margin=4)
    a, ad, nc = L.a, L.ad, L.nc
    m2c = -2 * (nc @ nc) + eta ** 2 / 3.0 * (L.Xc @ L.Xc - 6 * nc)
    m2I = eta * (L.Pc @ (L.b @ L.b + L.bd @ L.bd))
    Q = L.qm()
    m3m = eta * Q
    m3I = (
        (14j * (ad @ nc - nc @ a) - (36.0 / 5.0 * eta ** 2 + 4) * L.Pc) @ L.Xm
        + (3 * L.Xc + 6j * eta * (a @ a - ad @ ad)) @ L.Pm
        - 0.75 * (L.Pc @ Q)
    )
    p2 = math.pi * k ** 2
    p3 = math.pi / 3.0 * k ** 3 * eta
    return [
        MagnusTerm(2, L.operator(p2 * m2c), 1, "m2c"),
        MagnusTerm(2, L.operator(p2 * m2I), 1, "m2I"),
        MagnusTerm(2, L.operator(-p2 * 29.0 / 60.0 * eta ** 4 * L.I), 1, "m2_scalar"),
        MagnusTerm(3, L.operator(p3 * m3m), 1, "m3m"),
        MagnusTerm(3, L.operator(p3 * m3I), 1, "m3I"),
    ]


# ----------------------------------------------------------------------------
# phase cancellation


def split_composite(op: ModeOperator) -> dict:
    """Orthogonal split into scalar, cavity-only, mirror-only and cross parts.

    Uses partial traces: with O on C^dc ⊗ C^dm, the cavity part is
    Tr_m(O)/dm minus the scalar part, and similarly for the mirror.
    """
    dc, dm = op.dims
    O = op.toarray().reshape(dc, dm, dc, dm)
    scalar = np.einsum("cmcm->", O) / (dc * dm)
    cav = np.einsum("cmdm->cd", O) / dm - scalar * np.eye(dc)
    mir = np.einsum("cmcn->mn", O) / dc - scalar * np.eye(dm)
    cross = (O - scalar * np.einsum("cd,mn->cmdn", np.eye(dc), np.eye(dm))
             - np.einsum("cd,mn->cmdn", cav, np.eye(dm))
             - np.einsum("cd,mn->cmdn", np.eye(dc), mir))
    return {"scalar": scalar, "cavity": cav, "mirror": mir, "cross": cross}


def _max_abs(x) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


@dataclass(frozen=True)
class TermCancellation:
    label: str
    cross_norm: float
    cavity_offdiag_norm: float
    cavity_diag_norm: float
    mirror_norm: float
    reference_norm: float
    tolerance: float

    @property
    def passed(self) -> bool:
        limit = self.tolerance * self.reference_norm
        return self.cross_norm <= limit and self.cavity_offdiag_norm <= limit


@dataclass(frozen=True)
class CancellationReport:
    terms: tuple

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.terms)

    @property
    def flagged(self) -> list[str]:
        return [t.label for t in self.terms if not t.passed]

    def __getitem__(self, label) -> TermCancellation:
        for t in self.terms:
            if t.label == label:
                return t
        raise KeyError(label)


def conjugate_by_rotation(op: ModeOperator, phase: float) -> ModeOperator:
    """W† O W with W = exp(−i n_c φ) acting on the cavity factor."""
    dc, dm = op.dims
    coo = op.elements.tocoo()
    c_row, c_col = coo.row // dm, coo.col // dm
    data = coo.data * np.exp(1j * phase * (c_row - c_col))
    return ModeOperator(sp.csr_matrix((data, (coo.row, coo.col)), shape=coo.shape), Mode.COMPOSITE, op.dims)


def rotated_sum(op: ModeOperator, phases: Iterable[float]) -> ModeOperator:
    """Σ_s W_s† O W_s over the given cavity rotation phases."""
    dc, dm = op.dims
    coo = op.elements.tocoo()
    dn = (coo.row // dm - coo.col // dm).astype(float)
    weights = np.exp(1j * np.outer(np.asarray(list(phases)), dn)).sum(axis=0)
    mat = sp.csr_matrix((coo.data * weights, (coo.row, coo.col)), shape=coo.shape)
    return ModeOperator(mat, Mode.COMPOSITE, op.dims)


def cancellation_check(schedule: PhaseSchedule, terms: Sequence[MagnusTerm], tolerance: float = 1e-8,
                       effective: bool = True) -> CancellationReport:
    """Check that the schedule removes the cavity-dependent parts of each term.

    The summed operator Σ_s W_s† M W_s is split into cross, cavity and mirror
    pieces (max-abs norms). Residual cross and cavity off-diagonal parts must
    stay below ``tolerance`` times a reference, the larger of the surviving
    mirror part and the single-period term itself.
    With ``effective`` the per-period correction ramp is removed from the
    phases first, since that ramp only compensates the drive-induced cavity
    rotation.
    """
    if schedule.kind != "step":
        raise ProtocolError("cancellation_check needs a step schedule")
    phases = schedule.effective_phases() if effective else np.asarray(schedule.phases)
    out = []
    for term in terms:
        total = rotated_sum(term.operator, phases)
        parts = split_composite(total)
        cav = parts["cavity"]
        mirror_norm = _max_abs(parts["mirror"])
        ref = max(mirror_norm, _max_abs(term.operator.elements.data))
        out.append(TermCancellation(
            term.label or f"M{term.order}",
            _max_abs(parts["cross"]),
            _max_abs(cav - np.diag(np.diag(cav))),
            _max_abs(np.diag(cav)),
            mirror_norm,
            ref,
            tolerance,
        ))
    return CancellationReport(tuple(out))


# ----------------------------------------------------------------------------
# Magnus generators by quadrature


def _integration_matrix(nodes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes, weights, and the matrix mapping samples of g to ∫_{-1}^{x_q} g."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    V = np.polynomial.legendre.legvander(x, nodes - 1)
    C = np.linalg.inv(V)  # Legendre coefficients of each Lagrange basis polynomial
    S = np.zeros((nodes, nodes))
    for kdeg in range(nodes):
        coeffs = np.zeros(nodes + 1)
        coeffs[kdeg] = 1.0
        integ = np.polynomial.legendre.legint(coeffs, lbnd=-1.0)
        S += np.outer(np.polynomial.legendre.legval(x, integ), C[kdeg])
    return x, w, S


@dataclass
class _Quadrature:
    t0: float
    t1: float
    panels: int
    nodes: int
    breakpoints: np.ndarray = field(default=None)

    def __post_init__(self):
        x, w, S = _integration_matrix(self.nodes)
        edges = np.linspace(self.t0, self.t1, self.panels + 1)
        self.half = 0.5 * np.diff(edges)
        self.t = ((edges[:-1] + edges[1:]) / 2)[:, None] + self.half[:, None] * x[None, :]
        self.w = self.half[:, None] * w[None, :]
        self.S = S
        self._w_ref = w

    def cumulative(self, g: np.ndarray) -> np.ndarray:
        """Running integral ∫_{t0}^{t} g at every node; g has trailing shape (panels, nodes)."""
        inner = np.einsum("qr,...pr->...pq", self.S, g) * self.half[:, None]
        totals = np.einsum("r,...pr->...p", self._w_ref, g) * self.half
        left = np.cumsum(totals, axis=-1) - totals
        return left[..., None] + inner

    def integrate(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("...pq,pq->...", g, self.w)


def interaction_terms(params: ProtocolParams, schedule: PhaseSchedule, L: CompositeLadder):
    """Operators O_i and coefficient functions g_i with H_I(t) = Σ g_i(t) O_i."""
    k = params.k
    f = envelope_function(params, schedule)

    def coefficients(t):
        shape = np.shape(t)
        tt = np.ravel(t)
        fv = np.asarray(f(tt)).reshape(shape)
        ep, em = np.exp(1j * t), np.exp(-1j * t)
        af = np.abs(fv) ** 2
        return -k * np.stack([ep, em, fv * ep, fv * em, np.conj(fv) * ep, np.conj(fv) * em, af * ep, af * em])

    ops = [L.nc @ L.bd, L.nc @ L.b, L.ad @ L.bd, L.ad @ L.b, L.a @ L.bd, L.a @ L.b, L.bd, L.b]
    return ops, coefficients


def _comm(A, B):
    return A @ B - B @ A


def magnus_quadrature(params: ProtocolParams, schedule: PhaseSchedule, dims: Sequence[int],
                      order: int = 3, t_span: tuple | None = None, panels_per_period: int = 16,
                      nodes: int = 16) -> list[MagnusTerm]:
    """Magnus generators M_1..M_order of H_I over ``t_span`` by nested quadrature.

    Coefficient integrals use composite Gauss-Legendre panels aligned with the
    periods, with spectral cumulative integration for the nested integrals.
    Operators are assembled on an enlarged space and cropped, so the matrix
    elements on ``dims`` are exact up to the quadrature error.
    """
    if not 1 <= order <= 3:
        raise ValueError("order must be 1, 2 or 3")
    t0, t1 = t_span if t_span is not None else (0.0, params.duration)
    n_periods = max(1, int(round((t1 - t0) / PERIOD)))
    quad = _Quadrature(t0, t1, panels_per_period * n_periods, nodes)
    L = CompositeLadder(dims, margin=3)
    ops, coefficients = interaction_terms(params, schedule, L)
    g = coefficients(quad.t)  # (8, panels, nodes)
    n = len(ops)
    period_label = 0 if t_span is None else int(round(t0 / PERIOD)) + 1

    terms = []
    c1 = quad.integrate(g)
    M1 = sum(c1[i] * ops[i] for i in range(n))
    terms.append(MagnusTerm(1, L.operator(M1), period_label, "M1"))
    if order >= 2:
        G = quad.cumulative(g)
        C2 = np.einsum("ipq,jpq,pq->ij", g, G, quad.w)
        pairs = {}
        M2 = sp.csr_matrix(M1.shape, dtype=complex)
        for i, j in itertools.combinations(range(n), 2):
            pairs[(i, j)] = _comm(ops[i], ops[j])
            M2 = M2 + (C2[i, j] - C2[j, i]) * pairs[(i, j)]
        M2 = -0.5j * M2
        terms.append(MagnusTerm(2, L.operator(M2), period_label, "M2"))
    if order >= 3:
        K = quad.cumulative(g[:, None] * G[None, :])  # K[j, l] = ∫ g_j G_l
        C3 = np.einsum("ipq,jlpq,pq->ijl", g, K, quad.w)
        E = C3 + np.transpose(C3, (2, 1, 0))
        M3 = sp.csr_matrix(M1.shape, dtype=complex)
        for i in range(n):
            inner = sp.csr_matrix(M1.shape, dtype=complex)
            for (j, l), comm_jl in pairs.items():
                coef = E[i, j, l] - E[i, l, j]
                if coef != 0:
                    inner = inner + coef * comm_jl
            M3 = M3 + _comm(ops[i], inner)
        M3 = -M3 / 6.0
        terms.append(MagnusTerm(3, L.operator(M3), period_label, "M3"))
    return terms
