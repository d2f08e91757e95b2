"""Phase-space and information measures for single-mode states.

Wigner functions are normalized to ∬W dq dp = 1. In the ``half`` convention
q = (b + b†)/√2, so the vacuum is W = e^{−q²−p²}/π. The ``paper``
convention uses X = √2 q and W_paper(X, P) = W_half(X/√2, P/√2)/2.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .errors import ConfigError, DimensionError, GridError
from .fockspace import Convention, Mode, QuantumState, _as_convention, exact_polynomial, expectation, number

DEFAULT_POINTS = 257
BOUNDARY_TOL = 1e-4
NORMALIZATION_TOL = 1e-3
REFINE_TOL = 5e-3


# ----------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class WignerGrid:
    """Wigner values on a rectangular grid; ``values[i, j]`` is W(q_i, p_j)."""

    q_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray
    convention: Convention = Convention.HALF
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        q = np.asarray(self.q_axis, dtype=float)
        p = np.asarray(self.p_axis, dtype=float)
        v = np.asarray(self.values)
        if np.iscomplexobj(v):
            if np.max(np.abs(v.imag), initial=0.0) > 1e-10:
                raise GridError("Wigner values carry an imaginary residue above 1e-10")
            v = v.real
        if v.shape != (q.size, p.size):
            raise DimensionError(f"values shape {v.shape} does not match axes ({q.size}, {p.size})")
        for axis in (q, p):
            if axis.size > 2 and np.ptp(np.diff(axis)) > 1e-9 * max(1.0, np.abs(axis).max()):
                raise DimensionError("Wigner grid axes must be uniform")
        object.__setattr__(self, "q_axis", q)
        object.__setattr__(self, "p_axis", p)
        object.__setattr__(self, "values", v.astype(float))
        object.__setattr__(self, "convention", _as_convention(self.convention))

    @property
    def dq(self) -> float:
        return float(self.q_axis[1] - self.q_axis[0]) if self.q_axis.size > 1 else 1.0

    @property
    def dp(self) -> float:
        return float(self.p_axis[1] - self.p_axis[0]) if self.p_axis.size > 1 else 1.0

    def normalization(self) -> float:
        return float(self.values.sum() * self.dq * self.dp)

    def negativity_volume(self) -> float:
        return float(0.5 * (np.abs(self.values).sum() * self.dq * self.dp - self.normalization()))

    def boundary_max(self) -> float:
        v = np.abs(self.values)
        return float(max(v[0].max(), v[-1].max(), v[:, 0].max(), v[:, -1].max()))

    def to_half(self) -> "WignerGrid":
        if self.convention is Convention.HALF:
            return self
        s = math.sqrt(2.0)
        return WignerGrid(self.q_axis / s, self.p_axis / s, 2.0 * self.values, Convention.HALF, self.metadata)

    def cut(self, p: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """(q, W(q, p)) along the row nearest to ``p``."""
        j = int(np.argmin(np.abs(self.p_axis - p)))
        return self.q_axis.copy(), self.values[:, j].copy()

    def to_csv(self, path) -> None:
        q, p = np.meshgrid(self.q_axis, self.p_axis, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "p", "W"])
            for row in zip(q.ravel(), p.ravel(), self.values.ravel()):
                w.writerow([f"{x:.17e}" for x in row])

    def header(self) -> dict:
        return {
            "convention": self.convention.value,
            "q_min": float(self.q_axis[0]), "q_max": float(self.q_axis[-1]), "n_q": int(self.q_axis.size),
            "p_min": float(self.p_axis[0]), "p_max": float(self.p_axis[-1]), "n_p": int(self.p_axis.size),
            "normalization": self.normalization(),
            "min": float(self.values.min()), "max": float(self.values.max()),
            "metadata": dict(self.metadata),
        }

    def to_json(self, path, csv_path=None) -> None:
        """JSON header next to a CSV payload of (q, p, W) triples."""
        csv_path = csv_path or str(path).rsplit(".", 1)[0] + ".csv"
        self.to_csv(csv_path)
        with open(path, "w") as fh:
            json.dump({**self.header(), "payload": str(csv_path).rsplit("/", 1)[-1]}, fh, indent=2, sort_keys=True)


# ----------------------------------------------------------------------------
# Wigner evaluation


def _single_mode_density(state) -> np.ndarray:
    if isinstance(state, QuantumState):
        if state.mode is Mode.COMPOSITE:
            raise DimensionError("Wigner function needs a single-mode state; take a partial trace first")
        return state.density_matrix()
    arr = np.asarray(state, dtype=complex)
    return np.outer(arr, arr.conj()) if arr.ndim == 1 else arr


def oscillator_functions(x: np.ndarray, dim: int) -> np.ndarray:
    """Hermite functions φ_0..φ_{dim−1} at ``x`` (shape len(x) × dim) by stable recursion."""
    x = np.asarray(x, dtype=float)
    out = np.empty((x.size, dim))
    out[:, 0] = math.pi ** -0.25 * np.exp(-0.5 * x ** 2)
    if dim > 1:
        out[:, 1] = math.sqrt(2.0) * x * out[:, 0]
    for n in range(1, dim - 1):
        out[:, n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[:, n] - math.sqrt(n / (n + 1)) * out[:, n - 1]
    return out


def _wigner_eigen(rho: np.ndarray, q: np.ndarray, p: np.ndarray, rank_tol: float = 1e-14) -> np.ndarray:
    """W(q, p) = (1/π) ∫ ⟨q+y|ρ|q−y⟩ e^{−2ipy} dy in the half convention.

    ρ is diagonalized and every eigenvector evaluated on a fine position grid
    containing all points q_i ± y_l. The y-integral is a trapezoid rule. It
    is spectrally accurate because the integrand is smooth and decays.
    """
    dim = rho.shape[0]
    lam, U = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = lam > rank_tol * max(lam.max(), 1e-300)
    lam, U = lam[keep], U[:, keep]
    reach = math.sqrt(2.0 * dim + 1.0) + 6.0  # all eigenfunctions negligible beyond this
    band = max(reach, float(np.abs(p).max(initial=0.0)) + 6.0)
    h = float(q[1] - q[0]) if q.size > 1 else 0.05
    refine = max(1, int(math.ceil(h / (math.pi / (2.5 * band)) / 2.0)))
    dy = h / (2 * refine)
    L = int(math.ceil(reach / dy))
    y = dy * np.arange(-L, L + 1)
    # fine grid x_j = q_0 + (j − L)·dy hosts every q_i ± y_l
    n_fine = 2 * refine * (q.size - 1) + 2 * L + 1
    x = q[0] + (np.arange(n_fine) - L) * dy
    psi = oscillator_functions(x, dim) @ U  # (n_fine, rank)
    centre = 2 * refine * np.arange(q.size) + L
    plus = centre[:, None] + np.arange(-L, L + 1)[None, :]
    minus = centre[:, None] - np.arange(-L, L + 1)[None, :]
    F = np.zeros((q.size, y.size), dtype=complex)
    for j in range(lam.size):
        F += lam[j] * psi[plus, j] * np.conj(psi[minus, j])
    E = np.exp(-2j * np.outer(y, p))
    W = (dy / math.pi) * (F @ E)
    return W.real


def _wigner_laguerre(rho: np.ndarray, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Σ ρ_mn W_mn with the closed Laguerre form of each Fock dyad (half convention).

    For m ≥ n: W_{|m><n|} = ((−1)^n/π) √(n!/m!) (2α*)^{m−n} e^{−2|α|²} L_n^{(m−n)}(4|α|²),
    where α = (q + ip)/√2.
    """
    Q, P = np.meshgrid(q, p, indexing="ij")
    alpha = (Q + 1j * P) / math.sqrt(2.0)
    r2 = np.abs(alpha) ** 2
    gauss = np.exp(-2.0 * r2) / math.pi
    dim = rho.shape[0]
    W = np.zeros(Q.shape)
    for m in range(dim):
        for n in range(m + 1):
            c = rho[m, n]
            if c == 0:
                continue
            d = m - n
            pref = (-1) ** n * math.exp(0.5 * (gammaln(n + 1) - gammaln(m + 1)))
            term = pref * (2.0 * np.conj(alpha)) ** d * gauss * eval_genlaguerre(n, d, 4.0 * r2)
            W += (c * term).real if d == 0 else 2.0 * (c * term).real
    return W


def default_extent(state, convention=Convention.HALF) -> float:
    rho = _single_mode_density(state)
    n_mean = float(np.real(np.sum(np.arange(rho.shape[0]) * np.diag(rho))))
    return 4.0 + 2.0 * math.sqrt(max(n_mean, 0.0))


def square_axis(extent: float, points: int = DEFAULT_POINTS) -> np.ndarray:
    return np.linspace(-extent, extent, points)


def fit_extent(state, points: int = DEFAULT_POINTS, tol: float = BOUNDARY_TOL,
               growth: float = 1.25, max_steps: int = 12) -> float:
    """Half-width (half convention) of a square grid whose edges stay below ``tol``.

    Starts from ±(4 + 2√⟨n⟩) and grows geometrically, evaluating W only on
    the four edges.
    """
    rho = _single_mode_density(state)
    ext = default_extent(rho)
    for _ in range(max_steps):
        axis = square_axis(ext, points)
        edge = max(np.abs(_wigner_eigen(rho, np.array([-ext, ext]), axis)).max(),
                   np.abs(_wigner_eigen(rho, axis, np.array([-ext, ext]))).max())
        if edge <= tol:
            return ext
        ext *= growth
    raise GridError(f"Wigner function still exceeds {tol:.0e} at |q|, |p| = {ext:.1f}")


def wigner(state, q_axis: Sequence[float] | None = None, p_axis: Sequence[float] | None = None,
           convention: Convention | str = Convention.HALF, method: str = "eigen",
           check: bool = True) -> WignerGrid:
    """Wigner function of a single-mode state on a (q, p) grid.

    ``method`` is ``eigen`` (eigenfunction integral, the production path) or
    ``laguerre`` (Fock-dyad closed form, the cross-check). With ``check``, a
    grid whose boundary exceeds 1e-4 or whose quadrature normalization is off
    by more than 1e-3 raises GridError. Missing axes are replaced by a
    257-point square grown from ±(4 + 2√⟨n⟩) until its edges fall below 1e-4.
    """
    conv = _as_convention(convention)
    rho = _single_mode_density(state)
    if q_axis is None or p_axis is None:
        ext = fit_extent(rho) * (math.sqrt(2.0) if conv is Convention.PAPER else 1.0)
        q_axis = square_axis(ext) if q_axis is None else q_axis
        p_axis = square_axis(ext) if p_axis is None else p_axis
    q = np.asarray(q_axis, dtype=float)
    p = np.asarray(p_axis, dtype=float)
    scale = math.sqrt(2.0) if conv is Convention.PAPER else 1.0
    qh, ph = q / scale, p / scale
    if method == "eigen":
        W = _wigner_eigen(rho, qh, ph)
    elif method == "laguerre":
        W = _wigner_laguerre(rho, qh, ph)
    else:
        raise ConfigError(f"unknown Wigner method {method!r}")
    if conv is Convention.PAPER:
        W = W / 2.0
    grid = WignerGrid(q, p, W, conv, {"method": method})
    if check and q.size > 2 and p.size > 2:
        edge = grid.boundary_max()
        if edge > BOUNDARY_TOL:
            raise GridError(f"Wigner grid too small: boundary |W| = {edge:.2e} > {BOUNDARY_TOL:.0e}; enlarge the grid")
        norm = grid.normalization()
        if abs(norm - 1.0) > NORMALIZATION_TOL:
            raise GridError(f"Wigner grid normalization {norm:.6f} differs from 1; refine the grid")
    return grid


def wigner_cut(state, q_axis: Sequence[float], p: float = 0.0,
               convention: Convention | str = Convention.HALF) -> np.ndarray:
    """W(q, p) along a single momentum value."""
    return wigner(state, q_axis, [p], convention, check=False).values[:, 0]


# ----------------------------------------------------------------------------
# non-classicality


@dataclass(frozen=True)
class NonClassicality:
    value: float
    mean_n: float
    method: str = "grid"

    @property
    def ratio(self) -> float:
        return self.value / self.mean_n if self.mean_n > 0 else float("nan")

    def within_bounds(self, slack: float = 1e-3) -> bool:
        return -slack <= self.value <= self.mean_n * (1 + slack) + slack


def _laplacian_functional(grid: WignerGrid) -> float:
    """−(π/2) ∬ W (∇² + 2) W on a half-convention grid (interior points only)."""
    g = grid.to_half()
    W = g.values
    hq, hp = g.dq, g.dp
    core = W[1:-1, 1:-1]
    lap = ((W[2:, 1:-1] - 2 * core + W[:-2, 1:-1]) / hq ** 2
           + (W[1:-1, 2:] - 2 * core + W[1:-1, :-2]) / hp ** 2)
    return float(-0.5 * math.pi * np.sum(core * (lap + 2.0 * core)) * hq * hp)


def _grid_mean_n(grid: WignerGrid) -> float:
    g = grid.to_half()
    Q, P = np.meshgrid(g.q_axis, g.p_axis, indexing="ij")
    return float(np.sum(0.5 * (Q ** 2 + P ** 2) * g.values) * g.dq * g.dp - 0.5)


def nonclassicality_fock(state) -> float:
    """Closed Fock-basis value of the same functional: Tr(ρ²n) − Tr(ρ a ρ a†)."""
    rho = _single_mode_density(state)
    dim = rho.shape[0]
    n = np.arange(dim)
    rho2 = rho @ rho
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    return float(np.real(np.sum(np.diag(rho2) * n) - np.trace(rho @ a @ rho @ a.conj().T)))


def nonclassicality(source, method: str = "grid", points: int = DEFAULT_POINTS,
                    extent: float | None = None, max_refinements: int = 4) -> NonClassicality:
    """Non-classicality I = −2π ∬ W (∇² + 1) W dX dP over the unscaled X = b + b†, P phase space.

    The normalization gives I = 0 for the vacuum and I = 1 for the first Fock
    state, and I lies in [0, ⟨n⟩] for pure states. ``source`` is a state or a
    WignerGrid. For states and ``method='grid'``, the grid is refined by
    factors of 1.5 until I changes by less than 0.5%. ``method='fock'``
    evaluates the identical integral in closed form from the density matrix.
    """
    if isinstance(source, WignerGrid):
        return NonClassicality(_laplacian_functional(source), _grid_mean_n(source), "grid")
    rho = _single_mode_density(source)
    mean_n = float(np.real(np.sum(np.arange(rho.shape[0]) * np.diag(rho))))
    if method == "fock":
        return NonClassicality(nonclassicality_fock(rho), mean_n, "fock")
    if method != "grid":
        raise ConfigError(f"unknown non-classicality method {method!r}")
    ext = extent if extent is not None else fit_extent(rho)
    previous = None
    n_pts = points
    for _ in range(max_refinements + 1):
        axis = square_axis(ext, n_pts)
        value = _laplacian_functional(wigner(rho, axis, axis, Convention.HALF))
        if previous is not None:
            scale = max(abs(value), 1e-2 * max(mean_n, 1.0))
            if abs(value - previous) <= REFINE_TOL * scale:
                # the five-point stencil error is O(h²): Richardson on the last pair
                r2 = ((prev_pts - 1) / (n_pts - 1)) ** -2
                return NonClassicality((r2 * value - previous) / (r2 - 1.0), mean_n, "grid")
        previous, prev_pts = value, n_pts
        n_pts = int(1.5 * (n_pts - 1)) + 1
    raise GridError("non-classicality did not converge under grid refinement")


# ----------------------------------------------------------------------------
# fidelity and quadratures


def _as_pair(state):
    if isinstance(state, QuantumState):
        return (state.data if state.is_ket else None), state.density_matrix(), state.dim
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return arr, np.outer(arr, arr.conj()), arr.size
    return None, arr, arr.shape[0]


def _check_positive(rho, tol=1e-8):
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if lam.min() < -tol * max(1.0, lam.max()):
        raise ConfigError(f"density matrix has eigenvalue {lam.min():.2e} below tolerance")
    return lam


def _sqrtm_psd(rho):
    lam, U = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    lam = np.clip(lam, 0.0 if lam.min() >= -1e-10 else lam.min(), None)
    return (U * np.sqrt(np.clip(lam, 0, None))) @ U.conj().T


def fidelity(stateA, stateB, method: str = "auto") -> float:
    """Uhlmann fidelity (Tr√(√ρ_A ρ_B √ρ_A))².

    With ``auto``, pure inputs take the overlap shortcut |⟨ψ|φ⟩|² or ⟨ψ|ρ|ψ⟩.
    ``uhlmann`` forces the general formula.
    """
    ka, ra, da = _as_pair(stateA)
    kb, rb, db = _as_pair(stateB)
    if da != db:
        raise DimensionError(f"fidelity between dimension {da} and {db}")
    if method == "auto":
        if ka is not None and kb is not None:
            return float(min(1.0, abs(np.vdot(ka, kb)) ** 2))
        if ka is not None:
            _check_positive(rb)
            return float(np.clip(np.real(np.vdot(ka, rb @ ka)), 0.0, 1.0))
        if kb is not None:
            _check_positive(ra)
            return float(np.clip(np.real(np.vdot(kb, ra @ kb)), 0.0, 1.0))
    elif method != "uhlmann":
        raise ConfigError(f"unknown fidelity method {method!r}")
    _check_positive(ra)
    _check_positive(rb)
    sa = _sqrtm_psd(ra)
    mu = np.linalg.eigvalsh(0.5 * ((sa @ rb @ sa) + (sa @ rb @ sa).conj().T))
    return float(np.clip(np.sum(np.sqrt(np.clip(mu, 0, None))) ** 2, 0.0, 1.0))


class QuadratureStats(NamedTuple):
    dx2: float
    dp2: float
    mean_x: float
    mean_p: float
    mean_n: float


def quadrature_stats(state: QuantumState, convention: Convention | str = Convention.HALF,
                     axes: str = "lab") -> QuadratureStats:
    """Quadrature variances and means, plus ⟨n⟩.

    ``axes='lab'`` reports the X and P quadratures. ``axes='principal'``
    reports the extreme variances of the covariance matrix (the squeezed and
    anti-squeezed quadratures) with the means rotated onto those axes.
    Second moments use exact (edge-free) polynomial matrices.
    """
    if state.mode is Mode.COMPOSITE:
        raise DimensionError("quadrature_stats needs a single-mode state")
    conv = _as_convention(convention)
    d = state.dim
    X = exact_polynomial(d, lambda b: b + b.conj().T, 1)
    P = exact_polynomial(d, lambda b: 1j * (b.conj().T - b), 1)
    X2 = exact_polynomial(d, lambda b: (b + b.conj().T) @ (b + b.conj().T), 2)
    P2 = exact_polynomial(d, lambda b: -((b.conj().T - b) @ (b.conj().T - b)), 2)
    XP = exact_polynomial(d, lambda b: 1j * ((b + b.conj().T) @ (b.conj().T - b)), 2)
    mx, mp = expectation(state, X).real, expectation(state, P).real
    sym = expectation(state, XP)
    cxp = 0.5 * (sym + np.conj(sym)).real - mx * mp
    vx = expectation(state, X2).real - mx ** 2
    vp = expectation(state, P2).real - mp ** 2
    n_mean = expectation(state, number(d)).real
    if axes == "principal":
        cov = np.array([[vx, cxp], [cxp, vp]])
        lam, vec = np.linalg.eigh(cov)
        means = vec.T @ np.array([mx, mp])
        vx, vp, mx, mp = lam[0], lam[1], means[0], means[1]
    elif axes != "lab":
        raise ConfigError("axes must be 'lab' or 'principal'")
    if conv is Convention.HALF:
        root = math.sqrt(0.5)
        return QuadratureStats(0.5 * vx, 0.5 * vp, root * mx, root * mp, n_mean)
    return QuadratureStats(vx, vp, mx, mp, n_mean)
