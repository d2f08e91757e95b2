"""Truncated Fock-space operators and states.

Composite cavity-mirror objects use a fixed ordering: the mirror index varies
fastest, so the flattened index of ``|c, m>`` is ``c * mirror_dim + m`` and
composite operators are ``kron(cavity_part, mirror_part)``.

Operators are stored as sparse CSR matrices, density matrices as dense arrays.
Both wrappers are frozen dataclasses and are never mutated after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, TruncationError

KET_NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
EIGENVALUE_TOL = 1e-10
STATE_SCHEMA = "optoprep.state/1"


class Mode(str, Enum):
    MIRROR = "mirror"
    CAVITY = "cavity"
    COMPOSITE = "composite"


class Convention(str, Enum):
    """Quadrature scaling: ``paper`` has X = b + b†, ``half`` divides by √2."""

    PAPER = "paper"
    HALF = "half"


def _as_mode(mode) -> Mode:
    return mode if isinstance(mode, Mode) else Mode(str(mode))


def _as_convention(convention) -> Convention:
    if isinstance(convention, Convention):
        return convention
    aliases = {"paper_X": Convention.PAPER, "paper": Convention.PAPER, "half": Convention.HALF}
    try:
        return aliases[str(convention)]
    except KeyError:
        raise DimensionError(f"unknown quadrature convention {convention!r}") from None


@dataclass(frozen=True)
class CompositeIndex:
    """Index bookkeeping for the cavity ⊗ mirror product space."""

    cavity_dim: int
    mirror_dim: int

    def __post_init__(self):
        if self.cavity_dim < 1 or self.mirror_dim < 1:
            raise DimensionError("composite dimensions must be positive")

    @property
    def size(self) -> int:
        return self.cavity_dim * self.mirror_dim

    def flat(self, cavity_index, mirror_index):
        return np.asarray(cavity_index) * self.mirror_dim + np.asarray(mirror_index)

    def split(self, flat_index):
        return np.divmod(np.asarray(flat_index), self.mirror_dim)


@dataclass(frozen=True, eq=False)
class ModeOperator:
    """Sparse operator on a truncated single-mode or composite Fock space.

    ``dims`` is ``(d,)`` for a single mode and ``(cavity_dim, mirror_dim)``
    for the composite space.
    """

    elements: sp.csr_matrix
    mode: Mode = Mode.MIRROR
    dims: tuple = ()

    def __post_init__(self):
        mat = sp.csr_matrix(self.elements, dtype=complex)
        object.__setattr__(self, "elements", mat)
        object.__setattr__(self, "mode", _as_mode(self.mode))
        dims = tuple(int(d) for d in self.dims) if self.dims else (mat.shape[0],)
        object.__setattr__(self, "dims", dims)
        expected = int(np.prod(dims))
        if mat.shape != (expected, expected):
            raise DimensionError(f"matrix shape {mat.shape} does not match dims {dims}")
        if (self.mode is Mode.COMPOSITE) != (len(dims) == 2):
            raise DimensionError("composite operators need two dims, single modes one")

    @property
    def dim(self) -> int:
        return self.elements.shape[0]

    def dag(self) -> "ModeOperator":
        return self._like(self.elements.conj().T)

    def toarray(self) -> np.ndarray:
        return self.elements.toarray()

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        diff = self.elements - self.elements.conj().T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= tol

    def _like(self, matrix) -> "ModeOperator":
        return ModeOperator(matrix, self.mode, self.dims)

    def _check_compatible(self, other: "ModeOperator"):
        if self.dims != other.dims or self.mode != other.mode:
            raise DimensionError(
                f"incompatible operators: {self.mode.value}{self.dims} vs {other.mode.value}{other.dims}"
            )

    def __add__(self, other):
        if isinstance(other, ModeOperator):
            self._check_compatible(other)
            return self._like(self.elements + other.elements)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, ModeOperator):
            self._check_compatible(other)
            return self._like(self.elements - other.elements)
        return NotImplemented

    def __neg__(self):
        return self._like(-self.elements)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return self._like(self.elements * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._like(self.elements / scalar)

    def __matmul__(self, other):
        if isinstance(other, ModeOperator):
            self._check_compatible(other)
            return self._like(self.elements @ other.elements)
        return self.elements @ np.asarray(other)


def commutator(A: ModeOperator, B: ModeOperator) -> ModeOperator:
    return A @ B - B @ A


def _check_dim(dim: int, minimum: int = 2):
    if int(dim) != dim or dim < minimum:
        raise DimensionError(f"Fock dimension must be an integer >= {minimum}, got {dim}")


def ladder_matrix(dim: int) -> sp.csr_matrix:
    """Raw CSR annihilation matrix with ``<n-1|a|n> = sqrt(n)``."""
    return sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, shape=(dim, dim), format="csr", dtype=complex)


def crop(matrix, dim: int) -> sp.csr_matrix:
    """Leading ``dim x dim`` block of a single-mode matrix."""
    return sp.csr_matrix(matrix)[:dim, :dim]


def exact_polynomial(dim: int, builder: Callable[[sp.csr_matrix], sp.csr_matrix], degree: int) -> sp.csr_matrix:
    """Evaluate a ladder polynomial without truncation-edge artifacts.

    ``builder`` receives the annihilation matrix and returns a polynomial in
    it of total degree at most ``degree``; evaluating on a space enlarged by
    ``degree`` levels and cropping reproduces the untruncated matrix
    elements exactly.
    """
    big = builder(ladder_matrix(dim + degree))
    return crop(big, dim)


def annihilation(dim: int, mode: Mode | str = Mode.MIRROR) -> ModeOperator:
    _check_dim(dim)
    return ModeOperator(ladder_matrix(dim), mode, (dim,))


def creation(dim: int, mode: Mode | str = Mode.MIRROR) -> ModeOperator:
    return annihilation(dim, mode).dag()


def number(dim: int, mode: Mode | str = Mode.MIRROR) -> ModeOperator:
    _check_dim(dim)
    return ModeOperator(sp.diags(np.arange(dim, dtype=complex), 0, format="csr"), mode, (dim,))


def identity(dim: int, mode: Mode | str = Mode.MIRROR) -> ModeOperator:
    _check_dim(dim, 1)
    return ModeOperator(sp.identity(dim, dtype=complex, format="csr"), mode, (dim,))


def quadratures(dim: int, convention: Convention | str = Convention.PAPER,
                mode: Mode | str = Mode.MIRROR) -> tuple[ModeOperator, ModeOperator]:
    """Return ``(X, P)`` with X = b + b†, P = i(b† − b), scaled by 1/√2 for ``half``."""
    _check_dim(dim)
    scale = 1.0 if _as_convention(convention) is Convention.PAPER else 1.0 / np.sqrt(2.0)
    b = ladder_matrix(dim)
    bd = b.conj().T
    X = ModeOperator(scale * (b + bd), mode, (dim,))
    P = ModeOperator(scale * 1j * (bd - b), mode, (dim,))
    return X, P


def tensor(opA: ModeOperator, opB: ModeOperator) -> ModeOperator:
    """Composite operator, always ordered cavity ⊗ mirror.

    Arguments tagged (mirror, cavity) are swapped into the fixed ordering;
    otherwise the first factor is taken as the cavity (slow) index.
    """
    if opA.mode is Mode.COMPOSITE or opB.mode is Mode.COMPOSITE:
        raise DimensionError("tensor expects two single-mode operators")
    if opA.mode is Mode.MIRROR and opB.mode is Mode.CAVITY:
        opA, opB = opB, opA
    mat = sp.kron(opA.elements, opB.elements, format="csr")
    return ModeOperator(mat, Mode.COMPOSITE, (opA.dim, opB.dim))


def embed(op: ModeOperator, dims: Sequence[int]) -> ModeOperator:
    """Lift a cavity or mirror operator onto the composite space ``dims``."""
    dc, dm = (int(d) for d in dims)
    if op.mode is Mode.CAVITY:
        if op.dim != dc:
            raise DimensionError(f"cavity operator has dim {op.dim}, composite expects {dc}")
        return tensor(op, identity(dm, Mode.MIRROR))
    if op.mode is Mode.MIRROR:
        if op.dim != dm:
            raise DimensionError(f"mirror operator has dim {op.dim}, composite expects {dm}")
        return tensor(identity(dc, Mode.CAVITY), op)
    raise DimensionError("operator is already composite")


# ----------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Pure ket or density matrix over one mode or the cavity ⊗ mirror space.

    Construction validates the invariants: unit norm for kets; Hermiticity,
    unit trace and positivity for density matrices.
    """

    kind: str
    data: np.ndarray
    dims: tuple = ()
    mode: Mode = Mode.MIRROR
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("ket", "density"):
            raise DimensionError(f"unknown state kind {self.kind!r}")
        arr = np.array(self.data, dtype=complex)
        dims = tuple(int(d) for d in self.dims) if self.dims else (arr.shape[0],)
        mode = _as_mode(self.mode)
        if len(dims) == 2:
            mode = Mode.COMPOSITE
        elif mode is Mode.COMPOSITE:
            raise DimensionError("composite state needs (cavity_dim, mirror_dim)")
        total = int(np.prod(dims))
        if self.kind == "ket":
            arr = arr.reshape(-1)
            if arr.shape != (total,):
                raise DimensionError(f"ket length {arr.size} does not match dims {dims}")
            norm = np.vdot(arr, arr).real
            if abs(norm - 1.0) > KET_NORM_TOL:
                raise DimensionError(f"ket not normalized: <psi|psi> = {norm!r}")
        else:
            if arr.shape != (total, total):
                raise DimensionError(f"density shape {arr.shape} does not match dims {dims}")
            herm = np.max(np.abs(arr - arr.conj().T)) if total else 0.0
            if herm > HERMITIAN_TOL:
                raise DimensionError(f"density matrix not Hermitian (max deviation {herm:.3e})")
            tr = np.trace(arr).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise DimensionError(f"density matrix trace {tr!r} differs from 1")
            lam_min = np.linalg.eigvalsh(arr).min()
            if lam_min < -EIGENVALUE_TOL:
                raise DimensionError(f"density matrix has negative eigenvalue {lam_min:.3e}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "metadata", dict(self.metadata))

    # constructors ----------------------------------------------------------
    @classmethod
    def from_ket(cls, vector, dims=(), mode=Mode.MIRROR, normalize=False, metadata=None):
        vec = np.asarray(vector, dtype=complex).reshape(-1)
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls("ket", vec, tuple(dims), mode, metadata or {})

    @classmethod
    def from_density(cls, matrix, dims=(), mode=Mode.MIRROR, clean=False, metadata=None):
        """Wrap a density matrix; ``clean`` symmetrizes and renormalizes first."""
        rho = np.asarray(matrix, dtype=complex)
        if clean:
            rho = 0.5 * (rho + rho.conj().T)
            rho = rho / np.trace(rho).real
        return cls("density", rho, tuple(dims), mode, metadata or {})

    # basic properties ------------------------------------------------------
    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def is_ket(self) -> bool:
        return self.kind == "ket"

    def density_matrix(self) -> np.ndarray:
        if self.is_ket:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)

    def to_density(self) -> "QuantumState":
        if not self.is_ket:
            return self
        return QuantumState("density", self.density_matrix(), self.dims, self.mode, self.metadata)

    def purity(self) -> float:
        if self.is_ket:
            return 1.0
        return float(np.real(np.vdot(self.data, self.data)))

    def reduced(self, keep: Mode | str) -> "QuantumState":
        """Partial trace of a composite state, keeping ``cavity`` or ``mirror``."""
        keep = _as_mode(keep)
        if self.mode is not Mode.COMPOSITE:
            raise DimensionError("partial trace needs a composite state")
        dc, dm = self.dims
        if self.is_ket:
            psi = self.data.reshape(dc, dm)
            if keep is Mode.MIRROR:
                rho = psi.T @ psi.conj()
            else:
                rho = psi @ psi.conj().T
        else:
            r = self.data.reshape(dc, dm, dc, dm)
            rho = np.einsum("cmcn->mn", r) if keep is Mode.MIRROR else np.einsum("cmdm->cd", r)
        d = dm if keep is Mode.MIRROR else dc
        return QuantumState.from_density(rho, (d,), keep, clean=True, metadata=self.metadata)

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": STATE_SCHEMA,
            "kind": self.kind,
            "dims": list(self.dims),
            "mode": self.mode.value,
            "real": np.real(self.data).tolist(),
            "imag": np.imag(self.data).tolist(),
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload: Mapping) -> "QuantumState":
        if payload.get("schema", STATE_SCHEMA) != STATE_SCHEMA:
            raise DimensionError(f"unsupported state schema {payload.get('schema')!r}")
        data = np.asarray(payload["real"], dtype=float) + 1j * np.asarray(payload["imag"], dtype=float)
        return cls(payload["kind"], data, tuple(payload["dims"]), payload.get("mode", "mirror"),
                   payload.get("metadata", {}))

    @classmethod
    def from_json(cls, text: str) -> "QuantumState":
        return cls.from_dict(json.loads(text))


def fock_state(dim: int, n: int, mode: Mode | str = Mode.MIRROR) -> QuantumState:
    _check_dim(dim, 1)
    if not 0 <= n < dim:
        raise DimensionError(f"Fock level {n} outside truncation {dim}")
    vec = np.zeros(dim, dtype=complex)
    vec[n] = 1.0
    return QuantumState.from_ket(vec, (dim,), mode)


def vacuum(dim: int, mode: Mode | str = Mode.MIRROR) -> QuantumState:
    return fock_state(dim, 0, mode)


def coherent_state(dim: int, alpha: complex, mode: Mode | str = Mode.MIRROR) -> QuantumState:
    """Poisson amplitudes truncated at ``dim`` and renormalized.

    The discarded probability is recorded as ``metadata['tail_mass']``.
    """
    _check_dim(dim, 1)
    n = np.arange(dim)
    from scipy.special import gammaln

    with np.errstate(divide="ignore"):
        log_amp = n * np.log(abs(alpha)) if alpha != 0 else np.where(n == 0, 0.0, -np.inf)
    log_amp = log_amp - 0.5 * gammaln(n + 1) - 0.5 * abs(alpha) ** 2
    vec = np.exp(log_amp) * np.exp(1j * np.angle(alpha) * n)
    kept = float(np.vdot(vec, vec).real)
    meta = {"alpha": [float(np.real(alpha)), float(np.imag(alpha))], "tail_mass": max(0.0, 1.0 - kept)}
    return QuantumState.from_ket(vec, (dim,), mode, normalize=True, metadata=meta)


def thermal_state(dim: int, nbar: float, mode: Mode | str = Mode.MIRROR,
                  tail_tol: float = 1e-8) -> QuantumState:
    """Diagonal Bose-Einstein state ``p_n ∝ (nbar/(1+nbar))^n``.

    Raises TruncationError if the probability beyond ``dim`` exceeds ``tail_tol``.
    """
    _check_dim(dim, 1)
    if nbar < 0:
        raise DimensionError("thermal occupation must be non-negative")
    x = nbar / (1.0 + nbar)
    tail = x ** dim
    if tail >= tail_tol:
        raise TruncationError(f"thermal tail mass {tail:.2e} beyond dim {dim} exceeds {tail_tol:.0e}")
    p = (1.0 - x) * x ** np.arange(dim)
    p /= p.sum()
    return QuantumState.from_density(np.diag(p).astype(complex), (dim,), mode,
                                     metadata={"nbar": float(nbar), "tail_mass": float(tail)})


def product_state(cavity: QuantumState, mirror: QuantumState) -> QuantumState:
    """Composite cavity ⊗ mirror state; ket if both factors are kets."""
    dims = (cavity.dim, mirror.dim)
    if cavity.is_ket and mirror.is_ket:
        return QuantumState.from_ket(np.kron(cavity.data, mirror.data), dims, Mode.COMPOSITE)
    rho = np.kron(cavity.density_matrix(), mirror.density_matrix())
    return QuantumState.from_density(rho, dims, Mode.COMPOSITE, clean=True)


# ----------------------------------------------------------------------------
# expectation values


def _matrix(op) -> sp.spmatrix | np.ndarray:
    if isinstance(op, ModeOperator):
        return op.elements
    return op


def expectation(state: QuantumState, op) -> complex:
    """⟨ψ|O|ψ⟩ for kets, Tr(ρO) for density matrices."""
    O = _matrix(op)
    if O.shape[0] != state.dim:
        raise DimensionError(f"operator dim {O.shape[0]} does not match state dim {state.dim}")
    if state.is_ket:
        return complex(np.vdot(state.data, O @ state.data))
    rho = state.data
    if sp.issparse(O):
        return complex(sp.csr_matrix(O).multiply(rho.T).sum())
    return complex(np.sum(O * rho.T))


def variance(state: QuantumState, op) -> float:
    O = _matrix(op)
    mean = expectation(state, O).real
    return float(expectation(state, O @ O).real - mean ** 2)


def top_level_population(state: QuantumState, fraction: float = 0.1) -> float:
    """Largest marginal population in the top ``fraction`` of Fock levels of any mode."""
    if state.mode is Mode.COMPOSITE:
        parts = [state.reduced(Mode.CAVITY), state.reduced(Mode.MIRROR)]
    else:
        parts = [state]
    worst = 0.0
    for part in parts:
        pops = np.abs(part.data) ** 2 if part.is_ket else np.real(np.diag(part.data))
        k = max(1, int(np.ceil(fraction * part.dim)))
        worst = max(worst, float(pops[-k:].sum()))
    return worst


# ----------------------------------------------------------------------------
# truncation convergence


@dataclass(frozen=True)
class TruncationReport:
    dims: tuple
    values: dict
    relative_change: dict
    converged: dict
    tail_mass: tuple
    threshold: float

    @property
    def all_converged(self) -> bool:
        return all(self.converged.values())

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "values": {k: list(map(float, v)) for k, v in self.values.items()},
            "relative_change": {k: float(v) for k, v in self.relative_change.items()},
            "converged": dict(self.converged),
            "tail_mass": list(self.tail_mass),
            "threshold": self.threshold,
            "all_converged": self.all_converged,
        }


def truncation_scan(builder: Callable[[int], QuantumState],
                    observables: Mapping[str, Callable[[QuantumState], float]],
                    dims: Sequence[int], threshold: float = 5e-3) -> TruncationReport:
    """Rebuild a state at increasing truncations and test observable stability.

    An observable is converged when its relative change between the two
    largest dimensions is below ``threshold``.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise DimensionError("truncation scan needs at least three dimensions")
    if any(b <= a for a, b in zip(dims, dims[1:])):
        raise DimensionError(f"truncation dims must increase strictly: {dims}")
    values = {name: [] for name in observables}
    tails = []
    for d in dims:
        state = builder(d)
        tails.append(top_level_population(state))
        for name, fn in observables.items():
            values[name].append(float(np.real(fn(state))))
    change, ok = {}, {}
    for name, vals in values.items():
        diff = abs(vals[-1] - vals[-2])
        scale = max(abs(vals[-1]), abs(vals[-2]))
        change[name] = 0.0 if diff <= 1e-12 else diff / max(scale, 1e-300)
        ok[name] = change[name] < threshold
    return TruncationReport(dims, values, change, ok, tuple(tails), threshold)
