"""Drive profiles: protocol parameters, phase schedules and the envelope f(t).

Units: ω_m = 1, so one mechanical period is T = 2π and the protocol window
is [0, N·T]. The cavity drive in the free-rotation frame is

    ξ̃(t) = η e^{iφ(t)} (e^{imt} + e^{-imt}),

with m = 1 for the squeezing protocol and m = 2 for the cubic one. The
envelope f(t) = ∫_0^t ξ̃ is the coherent cavity amplitude that the drive
would build up without the optomechanical coupling.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate

from .errors import ConfigError, ProtocolError

PERIOD = 2.0 * math.pi
WEAK_COUPLING_LIMIT = 0.05
MAX_CONTINUOUS_ORDER = 6


@dataclass(frozen=True)
class ProtocolParams:
    """Dimensionless protocol configuration.

    k is the rescaled coupling g/ω_m, eta the drive strength E/ω_m and N the
    number of mechanical periods. ``detuning`` is the drive sideband multiple:
    1 for squeezing, 2 for the cubic protocol.
    """

    k: float
    eta: float
    N: int
    detuning: int = 2

    def __post_init__(self):
        if not (self.k >= 0 and self.eta >= 0):
            raise ConfigError("k and eta must be non-negative")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if self.detuning not in (1, 2):
            raise ConfigError("detuning multiple must be 1 (squeezing) or 2 (cubic)")
        if self.k > WEAK_COUPLING_LIMIT:
            warnings.warn(f"k = {self.k} exceeds the weak-coupling range k << 1", stacklevel=3)

    @property
    def duration(self) -> float:
        return self.N * PERIOD

    def replace(self, **changes) -> "ProtocolParams":
        return ProtocolParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class PhaseSchedule:
    """Drive phase as a function of time.

    Step schedules hold one phase per period. Continuous schedules follow
    φ(t) = (2π/N + Δ)·t/T + Σ_l A_l sin(l t).
    """

    kind: str
    N: int
    phases: tuple = ()
    amplitudes: tuple = ()
    correction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("step", "continuous"):
            raise ProtocolError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if self.kind == "step" and len(self.phases) != self.N:
            raise ProtocolError(f"step schedule needs {self.N} phases, got {len(self.phases)}")

    @property
    def order(self) -> int:
        return len(self.amplitudes)

    @property
    def ramp_rate(self) -> float:
        """Slope of the linear part of a continuous schedule (rad per unit time)."""
        return (2.0 * math.pi / self.N + self.correction) / PERIOD

    def period_index(self, t):
        s = np.floor(np.asarray(t, dtype=float) / PERIOD).astype(int)
        return np.clip(s, 0, self.N - 1)

    def phase(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "step":
            return np.asarray(self.phases)[self.period_index(t)]
        out = self.ramp_rate * t
        for l, A in enumerate(self.amplitudes, start=1):
            out = out + A * np.sin(l * t)
        return out

    def phase_derivative(self, t, order: int = 1):
        """Time derivative of a continuous phase; zero for step schedules."""
        t = np.asarray(t, dtype=float)
        if self.kind == "step":
            return np.zeros_like(t)
        out = np.full_like(t, self.ramp_rate if order == 1 else 0.0)
        for l, A in enumerate(self.amplitudes, start=1):
            # d^n/dt^n sin(l t) = l^n sin(l t + n π/2)
            out = out + A * l ** order * np.sin(l * t + order * math.pi / 2)
        return out

    def effective_phases(self) -> np.ndarray:
        """Step phases with the per-period correction ramp removed."""
        s = np.arange(self.N)
        return np.asarray(self.phases) - s * self.correction

    def to_dict(self) -> dict:
        return {"kind": self.kind, "N": self.N, "phases": list(self.phases),
                "amplitudes": list(self.amplitudes), "correction": self.correction}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PhaseSchedule":
        return cls(payload["kind"], int(payload["N"]), tuple(payload.get("phases", ())),
                   tuple(payload.get("amplitudes", ())), float(payload.get("correction", 0.0)))

    @classmethod
    def from_json(cls, text: str) -> "PhaseSchedule":
        return cls.from_dict(json.loads(text))


def _check_periods(N):
    if int(N) != N or N < 3:
        raise ProtocolError(f"phase cancellation needs N >= 3 periods, got {N}")


def schedule_squeeze(N: int, correction: float = 0.0) -> PhaseSchedule:
    """φ_s = (2π/N + Δ)(s−1); Δ = 0 gives the plain roots-of-unity schedule."""
    _check_periods(N)
    s = np.arange(N)
    return PhaseSchedule("step", int(N), tuple((2 * math.pi / N + correction) * s), (), correction)


def backaction_shift(k: float, eta: float) -> float:
    """Per-period cavity rotation produced by the cubic drive, (4π/3)(kη)²."""
    return 4.0 * math.pi / 3.0 * (k * eta) ** 2


def schedule_cubic(N: int, k: float, eta: float) -> PhaseSchedule:
    return schedule_squeeze(N, correction=backaction_shift(k, eta))


def continuous_amplitudes(N: int, d: int, correction: float = 0.0) -> np.ndarray:
    """Solve for A_1..A_d making φ flat to order 2d−1 at the step centres.

    At t = (2j+1)π every sin(l t) term has odd derivatives
    l^{2m−1} (−1)^{m−1} (−1)^l, so the conditions are

        slope·δ_{m1} + Σ_l A_l l^{2m−1} (−1)^{l} (−1)^{m−1} = 0,   m = 1..d.
    """
    if int(d) != d or not 0 <= d <= MAX_CONTINUOUS_ORDER:
        raise ProtocolError(f"continuous order d must be in 0..{MAX_CONTINUOUS_ORDER}, got {d}")
    if d == 0:
        return np.zeros(0)
    slope = (2 * math.pi / N + correction) / PERIOD
    l = np.arange(1, d + 1)
    m = np.arange(1, d + 1)[:, None]
    M = l[None, :] ** (2 * m - 1) * (-1.0) ** l[None, :]
    rhs = np.zeros(d)
    rhs[0] = -slope
    cond = np.linalg.cond(M)
    assert cond < 1e14, f"tangency system is singular (cond {cond:.2e})"
    return np.linalg.solve(M, rhs)


def schedule_continuous(N: int, d: int, correction: float = 0.0) -> PhaseSchedule:
    _check_periods(N)
    A = continuous_amplitudes(N, d, correction)
    return PhaseSchedule("continuous", int(N), (), tuple(A), correction)


def sideband(params: ProtocolParams) -> int:
    return int(params.detuning)


def drive(t, params: ProtocolParams, schedule: PhaseSchedule):
    """ξ̃(t) = η e^{iφ(t)} 2cos(m t) in the free-rotation frame."""
    m = sideband(params)
    t = np.asarray(t, dtype=float)
    return params.eta * np.exp(1j * schedule.phase(t)) * 2.0 * np.cos(m * t)


def _check_window(t, params):
    t = np.asarray(t, dtype=float)
    tol = 1e-9 * max(1.0, params.duration)
    if np.any(t < -tol) or np.any(t > params.duration + tol):
        raise ProtocolError(f"time outside the protocol window [0, {params.duration}]")


def envelope_f(t: float, params: ProtocolParams, schedule: PhaseSchedule) -> complex:
    """Drive envelope f(t) = ∫_0^t ξ̃.

    Closed form on step schedules; adaptive quadrature with cached
    whole-period integrals on continuous ones.
    """
    _check_window(t, params)
    if schedule.kind == "step":
        return complex(step_envelope(t, params, schedule))
    t = float(t)
    s = int(min(t // PERIOD, params.N - 1)) if t > 0 else 0
    base = _continuous_boundary_values(params.eta, sideband(params), schedule.N,
                                       schedule.amplitudes, schedule.correction)[s]
    return base + _quad_complex(lambda x: complex(drive(x, params, schedule)), s * PERIOD, t)


def step_envelope(t, params: ProtocolParams, schedule: PhaseSchedule):
    """Vectorized closed-form envelope (2η/m) e^{iφ_s} sin(m t)."""
    m = sideband(params)
    t = np.asarray(t, dtype=float)
    return (2.0 * params.eta / m) * np.exp(1j * schedule.phase(t)) * np.sin(m * t)


def _quad_complex(fn, a, b, epsabs=1e-10):
    if b <= a:
        return 0j
    limit = 200
    re, _ = integrate.quad(lambda x: fn(x).real, a, b, epsabs=epsabs, epsrel=1e-12, limit=limit)
    im, _ = integrate.quad(lambda x: fn(x).imag, a, b, epsabs=epsabs, epsrel=1e-12, limit=limit)
    return complex(re, im)


@lru_cache(maxsize=64)
def _continuous_boundary_values(eta, m, N, amplitudes, correction):
    params = ProtocolParams(k=0.0, eta=eta, N=N, detuning=m)
    schedule = PhaseSchedule("continuous", N, (), amplitudes, correction)
    values = [0j]
    for s in range(N):
        a, b = s * PERIOD, (s + 1) * PERIOD
        values.append(values[-1] + _quad_complex(lambda x: complex(drive(x, params, schedule)), a, b))
    return tuple(values)


@dataclass
class EnvelopeTable:
    """Fast vectorized envelope on continuous schedules.

    The window is cut into panels; each panel carries a Gauss-Legendre rule
    and the cumulative integral at its left edge, so f(t) costs one small
    quadrature per evaluation point. Accuracy is far below 1e-10 for the
    smooth drives used here and is cross-checked against ``envelope_f``.
    """

    params: ProtocolParams
    schedule: PhaseSchedule
    panels_per_period: int = 32
    nodes: int = 16
    _edges: np.ndarray = field(init=False, repr=False)
    _left: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n_panels = self.panels_per_period * self.params.N
        self._edges = np.linspace(0.0, self.params.duration, n_panels + 1)
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        self._x, self._w = x, w
        a, b = self._edges[:-1], self._edges[1:]
        half = 0.5 * (b - a)
        pts = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
        panel_int = (drive(pts, self.params, self.schedule) * w[None, :]).sum(axis=1) * half
        self._left = np.concatenate([[0j], np.cumsum(panel_int)])

    def __call__(self, t):
        if self.schedule.kind == "step":
            return step_envelope(t, self.params, self.schedule)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self._edges, t, side="right") - 1, 0, len(self._edges) - 2)
        a = self._edges[idx]
        half = 0.5 * (t - a)
        pts = (a + half)[:, None] + half[:, None] * self._x[None, :]
        partial = (drive(pts, self.params, self.schedule) * self._w[None, :]).sum(axis=1) * half
        return self._left[idx] + partial


def envelope_function(params: ProtocolParams, schedule: PhaseSchedule):
    """Vectorized callable t -> f(t) suited to integrators and quadrature grids."""
    if schedule.kind == "step":
        return lambda t: step_envelope(t, params, schedule)
    return EnvelopeTable(params, schedule)


def phase_sums(phases: Sequence[float]) -> tuple[complex, complex]:
    """(Σ e^{iφ_s}, Σ e^{2iφ_s}); both vanish for a valid squeezing schedule."""
    p = np.asarray(phases)
    return complex(np.exp(1j * p).sum()), complex(np.exp(2j * p).sum())
