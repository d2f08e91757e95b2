"""Experiment configuration, presets and the run/sweep orchestration."""

from __future__ import annotations

import copy
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from . import __version__
from .analysis import (Convention, fidelity, nonclassicality, quadrature_stats, square_axis, wigner,
                       wigner_cut, fit_extent)
from .driving import (ProtocolParams, PhaseSchedule, backaction_shift, schedule_continuous,
                      schedule_squeeze)
from .dynamics import (IntegratorConfig, NoiseParams, TruncationLeakWarning, lindblad_propagate,
                       mech_damping_correction, photon_loss_correction, schrodinger_propagate)
from .errors import ConfigError, NumericalError, OptoprepError
from .fockspace import (Mode, QuantumState, embed, expectation, number, product_state, thermal_state,
                        top_level_population, truncation_scan, vacuum)
from .magnus import magnus_quadrature, propagator_cubic, propagator_fourth, propagator_squeeze

CONFIG_SCHEMA = "optoprep.config/1"
MANIFEST_SCHEMA = "optoprep.manifest/1"
PRESETS = ("fig1_squeeze", "fig2_wigner", "fig3_nonclassicality", "figS1_order4", "figS2_photon_loss",
           "figS3_thermal", "figS4_mech_damping", "figS5_continuous_phase", "figS6_master_equation",
           "custom")
TIMING_FIELDS = ("wall_time_s", "started_at")


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ScheduleOptions:
    """Phase-schedule choice: ``step`` or ``continuous`` of order ``order``.

    ``backaction_correction`` adds the per-period cavity rotation (4π/3)(kη)²
    to the phase ramp.
    """

    kind: str = "step"
    order: int = 0
    backaction_correction: bool = False

    def __post_init__(self):
        if self.kind not in ("step", "continuous"):
            raise ConfigError(f"schedule kind must be 'step' or 'continuous', got {self.kind!r}")
        if int(self.order) != self.order or self.order < 0:
            raise ConfigError("schedule order must be a non-negative integer")

    def build(self, params: ProtocolParams) -> PhaseSchedule:
        corr = backaction_shift(params.k, params.eta) if self.backaction_correction else 0.0
        if self.kind == "step":
            return schedule_squeeze(params.N, corr)
        return schedule_continuous(params.N, int(self.order), corr)


@dataclass(frozen=True)
class TruncationOptions:
    """Fock cutoffs and the mirror dimensions used for convergence reports."""

    mirror_dim: int = 120
    cavity_dim: int = 2
    scan: tuple = ()

    def __post_init__(self):
        if self.mirror_dim < 2 or self.cavity_dim < 1:
            raise ConfigError("truncation dimensions are too small")
        object.__setattr__(self, "scan", tuple(int(d) for d in self.scan))


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    params: ProtocolParams
    noise: NoiseParams = field(default_factory=NoiseParams)
    schedule: ScheduleOptions = field(default_factory=ScheduleOptions)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    truncation: TruncationOptions = field(default_factory=TruncationOptions)
    options: Mapping[str, Any] = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        object.__setattr__(self, "options", dict(self.options))

    def to_dict(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "preset": self.preset,
            "params": asdict(self.params),
            "noise": asdict(self.noise),
            "schedule": asdict(self.schedule),
            "integrator": asdict(self.integrator),
            "truncation": {**asdict(self.truncation), "scan": list(self.truncation.scan)},
            "options": _jsonable(self.options),
            "output_dir": self.output_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ExperimentConfig":
        payload = dict(payload)
        schema = payload.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r}")
        allowed = {"preset", "params", "noise", "schedule", "integrator", "truncation", "options", "output_dir"}
        unknown = set(payload) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "preset" not in payload:
            raise ConfigError("config needs a 'preset'")
        base = preset_config(payload["preset"]) if payload["preset"] != "custom" else None

        def section(name, typ, default):
            raw = payload.get(name)
            if raw is None:
                return default if default is not None else _build(typ, {})
            start = asdict(default) if default is not None else {}
            return _build(typ, {**start, **raw})

        params = section("params", ProtocolParams, base.params if base else None) \
            if ("params" in payload or base) else None
        if params is None:
            raise ConfigError("custom preset needs 'params'")
        options = {**(base.options if base else {}), **payload.get("options", {})}
        return cls(
            preset=payload["preset"],
            params=params,
            noise=section("noise", NoiseParams, base.noise if base else NoiseParams()),
            schedule=section("schedule", ScheduleOptions, base.schedule if base else ScheduleOptions()),
            integrator=section("integrator", IntegratorConfig, base.integrator if base else IntegratorConfig()),
            truncation=section("truncation", TruncationOptions, base.truncation if base else TruncationOptions()),
            options=options,
            output_dir=payload.get("output_dir", base.output_dir if base else "results"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(payload)


def _build(typ, values: Mapping):
    names = {f.name for f in fields(typ)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {typ.__name__} fields: {sorted(unknown)}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return typ(**values)
    except TypeError as exc:
        raise ConfigError(f"bad {typ.__name__}: {exc}") from exc


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _quiet_params(**kw) -> ProtocolParams:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ProtocolParams(**kw)


def preset_config(name: str) -> ExperimentConfig:
    """Default configuration of a preset."""
    fig2 = dict(k=1 / 60, eta=20.0, N=20, detuning=2)
    table = {
        "fig1_squeeze": dict(params=dict(k=1 / 400, eta=10.0, N=11, detuning=1),
                             truncation=TruncationOptions(60, 2, (40, 60, 80)),
                             options={"N_values": list(range(3, 12))}),
        "fig2_wigner": dict(params=fig2, truncation=TruncationOptions(240, 2, (120, 240, 480)),
                            options={"grid_points": 257, "cut_points": 801, "q_linear": 1.5}),
        "fig3_nonclassicality": dict(params=fig2, truncation=TruncationOptions(240, 2, (120, 240, 480)),
                                     options={"N_values": list(range(1, 21)), "q_linear": 1.5}),
        "figS1_order4": dict(params=fig2, truncation=TruncationOptions(240, 2, (120, 240, 480)),
                             options={"N_values": list(range(3, 21))}),
        "figS2_photon_loss": dict(params=fig2, truncation=TruncationOptions(120, 3, (60, 120, 180)),
                                  options={"kappa_values": list(np.logspace(-4, -2, 10))}),
        "figS3_thermal": dict(params=fig2, truncation=TruncationOptions(300, 2, ()),
                              options={"nbar_values": [0.0, 1.0, 10.0], "cut_points": 801}),
        "figS4_mech_damping": dict(params=fig2, truncation=TruncationOptions(120, 2, (60, 120, 180)),
                                   options={"gamma_values": list(np.logspace(-7, -5, 9)),
                                            "nbar_values": [0.0, 1.0], "coefficient": "kappa"}),
        "figS5_continuous_phase": dict(params=fig2, truncation=TruncationOptions(120, 16, ()),
                                       schedule=ScheduleOptions("continuous", 0),
                                       options={"orders": [0, 1, 2, 3]}),
        "figS6_master_equation": dict(params=dict(k=1 / 90, eta=20.0, N=20, detuning=2),
                                      noise=NoiseParams(0.0, 0.0, 1.0),
                                      # at 1e-6 the accumulated RK error alone breaches the -1e-6 positivity guard
                                      integrator=IntegratorConfig(rel_tol=1e-7),
                                      truncation=TruncationOptions(35, 15, ()),
                                      options={"kappa_values": [1e-3, 1e-2], "gamma_values": [1e-5, 1e-4]}),
        "custom": dict(params=fig2, truncation=TruncationOptions(120, 2, ()), options={}),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    entry = table[name]
    return ExperimentConfig(
        preset=name,
        params=_quiet_params(**entry["params"]),
        noise=entry.get("noise", NoiseParams()),
        schedule=entry.get("schedule", ScheduleOptions()),
        integrator=entry.get("integrator", IntegratorConfig()),
        truncation=entry["truncation"],
        options=copy.deepcopy(entry["options"]),
        output_dir=os.path.join("results", name),
    )


def list_presets() -> list[str]:
    return list(PRESETS)


# ----------------------------------------------------------------------------
# results


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.header):
            raise ValueError("row length does not match header")
        self.rows.append([float(v) for v in values])

    def column(self, name) -> np.ndarray:
        j = self.header.index(name)
        return np.array([r[j] for r in self.rows])

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.header) + "\n")
            for r in self.rows:
                fh.write(",".join("%.17e" % v for v in r) + "\n")


@dataclass
class PipelineResult:
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    truncation: dict | None = None
    grids: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    config: dict
    code_version: str
    wall_time_s: float
    truncation: dict | None
    files: list
    summary: dict
    failures: list = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        out = {"schema": MANIFEST_SCHEMA, "config": self.config, "code_version": self.code_version,
               "truncation": self.truncation, "files": sorted(self.files), "summary": self.summary,
               "failures": self.failures}
        if timing:
            out["wall_time_s"] = self.wall_time_s
        return _jsonable(out)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@contextmanager
def stage(name: str):
    """Prefix any library error raised inside with the pipeline stage that failed."""
    try:
        yield
    except OptoprepError as exc:
        if getattr(exc, "stage", None):
            raise
        wrapped = type(exc)(f"[{name}] {exc}")
        wrapped.stage = name
        raise wrapped from exc


# ----------------------------------------------------------------------------
# state builders


def squeeze_state(params: ProtocolParams, dim: int) -> QuantumState:
    U = propagator_squeeze(params, dim)
    return QuantumState.from_ket(U @ vacuum(dim).data, (dim,), Mode.MIRROR, normalize=True)


def cubic_state(params: ProtocolParams, dim: int, q_linear: float = 1.5, initial: QuantumState | None = None):
    Vm, _ = propagator_cubic(params, dim, q_linear=q_linear)
    return Vm.act(initial if initial is not None else vacuum(dim))


def fourth_state(params: ProtocolParams, dim: int) -> QuantumState:
    return propagator_fourth(params, dim).act(vacuum(dim))


def _mean_n(state: QuantumState) -> float:
    return float(expectation(state, number(state.dim)).real)


def _scan(cfg: ExperimentConfig, builder: Callable[[int], QuantumState], observables) -> dict | None:
    dims = cfg.truncation.scan
    if not dims:
        return None
    with stage("truncation-scan"):
        return truncation_scan(builder, observables, dims).to_dict()


# ----------------------------------------------------------------------------
# pipelines


def _pipe_fig1(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    dim = cfg.truncation.mirror_dim
    tab = Table(["N", "dX2", "dP2", "product", "dX2_closed_form", "dP2_closed_form"])
    from .magnus import squeeze_parameters
    for n in cfg.options.get("N_values", [cfg.params.N]):
        p = cfg.params.replace(N=int(n))
        with stage(f"propagate N={n}"):
            st = squeeze_state(p, dim)
        with stage("analyze"):
            q = quadrature_stats(st, Convention.HALF, axes="principal")
            cx, cp = squeeze_parameters(p).principal_variances("half")
        tab.add(n, q.dx2, q.dp2, q.dx2 * q.dp2, cx, cp)
    res.tables["squeezing"] = tab
    last = tab.rows[-1]
    res.summary.update(N=int(last[0]), dX2=last[1], dP2=last[2], product=last[3])
    final = cfg.params.replace(N=int(last[0]))
    res.truncation = _scan(cfg, lambda d: squeeze_state(final, d),
                           {"dX2": lambda s: quadrature_stats(s, "half", "principal").dx2,
                            "dP2": lambda s: quadrature_stats(s, "half", "principal").dp2})
    return res


def _pipe_fig2(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    dim = cfg.truncation.mirror_dim
    ql = float(cfg.options.get("q_linear", 1.5))
    with stage("propagate"):
        st = cubic_state(cfg.params, dim, ql)
    with stage("wigner"):
        ext = fit_extent(st, int(cfg.options.get("grid_points", 257)))
        axis = square_axis(ext, int(cfg.options.get("grid_points", 257)))
        grid = wigner(st, axis, axis, Convention.HALF)
        q = square_axis(ext, int(cfg.options.get("cut_points", 801)))
        cut = wigner_cut(st, q, 0.0)
    tab = Table(["q", "W"])
    for x, w in zip(q, cut):
        tab.add(x, w)
    res.tables["wigner_cut_p0"] = tab
    res.grids["wigner"] = grid
    with stage("analyze"):
        ncl = nonclassicality(st, method="fock")
    res.summary.update(N=cfg.params.N, mean_n=_mean_n(st), min_W_cut=float(cut.min()),
                       min_W_grid=float(grid.values.min()), normalization=grid.normalization(),
                       negativity_volume=grid.negativity_volume(), I=ncl.value,
                       top_level_population=top_level_population(st))
    res.truncation = _scan(cfg, lambda d: cubic_state(cfg.params, d, ql), {"mean_n": _mean_n})
    return res


def _pipe_fig3(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    dim = cfg.truncation.mirror_dim
    ql = float(cfg.options.get("q_linear", 1.5))
    tab = Table(["N", "I", "mean_n", "ratio"])
    st = None
    for n in cfg.options.get("N_values", [cfg.params.N]):
        p = cfg.params.replace(N=int(n))
        with stage(f"propagate N={n}"):
            st = cubic_state(p, dim, ql)
        with stage("analyze"):
            ncl = nonclassicality(st, method="fock")
        tab.add(n, ncl.value, ncl.mean_n, ncl.ratio if ncl.mean_n > 0 else 0.0)
    res.tables["nonclassicality"] = tab
    last = tab.rows[-1]
    res.summary.update(N=int(last[0]), I=last[1], mean_n=last[2], ratio=last[3])
    if cfg.options.get("grid_check", True) and st is not None:
        with stage("grid cross-check"):
            res.summary["I_grid"] = nonclassicality(st, method="grid").value
    final = cfg.params.replace(N=int(last[0]))
    res.truncation = _scan(cfg, lambda d: cubic_state(final, d, ql), {"mean_n": _mean_n})
    return res


def _pipe_figS1(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    dim = cfg.truncation.mirror_dim
    tab = Table(["N", "F34", "mean_n_third", "mean_n_fourth"])
    for n in cfg.options.get("N_values", [cfg.params.N]):
        p = cfg.params.replace(N=int(n))
        with stage(f"propagate N={n}"):
            s3, s4 = cubic_state(p, dim), fourth_state(p, dim)
        tab.add(n, fidelity(s3, s4), _mean_n(s3), _mean_n(s4))
    res.tables["order4_fidelity"] = tab
    res.summary.update(N=int(tab.rows[-1][0]), F34=tab.rows[-1][1], F34_min=float(tab.column("F34").min()))
    return res


def _ideal_composite(cfg: ExperimentConfig, nbar: float = 0.0) -> QuantumState:
    dc, dm = cfg.truncation.cavity_dim, cfg.truncation.mirror_dim
    init = vacuum(dm) if nbar == 0 else thermal_state(dm, nbar)
    mirror = cubic_state(cfg.params, dm, float(cfg.options.get("q_linear", 1.5)), init)
    cavity = vacuum(dc, Mode.CAVITY)
    if mirror.is_ket:
        return product_state(cavity, mirror)
    rho = np.kron(cavity.density_matrix(), mirror.density_matrix())
    return QuantumState.from_density(rho, (dc, dm), Mode.COMPOSITE, clean=True)


def _values(cfg, key, fallback):
    vals = cfg.options.get(key)
    return list(vals) if vals else [fallback]


def _pipe_figS2(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    with stage("propagate"):
        ideal = _ideal_composite(cfg)
    tab = Table(["kappa", "fidelity"])
    for kap in _values(cfg, "kappa_values", cfg.noise.kappa):
        with stage(f"photon loss kappa={kap:g}"):
            out = photon_loss_correction(ideal, cfg.params, float(kap))
        tab.add(kap, fidelity(ideal, out))
    res.tables["photon_loss"] = tab
    F = tab.column("fidelity")
    res.summary.update(fidelity_at_max_kappa=float(F[-1]), max_kappa=float(tab.column("kappa")[-1]),
                       monotone=bool(np.all(np.diff(F) <= 1e-12)), fidelity=float(F[-1]))
    return res


def _pipe_figS3(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    dim = cfg.truncation.mirror_dim
    nbars = cfg.options.get("nbar_values", [cfg.noise.nbar_bath])
    cuts = {}
    for nb in nbars:
        with stage(f"propagate nbar={nb:g}"):
            init = vacuum(dim) if nb == 0 else thermal_state(dim, float(nb))
            st = cubic_state(cfg.params, dim, float(cfg.options.get("q_linear", 1.5)), init)
        cuts[nb] = st
    # common axis covering the widest state
    ext = max(fit_extent(s) for s in cuts.values())
    q = square_axis(ext, int(cfg.options.get("cut_points", 801)))
    tab = Table(["q"] + [f"W_nbar_{nb:g}" for nb in nbars])
    cols = []
    for nb in nbars:
        with stage(f"wigner nbar={nb:g}"):
            cols.append(wigner_cut(cuts[nb], q, 0.0))
    for i, x in enumerate(q):
        tab.add(x, *[c[i] for c in cols])
    res.tables["thermal_cuts_p0"] = tab
    for nb, c in zip(nbars, cols):
        tag = f"{nb:g}"
        res.summary[f"min_W_nbar_{tag}"] = float(c.min())
        res.summary[f"mean_n_nbar_{tag}"] = _mean_n(cuts[nb])
        res.summary[f"top_level_population_nbar_{tag}"] = top_level_population(cuts[nb])
    return res


def _pipe_figS4(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    with stage("propagate"):
        ideal = _ideal_composite(cfg)
    nbars = cfg.options.get("nbar_values", [cfg.noise.nbar_bath])
    coefficient = cfg.options.get("coefficient", "kappa")
    tab = Table(["gamma_m"] + [f"fidelity_nbar_{nb:g}" for nb in nbars])
    for g in _values(cfg, "gamma_values", cfg.noise.gamma_m):
        row = []
        for nb in nbars:
            noise = NoiseParams(cfg.noise.kappa, float(g), float(nb))
            with stage(f"mech damping gamma={g:g} nbar={nb:g}"):
                out = mech_damping_correction(ideal, cfg.params, noise, coefficient)
            row.append(fidelity(ideal, out))
        tab.add(g, *row)
    res.tables["mech_damping"] = tab
    for j, nb in enumerate(nbars, start=1):
        col = np.array([r[j] for r in tab.rows])
        res.summary[f"fidelity_loss_max_nbar_{nb:g}"] = float(1 - col.min())
    res.summary["max_gamma"] = float(tab.column("gamma_m").max())
    return res


def whole_window_state(cfg: ExperimentConfig, schedule: PhaseSchedule) -> QuantumState:
    """Composite state exp(−i(M1+M2+M3))|0,0⟩ from whole-window Magnus generators."""
    dims = (cfg.truncation.cavity_dim, cfg.truncation.mirror_dim)
    terms = magnus_quadrature(cfg.params, schedule, dims, order=3,
                              panels_per_period=int(cfg.options.get("panels_per_period", 16)))
    G = sum(t.operator.elements for t in terms)
    psi0 = product_state(vacuum(dims[0], Mode.CAVITY), vacuum(dims[1])).data
    psi = spla.expm_multiply(-1j * G.tocsc(), psi0, traceA=0.0)
    return QuantumState.from_ket(psi, dims, Mode.COMPOSITE, normalize=True)


def _populations(st: QuantumState) -> tuple[float, float]:
    dc, dm = st.dims
    return (float(expectation(st, embed(number(dc, Mode.CAVITY), st.dims)).real),
            float(expectation(st, embed(number(dm, Mode.MIRROR), st.dims)).real))


def _pipe_figS5(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    corr = backaction_shift(cfg.params.k, cfg.params.eta) if cfg.schedule.backaction_correction else 0.0
    with stage("step reference"):
        ref = whole_window_state(cfg, schedule_squeeze(cfg.params.N, corr)).reduced("mirror")
    orders = cfg.options.get("orders") or [cfg.schedule.order]
    tab = Table(["d", "n_c", "n_m", "ratio", "fidelity_vs_step", "top_level_population"])
    for d in orders:
        with stage(f"whole-window Magnus d={d}"):
            st = whole_window_state(cfg, schedule_continuous(cfg.params.N, int(d), corr))
        nc, nm = _populations(st)
        tab.add(d, nc, nm, nc / nm if nm > 0 else float("nan"), fidelity(ref, st.reduced("mirror")),
                top_level_population(st))
    res.tables["continuous_phase"] = tab
    for r in tab.rows:
        res.summary[f"ratio_d{int(r[0])}"] = r[3]
        res.summary[f"fidelity_d{int(r[0])}"] = r[4]
    res.summary["ratio"] = tab.rows[-1][3]
    res.summary["fidelity"] = tab.rows[-1][4]
    return res


def _pipe_figS6(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    dims = (cfg.truncation.cavity_dim, cfg.truncation.mirror_dim)
    sched = cfg.schedule.build(cfg.params)
    psi0 = product_state(vacuum(dims[0], Mode.CAVITY), vacuum(dims[1]))
    with stage("closed-system reference"):
        ideal = schrodinger_propagate(psi0, cfg.params, sched, dims, cfg.integrator)
    tab = Table(["kappa", "gamma_m", "fidelity", "fidelity_mirror"])
    for kap in _values(cfg, "kappa_values", cfg.noise.kappa):
        for g in _values(cfg, "gamma_values", cfg.noise.gamma_m):
            noise = NoiseParams(float(kap), float(g), cfg.noise.nbar_bath)
            with stage(f"master equation kappa={kap:g} gamma={g:g}"):
                out = lindblad_propagate(psi0, cfg.params, sched, dims, noise, cfg.integrator)
            tab.add(kap, g, fidelity(ideal, out), fidelity(ideal.reduced("mirror"), out.reduced("mirror")))
    res.tables["master_equation"] = tab
    F = tab.column("fidelity")
    res.summary.update(fidelity_min=float(F.min()), fidelity_loss_max=float(1 - F.min()),
                       reference_top_level_population=float(ideal.metadata["max_top_level_population"]),
                       mean_n_mirror=_populations(ideal)[1])
    return res


def _pipe_custom(cfg: ExperimentConfig) -> PipelineResult:
    res = PipelineResult()
    dim = cfg.truncation.mirror_dim
    squeeze = cfg.params.detuning == 1
    tab = Table(["N", "mean_n", "dX2", "dP2", "I"])
    # the squeezing closed form needs N >= 3
    first = 3 if squeeze else 1
    for n in cfg.options.get("N_values") or range(min(first, cfg.params.N), cfg.params.N + 1):
        p = cfg.params.replace(N=int(n))
        with stage(f"propagate N={n}"):
            if squeeze:
                st = squeeze_state(p, dim)
            else:
                st = cubic_state(p, dim, float(cfg.options.get("q_linear", 1.5)))
        q = quadrature_stats(st, Convention.HALF)
        tab.add(n, q.mean_n, q.dx2, q.dp2, nonclassicality(st, method="fock").value)
    res.tables["custom"] = tab
    last = tab.rows[-1]
    res.summary.update(N=int(last[0]), mean_n=last[1], dX2=last[2], dP2=last[3], I=last[4])
    return res


PIPELINES: dict[str, Callable[[ExperimentConfig], PipelineResult]] = {
    "fig1_squeeze": _pipe_fig1,
    "fig2_wigner": _pipe_fig2,
    "fig3_nonclassicality": _pipe_fig3,
    "figS1_order4": _pipe_figS1,
    "figS2_photon_loss": _pipe_figS2,
    "figS3_thermal": _pipe_figS3,
    "figS4_mech_damping": _pipe_figS4,
    "figS5_continuous_phase": _pipe_figS5,
    "figS6_master_equation": _pipe_figS6,
    "custom": _pipe_custom,
}

# config field scanned internally by each preset, and the option list it replaces
SCAN_OPTIONS = {
    "noise.kappa": "kappa_values",
    "noise.gamma_m": "gamma_values",
    "noise.nbar_bath": "nbar_values",
    "schedule.order": "orders",
    "params.N": "N_values",
}


# ----------------------------------------------------------------------------
# orchestration


def execute(cfg: ExperimentConfig) -> PipelineResult:
    """Run a preset pipeline in memory, without writing anything."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationLeakWarning)
        return PIPELINES[cfg.preset](cfg)


def _write_outputs(res: PipelineResult, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for name, tab in sorted(res.tables.items()):
        tab.write(os.path.join(out_dir, f"{name}.csv"))
        files.append(f"{name}.csv")
    for name, grid in sorted(res.grids.items()):
        grid.to_json(os.path.join(out_dir, f"{name}.json"), os.path.join(out_dir, f"{name}.csv"))
        files += [f"{name}.json", f"{name}.csv"]
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(_jsonable(res.summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append("summary.json")
    return files


def run(cfg: ExperimentConfig, out_dir: str | None = None) -> RunManifest:
    """Execute a preset and write CSV curves, a JSON summary and ``manifest.json``."""
    out_dir = out_dir or cfg.output_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir!r} is not writable: {exc}") from exc
    t0 = time.perf_counter()
    res = execute(cfg)
    files = _write_outputs(res, out_dir) + ["manifest.json"]
    man = RunManifest(cfg.to_dict(), __version__, time.perf_counter() - t0, res.truncation, files, res.summary)
    man.write(os.path.join(out_dir, "manifest.json"))
    return man


def set_field(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with the dotted scalar field ``path`` replaced."""
    parts = path.split(".")
    if len(parts) != 2 or parts[0] not in ("params", "noise", "schedule", "integrator", "truncation", "options"):
        raise ConfigError(f"sweep axis must look like 'section.field', got {path!r}")
    section, name = parts
    if section == "options":
        opts = dict(cfg.options)
        opts[name] = value
        return replace(cfg, options=opts)
    obj = getattr(cfg, section)
    if name not in {f.name for f in fields(obj)}:
        raise ConfigError(f"{section} has no field {name!r}")
    current = getattr(obj, name)
    if isinstance(current, (tuple, list, dict)):
        raise ConfigError(f"sweep axis {path!r} is not a scalar field")
    if isinstance(current, bool):
        value = bool(value)
    elif isinstance(current, int):
        if float(value) != int(float(value)):
            raise ConfigError(f"{path} takes integers, got {value!r}")
        value = int(float(value))
    elif isinstance(current, float):
        value = float(value)
    new = _build(type(obj), {**asdict(obj), name: value})
    cfg = replace(cfg, **{section: new})
    opt = SCAN_OPTIONS.get(path)
    if opt and opt in cfg.options:
        opts = dict(cfg.options)
        opts[opt] = [value]
        cfg = replace(cfg, options=opts)
    return cfg


def _sweep_point(args):
    cfg_dict, axis, value = args
    cfg = set_field(ExperimentConfig.from_dict(cfg_dict), axis, value)
    try:
        res = execute(cfg)
        return value, _jsonable(res.summary), None
    except (OptoprepError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return value, None, f"{type(exc).__name__}: {exc}"


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence, out_dir: str | None = None,
          threads: int = 1) -> RunManifest:
    """Independent runs over ``values`` of one scalar field, merged into one CSV keyed by the axis.

    A failing point is recorded in the manifest and the sweep continues.
    """
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    set_field(cfg, axis, values[0])  # validates the axis before any work
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    jobs = [(cfg.to_dict(), axis, v) for v in values]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    keys = sorted({k for _, s, _ in results if s for k, v in s.items() if isinstance(v, (int, float, bool))})
    tab = Table([axis] + keys)
    failures = []
    summaries = {}
    for value, summ, err in results:
        if err is not None:
            failures.append({"value": _jsonable(value), "error": err})
            tab.rows.append([float(value)] + [float("nan")] * len(keys))
            continue
        tab.add(value, *[float(summ.get(k, float("nan"))) for k in keys])
        summaries[repr(value)] = summ
    name = "sweep_" + axis.replace(".", "_")
    tab.write(os.path.join(out_dir, f"{name}.csv"))
    files = [f"{name}.csv", "manifest.json"]
    man = RunManifest({**cfg.to_dict(), "sweep": {"axis": axis, "values": _jsonable(values)}}, __version__,
                      time.perf_counter() - t0, None, files, {"points": summaries}, failures)
    man.write(os.path.join(out_dir, "manifest.json"))
    return man
