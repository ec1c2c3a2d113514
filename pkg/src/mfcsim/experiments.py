"""Scenario runners: vacuum and pumped emitter-phonon swaps, fidelity and
cooling scans, and the check of the neglected mechanical supermodes."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import models as M
from .liouvillian import (
    EvolutionResult,
    IntegrityError,
    Schedule,
    SolverError,
    evolve,
    steady_state,
)
from .models import SystemParams
from .operators import (
    QOperator,
    QuantumState,
    SubsystemLayout,
    basis_state,
    destroy,
    embed,
    expectation,
    number,
    partial_populations,
    pauli_operators,
    product_density,
    single_layout,
    thermal_populations,
)
from .supermodes import (
    dressed_resonance_detuning,
    mfc_rate,
    parasitic_kappa_threshold,
    pump_amplitude_for,
    selective_pump_transient,
    three_cavity_supermodes,
    two_cavity_supermodes,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
FIDELITY_AXES = ("Gamma", "kappa", "n_cav", "Gamma_star", "J_M", "Gamma_M")
RESONANCES = ("dressed", "bare")


# defaults -----------------------------------------------------------------------

def paper_swap_params(**overrides) -> SystemParams:
    """Lossless diamond nanobeam parameters used for the vacuum swap."""
    return SystemParams.paper(**overrides)


def paper_pumped_params(**overrides) -> SystemParams:
    """Losses of the pumped swap: kappa/2pi = 1 GHz, Gamma/2pi = 50 MHz,
    Gamma_M/2pi = 50 kHz with a cold bath."""
    base = SystemParams.paper(kappa=TWO_PI * 1.0, Gamma=TWO_PI * 0.05, Gamma_M=TWO_PI * 50e-6, n_th=0.0)
    return base.replace(**overrides)


def paper_cooling_params(**overrides) -> SystemParams:
    """Continuous-pump cooling: kappa = 10 Omega_M, Gamma_M/2pi = 50 kHz, n_th = 4."""
    base = SystemParams.paper()
    base = base.replace(kappa=10.0 * base.Omega_M, Gamma_M=TWO_PI * 50e-6, n_th=4.0)
    return base.replace(**overrides)


def resolve_detuning(params: SystemParams, resonance: str = "dressed", sideband: int = +1) -> float:
    """Emitter detuning for the tripartite resonance ``omega_A = omega_c + sideband*Omega_M``.

    ``"bare"`` uses the literal condition.  ``"dressed"`` compensates the
    emitter's dispersive shift from the off-resonant supermodes a+ and a-.
    """
    if resonance == "bare":
        return sideband * params.Omega_M
    if resonance == "dressed":
        return dressed_resonance_detuning(params.Omega_M, params.g, params.J, sideband, params.kappa)
    raise ValueError(f"resonance must be one of {RESONANCES}, got {resonance!r}")


def at_resonance(params: SystemParams, resonance: str = "dressed", sideband: int = +1) -> SystemParams:
    return params.with_detuning(resolve_detuning(params, resonance, sideband))


# observables ---------------------------------------------------------------------

def emitter_population(layout: SubsystemLayout) -> QOperator:
    sm = embed(pauli_operators()[0], layout, M.EMITTER)
    return sm.dag() @ sm


def fock_projector(layout: SubsystemLayout, slot: str, n: int = 1) -> QOperator:
    """|n><n| on ``slot``, identity elsewhere."""
    dim = layout[slot].dim
    if not 0 <= n < dim:
        raise ValueError(f"level {n} outside slot {slot} of dimension {dim}")
    diag = np.zeros(dim)
    diag[n] = 1.0
    return embed(QOperator(single_layout(dim, name=slot), np.diag(diag)), layout, slot)


def antisymmetric_mode(layout: SubsystemLayout) -> QOperator:
    """a0 at rest, ``(a_R - a_L)/sqrt2`` (the model puts -Delta on cavity L)."""
    sup = three_cavity_supermodes(0.0, 1.0)
    cL, cT, cR = sup.vectors[0]
    return cL * destroy(layout, "cav_L") + cT * destroy(layout, "cav_T") + cR * destroy(layout, "cav_R")


def mechanical_supermodes(layout: SubsystemLayout) -> dict[str, QOperator]:
    """Annihilation operators of b0, b+, b- built from the resonator slots."""
    bL, bT, bR = (destroy(layout, s) for s in ("mech_L", "mech_T", "mech_R"))
    s = 1.0 / np.sqrt(2.0)
    return {
        "b0": s * (bL - bR),
        "b_plus": s * bT + 0.5 * (bL + bR),
        "b_minus": -s * bT + 0.5 * (bL + bR),
    }


def mech_single_phonon_projector(layout: SubsystemLayout) -> QOperator:
    """Projector on one quantum in b0 with b+ and b- empty, identity on the
    other slots.  The resonators must be the last three slots."""
    names = ("mech_L", "mech_T", "mech_R")
    idx = [layout.index(n) for n in names]
    first = len(layout.subsystems) - 3
    if idx != [first, first + 1, first + 2]:
        raise ValueError("mechanical slots must be the last three slots of the layout")
    sub = SubsystemLayout([layout[n] for n in names])
    vac = np.zeros(sub.total_dim, dtype=complex)
    vac[0] = 1.0
    one = mechanical_supermodes(sub)["b0"].dag().matrix @ vac
    pre = int(np.prod(layout.dims[:first]))
    full = np.kron(np.eye(pre), np.outer(one, one.conj()))
    if layout.basis is not None:
        full = full[np.ix_(layout.basis, layout.basis)]
    return QOperator(layout, full)


# result carriers -----------------------------------------------------------------

def oscillation_period(times: np.ndarray, trace: np.ndarray) -> float:
    """Period of a cos^2-like population starting at its maximum: twice the
    position of the first deep minimum, refined by a parabola through the
    three samples around it."""
    trace = np.asarray(trace, dtype=float)
    i = int(np.argmin(trace))
    if 0 < i < len(trace) - 1:
        y0, y1, y2 = trace[i - 1: i + 2]
        t0, t1, t2 = times[i - 1: i + 2]
        h = t1 - t0
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * h * (y0 - y2) / denom if denom != 0 else 0.0
        t_min = t1 + shift
    else:
        t_min = times[i]
    return 2.0 * float(t_min)


@dataclass
class VacuumSwapResult:
    full: EvolutionResult
    reduced: EvolutionResult
    detuning: float
    gamma: float
    metrics: dict = field(default_factory=dict)


def run_vacuum_swap(params: SystemParams, *, resonance: str = "dressed", sideband: int = +1,
                    t_end: float | None = None, n_points: int = 1801, dims: dict | None = None,
                    allow_losses: bool = False, solver: dict | None = None) -> VacuumSwapResult:
    """Emitter starting excited, no pump: full three-cavity model against
    the tripartite model with ``gamma = g g0 / 2J``.

    Traces are ``emitter``, ``photon`` (a0 in the full model) and ``phonon``.
    """
    lossy = any(getattr(params, k) > 0 for k in ("kappa", "Gamma", "Gamma_star", "Gamma_M"))
    if lossy and not allow_losses:
        raise ValueError("vacuum swap expects lossless parameters (pass allow_losses=True to override)")
    gamma = mfc_rate(params.g, params.g0, params.J)
    period = np.pi / gamma
    times = np.linspace(0.0, t_end if t_end is not None else period, n_points)
    p_full = at_resonance(params, resonance, sideband)

    lay = M.three_cavity_layout(**(dims or {}))
    full = M.with_losses(M.build_three_cavity_hamiltonian(p_full, lay), p_full)
    a0 = antisymmetric_mode(lay)
    full_obs = {"emitter": emitter_population(lay), "photon": a0.dag() @ a0, "phonon": number(lay, "phonon")}
    start = basis_state(lay, {M.EMITTER: 1})
    solver = solver or {}
    r_full = evolve(full, start if full.is_closed else start.to_mixed(), times, full_obs, **solver)

    # the tripartite model has no dispersive shift: its resonance is the bare one
    p_red = params.with_detuning(sideband * params.Omega_M)
    lay_r = M.mfc_layout(**{k: v for k, v in (dims or {}).items() if k in ("photon", "phonon")})
    red = M.with_losses(M.build_mfc_hamiltonian(p_red, gamma, lay_r), p_red)
    red_obs = {"emitter": emitter_population(lay_r), "photon": number(lay_r, "photon"),
               "phonon": number(lay_r, "phonon")}
    start_r = basis_state(lay_r, {M.EMITTER: 1})
    r_red = evolve(red, start_r if red.is_closed else start_r.to_mixed(), times, red_obs, **solver)

    disc = max(float(np.max(np.abs(r_full.real(k) - r_red.real(k)))) for k in full_obs)
    pe = r_full.real("emitter")
    metrics = {
        "predicted_period_ns": period,
        "period_ns": oscillation_period(times, pe),
        "min_emitter_population": float(pe.min()),
        "final_emitter_population": float(pe[-1]),
        "max_discrepancy": disc,
        "detuning_rad_per_ns": p_full.detuning,
        "resonance": resonance,
    }
    return VacuumSwapResult(r_full, r_red, p_full.detuning, gamma, metrics)


def run_semiclassical_swap(params: SystemParams, n_cav: float, *, t_end: float | None = None,
                           n_points: int = 2001, phonon_dim: int = 2) -> EvolutionResult:
    """Drive-enhanced emitter-phonon model from |e, 0>, resonance at Omega_M."""
    gamma = mfc_rate(params.g, params.g0, params.J)
    p = params.with_detuning(params.Omega_M)
    lay = M.semiclassical_layout(phonon=phonon_dim)
    model = M.with_losses(M.build_semiclassical_mfc_hamiltonian(p, gamma, n_cav, lay), p)
    if t_end is None:
        t_end = 2.0 * np.pi / (2.0 * gamma * np.sqrt(n_cav))
    times = np.linspace(0.0, t_end, n_points)
    start = basis_state(lay, {M.EMITTER: 1})
    obs = {"emitter": emitter_population(lay), "phonon": number(lay, "phonon"),
           "phonon_p1": fock_projector(lay, "phonon", 1)}
    return evolve(model, start if model.is_closed else start.to_mixed(), times, obs)


# pumped swap -----------------------------------------------------------------------

@dataclass(frozen=True)
class SwapProtocol:
    """How the pumped swap is driven and when the pump is released.

    ``pump``: ``"instantaneous"`` (n_cav steps on at t = 0 and off at
    t_off) or ``"transient"`` (n_cav(t) from the classical field equations
    for a square drive pulse).  ``switch_off``: ``"search"`` picks the
    grid time of maximal single-phonon population in
    ``[0, search_factor * pi/(2 gamma sqrt(n_cav))]``; ``"fixed"`` uses
    ``t_off``.
    """

    pump: str = "instantaneous"
    switch_off: str = "search"
    t_off: float | None = None
    grid_step: float = 0.2
    search_factor: float = 4.0
    release_time: float | None = None
    release_points: int = 41
    transient_span: float = 60.0

    def __post_init__(self):
        if self.pump not in ("instantaneous", "transient"):
            raise ValueError(f"unknown pump model {self.pump!r}")
        if self.switch_off not in ("search", "fixed"):
            raise ValueError(f"unknown switch-off strategy {self.switch_off!r}")
        if self.switch_off == "fixed" and (self.t_off is None or self.t_off <= 0):
            raise ValueError("fixed switch-off needs t_off > 0")
        if self.grid_step <= 0 or self.search_factor <= 0:
            raise ValueError("grid_step and search_factor must be > 0")

    def window(self, t_half: float) -> np.ndarray:
        if self.switch_off == "fixed":
            n = int(np.floor(self.t_off / self.grid_step + 1e-9))
            grid = self.grid_step * np.arange(n + 1)
            return grid if abs(grid[-1] - self.t_off) < 1e-12 else np.append(grid, self.t_off)
        n = int(np.floor(self.search_factor * t_half / self.grid_step + 1e-9))
        return self.grid_step * np.arange(n + 1)


@dataclass
class PumpedSwapResult:
    search: EvolutionResult
    release: EvolutionResult | None
    metrics: dict
    protocol: SwapProtocol
    pump_on: Schedule | None = None
    pump_off: Schedule | None = None


def _pump_schedule(n_cav: float, kappa: float, J: float, t0: float, span: float, on: bool,
                   start_amp: float | None = None) -> Schedule:
    """n_cav(t) of a drive switched on (from empty cavities) or off (from
    ``start_amp``) at ``t0``, sampled every 0.1/kappa and held at the last
    value after ``span/kappa``."""
    from .supermodes import ClassicalAmplitudes

    if kappa <= 0:
        raise ValueError("the transient pump model needs kappa > 0")
    E = pump_amplitude_for(n_cav, kappa) if on else 0.0
    fine = 0.1 * min(1.0 / kappa, 1.0 / J)
    n_fine = int(np.ceil(span / kappa / fine))
    times = t0 + fine * np.arange(n_fine + 1)
    init = None if on else ClassicalAmplitudes(-start_amp, 0j, start_amp)
    tr = selective_pump_transient(Schedule.constant(E, t0), kappa, J, times, initial=init)
    every = max(1, int(round(0.1 / kappa / fine)))
    values = tr.n_cav[::every].copy()
    stamps = times[::every].copy()
    if not on:
        values[-1] = 0.0
    return Schedule.from_samples(stamps, values, merge_rtol=1e-9, merge_atol=1e-9)


def _displaced_setup(params: SystemParams, n_cav: float, model: str, dims: dict | None,
                     max_excitations: int | None):
    if model == "three-cavity":
        lay = M.three_cavity_layout(max_excitations=max_excitations, **(dims or {}))
        H = M.build_displaced_three_cavity_hamiltonian(params, n_cav, lay)
        p1 = fock_projector(lay, "phonon", 1)
        nb = number(lay, "phonon")
    elif model == "full-mech":
        lay = M.full_mech_layout(max_excitations=max_excitations, **(dims or {}))
        H = M.build_displaced_full_mech_hamiltonian(params, n_cav, lay)
        p1 = mech_single_phonon_projector(lay)
        b0 = mechanical_supermodes(lay)["b0"]
        nb = b0.dag() @ b0
    else:
        raise ValueError(f"unknown pumped model {model!r}")
    return M.with_losses(H, params), lay, p1, nb


def _thermal_start(layout: SubsystemLayout, params: SystemParams) -> QuantumState:
    """Emitter excited, optics empty, mechanical slots thermal at n_th."""
    factors = {M.EMITTER: np.diag([0.0, 1.0]).astype(complex)}
    for sub in layout.subsystems:
        if M._is_mechanical(sub.name):
            factors[sub.name] = np.diag(thermal_populations(sub.dim, params.n_th)).astype(complex)
    return product_density(layout, factors)


def run_pumped_swap(params: SystemParams, protocol: SwapProtocol | None = None, n_cav: float = 5e4, *,
                    resonance: str = "dressed", model: str = "three-cavity", dims: dict | None = None,
                    max_excitations: int | None = None, release: bool = True,
                    solver: dict | None = None) -> PumpedSwapResult:
    """Emitter-phonon swap with the antisymmetric supermode pumped to ``n_cav``.

    The search stage records ``phonon_p1`` (single-phonon population),
    ``phonon`` and ``emitter`` while the pump is on; the release stage
    continues from the switch-off state with the pump off and measures the
    phonon decay rate.
    """
    if n_cav <= 0:
        raise ValueError("n_cav must be > 0 for a pumped swap")
    protocol = protocol or SwapProtocol()
    p = at_resonance(params, resonance)
    H, lay, p1, nb = _displaced_setup(p, n_cav, model, dims, max_excitations)
    gamma = mfc_rate(p.g, p.g0, p.J)
    t_half = float(np.pi / (2.0 * gamma * np.sqrt(n_cav)))
    times = protocol.window(t_half)
    obs = {"phonon_p1": p1, "phonon": nb, "emitter": emitter_population(lay)}

    if p.n_th > 0:
        start = _thermal_start(lay, p)
    else:
        start = basis_state(lay, {M.EMITTER: 1})
        if not H.is_closed:
            start = start.to_mixed()

    if protocol.pump == "transient":
        on = _pump_schedule(n_cav, p.kappa, p.J, 0.0, protocol.transient_span, True)
    else:
        on = Schedule.constant(n_cav, 0.0)
    solver = solver or {}
    search = evolve(H, start, times, obs, on, store_states=True, **solver)
    p1_trace = search.real("phonon_p1")
    i_off = int(np.argmax(p1_trace)) if protocol.switch_off == "search" else len(times) - 1
    t_off = float(times[i_off])
    metrics = {
        "n_cav": n_cav,
        "gamma_rad_per_ns": gamma,
        "t_half_predicted_ns": t_half,
        "t_off_ns": t_off,
        "fidelity": float(p1_trace[i_off]),
        "n_b_at_switch_off": float(search.real("phonon")[i_off]),
        "emitter_at_switch_off": float(search.real("emitter")[i_off]),
        "detuning_rad_per_ns": p.detuning,
        "pump": protocol.pump,
        "resonance": resonance,
    }
    rel = off = None
    if release:
        state = search.states[i_off]
        span = protocol.release_time
        if span is None:
            span = 1.0 / p.Gamma_M if p.Gamma_M > 0 else 100.0
        t_rel = t_off + np.linspace(0.0, span, protocol.release_points)
        if protocol.pump == "transient":
            amp = float(np.sqrt(on.value_at(t_off) / 2.0))
            off = _pump_schedule(n_cav, p.kappa, p.J, t_off, protocol.transient_span, False, amp)
        else:
            off = Schedule.constant(0.0, t_off)
        if state.is_pure and not H.is_closed:
            state = state.to_mixed()
        rel = evolve(H, state, t_rel, obs, off, **solver)
        rate = phonon_decay_rate(rel.times, rel.real("phonon"), p.n_th,
                                 skip=min(10.0 / p.Gamma if p.Gamma > 0 else 0.0, 0.2 * span))
        metrics["phonon_decay_rate"] = rate
        metrics["Gamma_M"] = p.Gamma_M
        metrics["decay_rate_ratio"] = rate / p.Gamma_M if p.Gamma_M > 0 else float("nan")
    search.states = None
    return PumpedSwapResult(search, rel, metrics, protocol, on, off)


def phonon_decay_rate(times: np.ndarray, n_b: np.ndarray, n_th: float = 0.0, skip: float = 0.0) -> float:
    """Exponential rate of ``n_b - n_th`` by a log-linear least-squares fit,
    ignoring the first ``skip`` ns."""
    t = np.asarray(times) - times[0]
    excess = np.asarray(n_b) - n_th
    mask = (t >= skip) & (excess > 0)
    if mask.sum() < 2:
        raise ValueError("not enough points above the thermal level to fit a decay rate")
    slope, _ = np.polyfit(t[mask], np.log(excess[mask]), 1)
    return float(-slope)


def swap_fidelity(result, protocol: SwapProtocol | None = None, label: str = "phonon_p1",
                  slot: str = "phonon") -> float:
    """Single-phonon population at switch-off.

    ``result`` may be a density matrix/state (then ``Tr[rho |1><1|]`` on
    ``slot``), an :class:`EvolutionResult` carrying ``label`` (maximum over
    the grid for a search protocol, last point for a fixed one) or a
    :class:`PumpedSwapResult`.
    """
    if isinstance(result, PumpedSwapResult):
        return result.metrics["fidelity"]
    if isinstance(result, QuantumState):
        return float(expectation(result, fock_projector(result.layout, slot, 1)).real)
    if isinstance(result, EvolutionResult):
        if label not in result.expectations:
            raise KeyError(f"evolution result has no {label!r} trace")
        trace = result.real(label)
        protocol = protocol or SwapProtocol()
        if protocol.switch_off == "fixed":
            i = int(np.argmin(np.abs(result.times - protocol.t_off)))
            return float(trace[i])
        return float(trace.max())
    raise TypeError(f"cannot take a swap fidelity of {type(result).__name__}")


# scans -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Axis:
    name: str
    values: tuple
    scale: str = "log"

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise ValueError("axis scale must be linear or log")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not all(np.isfinite(self.values)):
            raise ValueError(f"axis {self.name} has non-finite values")


@dataclass
class ScanResult:
    axes: tuple[Axis, ...]
    metric: str
    values: np.ndarray
    valid: np.ndarray
    diagnostics: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(len(a.values) for a in self.axes)
        if self.values.shape != shape or self.valid.shape != shape:
            raise ValueError(f"scan grid shape {self.values.shape} does not match axes {shape}")
        if not np.all(np.isfinite(self.values[self.valid])):
            raise ValueError("valid scan points must have finite metrics")
        if self.metric == "fidelity" and np.any(self.values[self.valid] > 1 + 1e-9):
            raise ValueError("fidelity above 1")

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 1.0

    def rows(self):
        """(axis values..., metric, valid) in C order of the grid."""
        for idx in np.ndindex(*self.shape):
            coords = tuple(ax.values[i] for ax, i in zip(self.axes, idx))
            yield coords + (float(self.values[idx]), bool(self.valid[idx]))


def _make_axes(axes) -> tuple[Axis, ...]:
    out = []
    for a in axes:
        out.append(a if isinstance(a, Axis) else Axis(a[0], a[1], a[2] if len(a) > 2 else "log"))
    return tuple(out)


def _run_points(fn: Callable, tasks: list, jobs: int, progress: Callable | None = None) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        out = []
        for i, t in enumerate(tasks):
            out.append(fn(t))
            if progress:
                progress(i + 1, len(tasks))
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        out = []
        for i, res in enumerate(pool.map(fn, tasks)):
            out.append(res)
            if progress:
                progress(i + 1, len(tasks))
        return out


def _fidelity_point(task) -> tuple[float, bool, dict]:
    params, n_cav, protocol, resonance, model, dims, cap, solver = task
    try:
        res = run_pumped_swap(params, protocol, n_cav, resonance=resonance, model=model, dims=dims,
                              max_excitations=cap, release=False, solver=solver)
    except IntegrityError:
        raise
    except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
        return float("nan"), False, {"error": str(exc)}
    d = res.search.diagnostics
    return res.metrics["fidelity"], True, {
        "t_off_ns": res.metrics["t_off_ns"],
        "max_trace_error": d["max_trace_error"],
        "min_eigenvalue": d["min_eigenvalue"],
    }


def swap_fidelity_scan(params: SystemParams, axes, *, n_cav: float = 5e4, protocol: SwapProtocol | None = None,
                       resonance: str = "dressed", model: str = "three-cavity", dims: dict | None = None,
                       max_excitations: int | None = None, jobs: int = 1, solver: dict | None = None,
                       progress: Callable | None = None) -> ScanResult:
    """Swap fidelity over two of ``Gamma, kappa, n_cav, Gamma_star, J_M, Gamma_M``.

    Axis values are absolute (rad/ns for rates, photons for ``n_cav``).
    """
    axes = _make_axes(axes)
    if len(axes) != 2:
        raise ValueError("a fidelity scan needs exactly two axes")
    for ax in axes:
        if ax.name not in FIDELITY_AXES:
            raise ValueError(f"unknown fidelity axis {ax.name!r}; choose from {FIDELITY_AXES}")
    if axes[0].name == axes[1].name:
        raise ValueError("scan axes must differ")
    protocol = protocol or SwapProtocol()
    tasks = []
    for idx in np.ndindex(*(len(a.values) for a in axes)):
        p, n = params, n_cav
        for ax, i in zip(axes, idx):
            if ax.name == "n_cav":
                n = ax.values[i]
            else:
                p = p.replace(**{ax.name: ax.values[i]})
        tasks.append((p, n, protocol, resonance, model, dims, max_excitations, solver))
    results = _run_points(_fidelity_point, tasks, jobs, progress)
    shape = tuple(len(a.values) for a in axes)
    values = np.array([r[0] for r in results]).reshape(shape)
    valid = np.array([r[1] for r in results]).reshape(shape)
    gamma = mfc_rate(params.g, params.g0, params.J)
    meta = {
        "n_cav": n_cav,
        "model": model,
        "resonance": resonance,
        "guide_Gamma_equals_gamma_sqrt_ncav": gamma * np.sqrt(n_cav),
        "guide_kappa_threshold": parasitic_kappa_threshold(params.g, params.g0, params.J, n_cav),
    }
    return ScanResult(axes, "fidelity", values, valid, [r[2] for r in results], meta)


def cooling_model(params: SystemParams, n_cav: float, *, phonon_dim: int = 15, cavity_dim: int = 2,
                  resonance: str = "dressed") -> M.LindbladModel:
    """Displaced three-cavity model with all losses at constant pump ``n_cav``."""
    p = at_resonance(params, resonance)
    lay = M.three_cavity_layout(cav_L=cavity_dim, cav_T=cavity_dim, cav_R=cavity_dim, phonon=phonon_dim)
    return M.with_losses(M.build_displaced_three_cavity_hamiltonian(p, n_cav, lay), p)


def steady_phonon_number(params: SystemParams, n_cav: float, *, phonon_dim: int = 15, cavity_dim: int = 2,
                         resonance: str = "dressed", **solver) -> tuple[float, dict]:
    model = cooling_model(params, n_cav, phonon_dim=phonon_dim, cavity_dim=cavity_dim, resonance=resonance)
    rho = steady_state(model, **solver)
    nb = float(expectation(rho, number(model.layout, "phonon")).real)
    pops = partial_populations(rho, "phonon")
    return nb, {**rho.info, "phonon_dim": phonon_dim, "cavity_dim": cavity_dim,
                "top_level_population": float(pops[-1])}


def _grown_dims(start: int, largest: int) -> list[int]:
    dims = [start]
    while dims[-1] < largest:
        dims.append(min(largest, int(np.ceil(1.5 * dims[-1]))))
    return dims


def _cooling_point(task) -> tuple[float, bool, dict]:
    """Solve one grid point, enlarging the phonon space (by 1.5x, up to
    ``max_dim``) while the top Fock level holds more than ``top_tol``."""
    params, n_cav, phonon_dim, max_dim, top_tol, cavity_dim, resonance, solver = task
    try:
        for d in _grown_dims(phonon_dim, max(max_dim, phonon_dim)):
            nb, info = steady_phonon_number(params, n_cav, phonon_dim=d, cavity_dim=cavity_dim,
                                            resonance=resonance, **(solver or {}))
            if info["top_level_population"] <= top_tol:
                break
    except IntegrityError:
        raise
    except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
        return float("nan"), False, {"error": str(exc)}
    info["truncation_converged"] = info["top_level_population"] <= top_tol
    return nb, True, info


def cooling_scan(params: SystemParams, Gamma_grid: Sequence[float], n_cav_grid: Sequence[float], *,
                 phonon_dim: int = 15, cavity_dim: int = 2, max_phonon_dim: int = 32,
                 top_population_tol: float = 1e-3, guard_phonon_dim: int | None = 32,
                 resonance: str = "dressed", jobs: int = 1, solver: dict | None = None,
                 cavity_check: bool = False, progress: Callable | None = None) -> ScanResult:
    """Steady-state phonon number over emitter decay ``Gamma`` (rad/ns) and
    pump population ``n_cav``.

    Each point starts at ``phonon_dim`` Fock states and is re-solved in a
    larger space while the top level holds more than ``top_population_tol``
    (hot points need far more levels than cooled ones).  A guard point at
    ``n_cav = 0`` is always solved with ``guard_phonon_dim`` and must
    reproduce ``n_th`` within 1 %.  With ``cavity_check`` the most strongly
    pumped point (largest n_cav, smallest Gamma) is re-solved with one more
    level per cavity and the change is reported in ``metadata``.
    """
    if params.Gamma_M <= 0:
        raise ValueError("cooling needs Gamma_M > 0")
    if params.n_th < 0:
        raise ValueError("n_th must be >= 0")
    axes = (Axis("Gamma", Gamma_grid), Axis("n_cav", n_cav_grid))
    tasks = [(params.replace(Gamma=G), n, phonon_dim, max_phonon_dim, top_population_tol, cavity_dim,
              resonance, solver)
             for G in axes[0].values for n in axes[1].values]
    if guard_phonon_dim is not None:
        tasks.append((params.replace(Gamma=axes[0].values[0]), 0.0, guard_phonon_dim, guard_phonon_dim, np.inf,
                      cavity_dim, resonance, solver))
    results = _run_points(_cooling_point, tasks, jobs, progress)
    meta = {"phonon_dim": phonon_dim, "max_phonon_dim": max_phonon_dim, "top_population_tol": top_population_tol,
            "cavity_dim": cavity_dim, "n_th": params.n_th, "resonance": resonance}
    if guard_phonon_dim is not None:
        g_val, g_ok, _ = results.pop()
        meta["guard"] = {
            "n_cav": 0.0,
            "phonon_dim": guard_phonon_dim,
            "value": g_val,
            "passed": bool(g_ok and abs(g_val - params.n_th) <= 0.01 * max(params.n_th, 1e-12)),
        }
    shape = (len(axes[0].values), len(axes[1].values))
    values = np.array([r[0] for r in results]).reshape(shape)
    valid = np.array([r[1] for r in results]).reshape(shape)
    if cavity_check:
        i, j = 0, int(np.argmax(axes[1].values))
        ref = results[i * shape[1] + j]
        check = {"Gamma": axes[0].values[i], "n_cav": axes[1].values[j], "cavity_dim": cavity_dim + 1,
                 "reference": float(values[i, j])}
        if ref[1]:
            d = ref[2]["phonon_dim"]
            val, ok, _ = _cooling_point((params.replace(Gamma=axes[0].values[i]), axes[1].values[j], d, d, np.inf,
                                         cavity_dim + 1, resonance, solver))
            check["value"] = val
            check["relative_change"] = abs(val - values[i, j]) / max(abs(values[i, j]), 1e-300) if ok else None
        meta["cavity_convergence"] = check
    return ScanResult(axes, "n_b", values, valid, [r[2] for r in results], meta)


# mechanical supermodes -------------------------------------------------------------

@dataclass
class MechValidationResult:
    full: EvolutionResult
    reduced: EvolutionResult
    metrics: dict


def mech_supermode_validation(params: SystemParams, pumped: bool = False, *, n_cav: float = 5e4,
                              resonance: str = "dressed", t_end: float | None = None,
                              n_points: int = 1201, solver: dict | None = None) -> MechValidationResult:
    """Full model with three resonators against the single-supermode model.

    Both start from the excited emitter with everything else empty and use
    the same emitter detuning.  The full model's traces are post-processed
    into the supermodes b0, b+, b-.
    """
    if params.J_M <= 0:
        raise ValueError("mechanical validation needs J_M > 0")
    p = at_resonance(params, resonance)
    gamma = mfc_rate(p.g, p.g0, p.J)
    if t_end is None:
        t_end = np.pi / gamma if not pumped else 2.0 * np.pi / (2.0 * gamma * np.sqrt(n_cav))
    times = np.linspace(0.0, t_end, n_points)

    lay_f = M.full_mech_layout()
    if pumped:
        full = M.build_displaced_full_mech_hamiltonian(p, n_cav, lay_f)
    else:
        full = M.build_three_cavity_full_mech_hamiltonian(p, lay_f)
    full = M.with_losses(full, p)
    sup = mechanical_supermodes(lay_f)
    obs_f = {f"n_{k}": op.dag() @ op for k, op in sup.items()}
    for s in ("mech_L", "mech_T", "mech_R"):
        obs_f[f"n_{s}"] = number(lay_f, s)
    obs_f["emitter"] = emitter_population(lay_f)
    start_f = basis_state(lay_f, {M.EMITTER: 1})
    solver = solver or {}
    r_full = evolve(full, start_f if full.is_closed else start_f.to_mixed(), times, obs_f, **solver)

    lay_r = M.three_cavity_layout()
    if pumped:
        red = M.build_displaced_three_cavity_hamiltonian(p, n_cav, lay_r)
    else:
        red = M.build_three_cavity_hamiltonian(p, lay_r)
    red = M.with_losses(red, p)
    obs_r = {"phonon": number(lay_r, "phonon"), "emitter": emitter_population(lay_r)}
    start_r = basis_state(lay_r, {M.EMITTER: 1})
    r_red = evolve(red, start_r if red.is_closed else start_r.to_mixed(), times, obs_r, **solver)

    metrics = {
        "max_b_plus": float(np.max(np.abs(r_full.real("n_b_plus")))),
        "max_b_minus": float(np.max(np.abs(r_full.real("n_b_minus")))),
        "max_b_T": float(np.max(np.abs(r_full.real("n_mech_T")))),
        "max_LR_asymmetry": float(np.max(np.abs(r_full.real("n_mech_L") - r_full.real("n_mech_R")))),
        "max_b0_vs_reduced": float(np.max(np.abs(r_full.real("n_b0") - r_red.real("phonon")))),
        "max_b0": float(np.max(r_full.real("n_b0"))),
        "pumped": pumped,
    }
    return MechValidationResult(r_full, r_red, metrics)


# coupled-mode curves -----------------------------------------------------------------

def cmt_curves(J: float, ratios: Sequence[float], g: float = 1.0) -> dict[str, np.ndarray]:
    """Supermode frequencies and emitter couplings versus ``delta/J`` for
    both geometries (couplings normalised to ``g``)."""
    rows: dict[str, list] = {k: [] for k in (
        "delta_over_J", "two_omega_plus", "two_omega_minus", "two_g_plus", "two_g_minus",
        "three_omega_zero", "three_omega_plus", "three_omega_minus", "three_g_zero", "epsilon", "beta",
        "eta", "mu")}
    for r in ratios:
        t2 = two_cavity_supermodes(r * J, J)
        t3 = three_cavity_supermodes(r * J, J)
        gp, gm = t2.couplings(g)
        vals = (r, t2.omega_plus, t2.omega_minus, gp / g, gm / g, t3.omega_zero, t3.omega_plus,
                t3.omega_minus, t3.coupling_zero(g) / g, t3.epsilon, t3.beta, t3.eta, t3.mu)
        for k, v in zip(rows, vals):
            rows[k].append(v)
    return {k: np.array(v, dtype=float) for k, v in rows.items()}
