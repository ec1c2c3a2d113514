"""Superoperators, time propagation and steady states of Lindblad models.

Density matrices are vectorized by stacking columns, ``vec(rho)[i + j*N] =
rho[i, j]``, so that ``vec(A X B) = (B^T kron A) vec(X)`` and

    L = -i (I kron H - H^T kron I)
        + sum_k (r_k/2) [2 conj(c_k) kron c_k - I kron c_k^+c_k - (c_k^+c_k)^T kron I].
"""

from __future__ import annotations

import logging
import time as _time
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .models import LindbladModel, ModelError
from .operators import LayoutError, QOperator, QuantumState, SubsystemLayout

log = logging.getLogger(__name__)

TRACE_TOL = 1e-7
HERMITICITY_TOL = 1e-8
POSITIVITY_TOL = -1e-6


class SolverError(RuntimeError):
    """Propagation or linear-solve failure; ``t_reached`` is the last good time."""

    def __init__(self, message: str, t_reached: float | None = None):
        super().__init__(message if t_reached is None else f"{message} (reached t = {t_reached:.6g} ns)")
        self.t_reached = t_reached


class SteadyStateError(SolverError):
    pass


class IntegrityError(SolverError):
    """A finished run violated trace, Hermiticity or positivity bounds."""


@dataclass(frozen=True)
class Superoperator:
    layout: SubsystemLayout
    matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        n = self.layout.total_dim
        return (self.matrix @ rho.reshape(-1, order="F")).reshape(n, n, order="F")

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _hamiltonian_part(H: sp.spmatrix) -> sp.csr_matrix:
    eye = sp.identity(H.shape[0], dtype=complex, format="csr")
    return (-1j * (sp.kron(eye, H) - sp.kron(H.T, eye))).tocsr()


def _dissipator(rate: float, c: sp.spmatrix) -> sp.csr_matrix:
    eye = sp.identity(c.shape[0], dtype=complex, format="csr")
    cdc = (c.conj().T @ c).tocsr()
    return (0.5 * rate * (2.0 * sp.kron(c.conj(), c) - sp.kron(eye, cdc) - sp.kron(cdc.T, eye))).tocsr()


def _liouvillian_parts(model: LindbladModel) -> tuple[sp.csr_matrix, sp.csr_matrix | None]:
    """Static generator and the generator of the channel operator (per unit coefficient)."""
    for _, c in model.collapse_terms:
        if c.layout != model.layout:
            raise LayoutError("collapse operator layout differs from the Hamiltonian layout")
    L0 = _hamiltonian_part(model.static_hamiltonian.matrix)
    for rate, c in model.collapse_terms:
        if rate > 0:
            L0 = L0 + _dissipator(rate, c.matrix)
    L1 = None
    if model.channel is not None:
        L1 = _hamiltonian_part(model.channel.operator.matrix)
    return L0.tocsr(), L1


def build_liouvillian(model: LindbladModel, value: float | None = None) -> Superoperator:
    """Generator of the master equation, with the channel (if any) at ``value``
    or at the model's own channel value."""
    L0, L1 = _liouvillian_parts(model)
    if L1 is not None:
        v = model.channel.value if value is None else value
        L0 = (L0 + model.channel.coefficient(v) * L1).tocsr()
    return Superoperator(model.layout, L0)


# schedules --------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant scalar channel value.

    ``segments`` is an ordered list of ``(t_start, value)``; each value holds
    until the next start.  With ``rise_time`` set, every change of value is
    instead an exponential approach with that time constant, sampled as
    piecewise-constant steps of ``rise_time * ramp_step`` over
    ``ramp_span`` time constants.
    """

    segments: tuple[tuple[float, float], ...]
    rise_time: float | None = None
    ramp_step: float = 0.1
    ramp_span: float = 30.0
    _steps: tuple = field(init=False, repr=False, compare=False)
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        starts = [s for s, _ in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("schedule segment starts must be strictly increasing")
        if any(not np.isfinite(v) for _, v in self.segments):
            raise ValueError("schedule values must be finite")
        if self.rise_time is not None and self.rise_time <= 0:
            raise ValueError("rise_time must be > 0")
        object.__setattr__(self, "segments", tuple((float(s), float(v)) for s, v in self.segments))
        object.__setattr__(self, "_steps", self._discretize())
        object.__setattr__(self, "_starts", np.array([s for s, _ in self._steps]))

    @classmethod
    def constant(cls, value: float, t0: float = 0.0) -> "Schedule":
        return cls(((t0, value),))

    @classmethod
    def step(cls, t_switch: float, before: float, after: float, t0: float = 0.0) -> "Schedule":
        if t_switch <= t0:
            return cls.constant(after, t0)
        return cls(((t0, before), (t_switch, after)))

    @classmethod
    def from_samples(cls, times: Sequence[float], values: Sequence[float], merge_rtol: float = 0.0,
                     merge_atol: float = 0.0) -> "Schedule":
        """Sampled profile.  A sample within ``max(merge_atol, merge_rtol*|v|)``
        of the running segment value is merged into that segment."""
        segs: list[tuple[float, float]] = []
        for t, v in zip(times, values):
            if segs and abs(v - segs[-1][1]) <= max(merge_atol, merge_rtol * max(abs(segs[-1][1]), abs(v))):
                continue
            segs.append((float(t), float(v)))
        return cls(tuple(segs))

    @property
    def start(self) -> float:
        return self.segments[0][0]

    def discretized(self) -> tuple[tuple[float, float], ...]:
        return self._steps

    def _discretize(self) -> tuple[tuple[float, float], ...]:
        if self.rise_time is None:
            return self.segments
        tau = self.rise_time
        out: list[tuple[float, float]] = [self.segments[0]]
        current = self.segments[0][1]
        bounds = [s for s, _ in self.segments[1:]] + [np.inf]
        for (start, target), end in zip(self.segments[1:], bounds[1:]):
            begin = current
            n_steps = int(np.ceil(self.ramp_span / self.ramp_step))
            for k in range(n_steps):
                t = start + k * self.ramp_step * tau
                if t >= end:
                    break
                # value at the middle of each sampling step
                frac = 1.0 - np.exp(-(k + 0.5) * self.ramp_step)
                current = begin + (target - begin) * frac
                out.append((t, current))
            else:
                t = start + n_steps * self.ramp_step * tau
                if t < end:
                    current = target
                    out.append((t, target))
        return tuple(out)

    def value_at(self, t: float) -> float:
        idx = int(np.searchsorted(self._starts, t, side="right")) - 1
        return self._steps[max(idx, 0)][1]

    def change_points(self) -> list[float]:
        return [s for s, _ in self.discretized()]


# evolution ---------------------------------------------------------------------

@dataclass
class EvolutionResult:
    times: np.ndarray
    expectations: dict[str, np.ndarray]
    diagnostics: dict = field(default_factory=dict)
    states: list[QuantumState] | None = None
    final_state: QuantumState | None = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for k, v in self.expectations.items():
            if len(v) != len(self.times):
                raise ValueError(f"series {k} has wrong length")

    def __getitem__(self, label: str) -> np.ndarray:
        return self.expectations[label]

    def real(self, label: str) -> np.ndarray:
        return np.real(self.expectations[label])


def _observable_dict(observables) -> dict[str, QOperator]:
    if observables is None:
        return {}
    if isinstance(observables, Mapping):
        return dict(observables)
    return {f"obs{i}": op for i, op in enumerate(observables)}


def _intervals(times: np.ndarray, schedule: Schedule | None, default: float | None):
    """Split [times[0], times[-1]] at every grid and schedule point.

    Returns ``(a, b, value, grid_index_or_None)`` where the index marks an
    interval ending on the output grid.
    """
    points = {float(t): i for i, t in enumerate(times)}
    cuts = set(points)
    if schedule is not None:
        cuts.update(t for t in schedule.change_points() if times[0] < t < times[-1])
    cuts = sorted(cuts)
    out = []
    for a, b in zip(cuts, cuts[1:]):
        v = schedule.value_at(a) if schedule is not None else default
        out.append((a, b, v, points.get(b)))
    return out


def _dt_key(dt: float) -> float:
    return float(f"{dt:.12g}")


def _positivity(rho: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())


def evolve(model: LindbladModel, initial: QuantumState, times, observables=None,
           schedule: Schedule | None = None, *, method: str = "auto", rtol: float = 1e-8,
           atol: float = 1e-10, store_states: bool = False, check: bool = True,
           max_dense_dim: int = 4096, positivity_samples: int = 16) -> EvolutionResult:
    """Propagate ``initial`` over ``times`` and record observable expectations.

    ``method`` is ``"auto"``, ``"eig"`` (lossless pure-state evolution by
    eigendecomposition of H), ``"expm"`` (dense propagators, cached per
    channel value and step) or ``"ode"`` (adaptive DOP853 on the vectorized
    master equation).  ``"auto"`` uses ``eig`` for closed pure problems and
    otherwise mixes ``expm`` for repeated steps with ``ode`` for one-off
    intervals.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1-D grid")
    if initial.layout != model.layout:
        raise LayoutError("initial state layout differs from model layout")
    obs = _observable_dict(observables)
    for label, op in obs.items():
        if op.layout != model.layout:
            raise LayoutError(f"observable {label} layout differs from model layout")
    if method not in ("auto", "eig", "expm", "ode"):
        raise ValueError(f"unknown method {method}")
    if schedule is not None:
        if model.channel is None:
            raise ModelError("schedule given but the model declares no channel")
        if schedule.start > times[0]:
            raise ValueError("schedule must start at or before the first time point")
    default = model.channel.value if model.channel is not None else None
    if model.channel is not None and schedule is None:
        schedule = Schedule.constant(default, float(times[0]))

    t_start = _time.perf_counter()
    use_eig = method == "eig" or (method == "auto" and model.is_closed and initial.is_pure)
    if use_eig:
        if not model.is_closed:
            raise ModelError("eigendecomposition propagation needs a closed model")
        if not initial.is_pure:
            raise ModelError("eigendecomposition propagation needs a pure initial state")
        result = _evolve_eig(model, initial, times, obs, schedule, store_states)
    else:
        result = _evolve_open(model, initial, times, obs, schedule, method, rtol, atol,
                              store_states, max_dense_dim, positivity_samples)
    result.diagnostics["wall_time_s"] = _time.perf_counter() - t_start
    if check:
        _enforce(result)
    return result


def _enforce(result: EvolutionResult):
    d = result.diagnostics
    if d["max_trace_error"] > TRACE_TOL:
        raise IntegrityError(f"trace error {d['max_trace_error']:.3g} exceeds {TRACE_TOL}")
    if d.get("max_hermiticity_error", 0.0) > HERMITICITY_TOL:
        raise IntegrityError(f"hermiticity error {d['max_hermiticity_error']:.3g} exceeds {HERMITICITY_TOL}")
    if d.get("min_eigenvalue", 0.0) < POSITIVITY_TOL:
        raise IntegrityError(f"positivity margin {d['min_eigenvalue']:.3g} below {POSITIVITY_TOL}")


def _hamiltonian_matrix(model: LindbladModel, value) -> np.ndarray:
    H = model.static_hamiltonian if value is None else model.hamiltonian_at(value)
    return H.dense()


def _evolve_eig(model, initial, times, obs, schedule, store_states) -> EvolutionResult:
    psi = np.asarray(initial.data, dtype=complex).copy()
    ops = {k: op.matrix for k, op in obs.items()}
    series = {k: np.empty(len(times), dtype=complex) for k in ops}
    states = [] if store_states else None
    norm_err = np.zeros(len(times))
    cache: dict = {}

    def record(i, psi):
        for k, m in ops.items():
            series[k][i] = np.vdot(psi, m @ psi)
        norm_err[i] = abs(np.vdot(psi, psi).real - 1.0)
        if states is not None:
            states.append(QuantumState(model.layout, psi.copy(), validate=False))

    record(0, psi)
    default = model.channel.value if model.channel is not None else None
    for a, b, v, idx in _intervals(times, schedule, default):
        if v not in cache:
            energies, vecs = np.linalg.eigh(_hamiltonian_matrix(model, v))
            cache[v] = (energies, vecs)
        energies, vecs = cache[v]
        psi = vecs @ (np.exp(-1j * energies * (b - a)) * (vecs.conj().T @ psi))
        if idx is not None:
            record(idx, psi)
    diagnostics = {
        "method": "eig",
        "trace_error": norm_err,
        "max_trace_error": float(norm_err.max()),
        "max_hermiticity_error": 0.0,
        "min_eigenvalue": 0.0,
        "n_diagonalizations": len(cache),
    }
    return EvolutionResult(times, series, diagnostics, states,
                           QuantumState(model.layout, psi, validate=False))


def _evolve_open(model, initial, times, obs, schedule, method, rtol, atol, store_states,
                 max_dense_dim, positivity_samples) -> EvolutionResult:
    layout = model.layout
    n = layout.total_dim
    rho0 = initial.density_matrix()
    y = rho0.reshape(-1, order="F").astype(complex)
    L0, L1 = _liouvillian_parts(model)
    # Tr(O rho) = vec(O^T) . vec(rho)
    labels = list(obs)
    W = sp.vstack([sp.csr_matrix(obs[k].matrix.T.reshape((1, n * n), order="F")) for k in labels],
                  format="csr") if labels else None

    default = model.channel.value if model.channel is not None else None
    intervals = _intervals(times, schedule, default)
    counts = Counter((_dt_key(b - a), v) for a, b, v, _ in intervals)
    dense_ok = n * n <= max_dense_dim

    sample_idx = set(np.unique(np.linspace(0, len(times) - 1, max(positivity_samples, 1)).round().astype(int)))
    series = np.empty((len(labels), len(times)), dtype=complex)
    trace_err = np.zeros(len(times))
    herm_err = 0.0
    min_eig = np.inf
    states = [] if store_states else None
    generators: dict = {}
    propagators: dict = {}
    stats = {"expm_steps": 0, "ode_intervals": 0, "nfev": 0, "n_propagators": 0}

    def generator(v):
        if v not in generators:
            generators[v] = L0 if L1 is None else (L0 + model.channel.coefficient(v) * L1).tocsr()
        return generators[v]

    def record(i, y):
        nonlocal herm_err, min_eig
        if W is not None:
            series[:, i] = W @ y
        rho = y.reshape(n, n, order="F")
        trace_err[i] = abs(np.trace(rho) - 1.0)
        herm_err = max(herm_err, float(np.abs(rho - rho.conj().T).max()))
        if i in sample_idx:
            min_eig = min(min_eig, _positivity(rho))
        if states is not None:
            states.append(QuantumState(layout, rho.copy(), validate=False))

    record(0, y)
    for a, b, v, idx in intervals:
        key = (_dt_key(b - a), v)
        use_expm = dense_ok and (method == "expm" or (method == "auto" and counts[key] >= 3))
        if use_expm:
            if key not in propagators:
                propagators[key] = la.expm(generator(v).toarray() * key[0])
                stats["n_propagators"] += 1
            y = propagators[key] @ y
            stats["expm_steps"] += 1
        else:
            Lv = generator(v)
            sol = solve_ivp(lambda t, x: Lv @ x, (0.0, b - a), y, method="DOP853",
                            rtol=rtol, atol=atol)
            stats["ode_intervals"] += 1
            stats["nfev"] += sol.nfev
            if not sol.success:
                reached = a + (sol.t[-1] if len(sol.t) else 0.0)
                raise SolverError(f"integrator failed: {sol.message}", reached)
            y = sol.y[:, -1]
        if not np.all(np.isfinite(y)):
            raise SolverError("non-finite state", a)
        if idx is not None:
            record(idx, y)

    diagnostics = {
        "method": method,
        "trace_error": trace_err,
        "max_trace_error": float(trace_err.max()),
        "max_hermiticity_error": herm_err,
        "min_eigenvalue": float(min_eig),
        **stats,
    }
    final = QuantumState(layout, y.reshape(n, n, order="F").copy(), validate=False)
    return EvolutionResult(times, {k: series[i] for i, k in enumerate(labels)}, diagnostics, states, final)


# steady state ------------------------------------------------------------------

def _bordered(L: sp.csr_matrix, n: int) -> tuple[sp.csc_matrix, np.ndarray]:
    """Replace the row of d(rho_00)/dt by the trace functional."""
    A = L.tolil(copy=True)
    trace_row = np.zeros(n * n, dtype=complex)
    trace_row[:: n + 1] = 1.0
    A[0, :] = trace_row
    rhs = np.zeros(n * n, dtype=complex)
    rhs[0] = 1.0
    return A.tocsc(), rhs


def steady_state(model: LindbladModel, value: float | None = None, *, method: str = "auto",
                 drop_tol: float = 3e-3, fill_factor: float = 20.0, gmres_rtol: float = 1e-12,
                 max_restarts: int = 50, residual_factor: float = 1e-9) -> QuantumState:
    """Unique stationary state from the bordered linear system.

    ``method`` is ``"dense"``, ``"direct"`` (sparse LU), ``"iterative"``
    (incomplete-LU preconditioned GMRES) or ``"auto"``, which picks by size.
    The solution is accepted only if ``max|L vec(rho)| <= residual_factor *
    max|L|``.
    """
    L = build_liouvillian(model, value).matrix
    n = model.layout.total_dim
    A, rhs = _bordered(L, n)
    size = n * n
    if method == "auto":
        method = "dense" if size <= 4096 else ("direct" if size <= 16384 else "iterative")
    info: dict = {"method": method}
    t0 = _time.perf_counter()
    try:
        if method == "dense":
            x = np.linalg.solve(A.toarray(), rhs)
        elif method == "direct":
            x = spla.spsolve(A, rhs)
        elif method == "iterative":
            x = None
            # an aggressive drop tolerance can leave an exactly zero pivot or a
            # preconditioner too weak for GMRES; retry with tighter ones
            for tol in drop_tol * np.array([1.0, 1 / 3, 1e-1, 1 / 30, 1e-3]):
                try:
                    ilu = spla.spilu(A, drop_tol=tol, fill_factor=fill_factor, permc_spec="NATURAL")
                except RuntimeError as exc:
                    info.setdefault("ilu_failures", []).append(f"drop_tol {tol:.3g}: {exc}")
                    continue
                M = spla.LinearOperator(A.shape, ilu.solve, dtype=complex)
                y, code = spla.gmres(A, rhs, M=M, rtol=gmres_rtol, atol=0.0, restart=100,
                                     maxiter=max_restarts)
                if code != 0:
                    info.setdefault("ilu_failures", []).append(f"drop_tol {tol:.3g}: GMRES code {code}")
                    continue
                x = y
                info["drop_tol"] = float(tol)
                break
            if x is None:
                raise SteadyStateError("incomplete LU failed: " + "; ".join(info["ilu_failures"]))
        else:
            raise ValueError(f"unknown steady-state method {method}")
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        if isinstance(exc, SteadyStateError):
            raise
        raise SteadyStateError(f"steady-state linear solve failed: {exc}") from exc
    info["solve_time_s"] = _time.perf_counter() - t0
    if not np.all(np.isfinite(x)):
        raise SteadyStateError("steady-state solution is not finite (degenerate null space?)")
    rho = x.reshape(n, n, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    vec = rho.reshape(-1, order="F")
    residual = float(np.abs(L @ vec).max())
    scale = float(np.abs(L.data).max()) if L.nnz else 1.0
    info["residual"] = residual
    info["residual_bound"] = residual_factor * scale
    if residual > residual_factor * scale:
        raise SteadyStateError(f"steady-state residual {residual:.3g} exceeds {residual_factor * scale:.3g}")
    state = QuantumState(model.layout, rho)
    state.info = info
    return state
