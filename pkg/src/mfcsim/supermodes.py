"""Classical coupled-mode theory for the coupled-cavity systems.

Supermode coefficients are given for cavity offsets ``+delta`` on cavity L
and ``-delta`` on cavity R (so the coupled-mode matrices are
``[[delta, J], [J, -delta]]`` and ``[[delta, J, 0], [J, 0, J], [0, J, -delta]]``).
The Hamiltonians in :mod:`mfcsim.models` put ``-Delta`` on L, which is the
same geometry mirrored; pass ``delta = -Delta`` to get their eigenvectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .liouvillian import Schedule

SQRT2 = np.sqrt(2.0)

# rows: b0, b+, b- ; columns: b_L, b_T, b_R
MECH_TRANSFORM = np.array([
    [1 / SQRT2, 0.0, -1 / SQRT2],
    [0.5, 1 / SQRT2, 0.5],
    [0.5, -1 / SQRT2, 0.5],
])


def _require_positive(name: str, value: float):
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")


@dataclass(frozen=True)
class TwoCavitySupermodes:
    """``a+ = alpha a_L + beta a_R`` at ``+sqrt(J^2 + delta^2)`` and
    ``a- = beta a_L - alpha a_R`` at ``-sqrt(J^2 + delta^2)``."""

    delta: float
    J: float
    omega_plus: float
    omega_minus: float
    alpha: float
    beta: float

    def couplings(self, g: float) -> tuple[float, float]:
        """(g+, g-) for an emitter in cavity L."""
        return g * self.alpha, g * self.beta

    @property
    def vectors(self) -> np.ndarray:
        """Rows are a+ and a- in the (L, R) basis."""
        return np.array([[self.alpha, self.beta], [self.beta, -self.alpha]])


@dataclass(frozen=True)
class ThreeCavitySupermodes:
    """``a0 = -eps a_L + beta a_T + eps a_R`` (frequency 0),
    ``a+ = eta a_L - eps a_T + mu a_R`` and ``a- = mu a_L + eps a_T + eta a_R``
    at ``+/- sqrt(2 J^2 + delta^2)``."""

    delta: float
    J: float
    omega_zero: float
    omega_plus: float
    omega_minus: float
    epsilon: float
    beta: float
    eta: float
    mu: float

    def coupling_zero(self, g: float) -> float:
        """Coupling of an emitter in cavity T to a0."""
        return g * self.beta

    @property
    def vectors(self) -> np.ndarray:
        """Rows are a0, a+, a- in the (L, T, R) basis."""
        e, b, h, m = self.epsilon, self.beta, self.eta, self.mu
        return np.array([[-e, b, e], [h, -e, m], [m, e, h]])


def two_cavity_supermodes(delta: float, J: float) -> TwoCavitySupermodes:
    _require_positive("J", J)
    root = np.hypot(delta, J)
    # delta + root loses precision for large negative delta; use J^2/(root - delta)
    num = root + delta if delta >= 0 else J * J / (root - delta)
    norm = np.hypot(num, J)
    return TwoCavitySupermodes(delta, J, root, -root, num / norm, J / norm)


def _three_cavity_eta_mu(delta: float, J: float) -> tuple[float, float]:
    M = np.array([[delta, J, 0.0], [J, 0.0, J], [0.0, J, -delta]])
    vals, vecs = np.linalg.eigh(M)
    plus = vecs[:, 2]
    # fix the overall sign so the T component of a+ is -epsilon (< 0)
    if plus[1] > 0:
        plus = -plus
    return float(plus[0]), float(plus[2])


def three_cavity_supermodes(delta: float, J: float) -> ThreeCavitySupermodes:
    _require_positive("J", J)
    r = delta / J
    eps = 1.0 / np.sqrt(2.0 + r * r)
    beta = r * eps
    root = np.sqrt(2.0 * J * J + delta * delta)
    eta, mu = _three_cavity_eta_mu(delta, J)
    return ThreeCavitySupermodes(delta, J, 0.0, root, -root, eps, beta, eta, mu)


def mechanical_supermode_transform(b_L, b_T, b_R):
    """(b0, b+, b-) from the amplitudes of the three resonators."""
    b0 = (b_L - b_R) / SQRT2
    bp = b_T / SQRT2 + 0.5 * (b_L + b_R)
    bm = -b_T / SQRT2 + 0.5 * (b_L + b_R)
    return b0, bp, bm


def mfc_rate(g: float, g0: float, J: float) -> float:
    """Tripartite coupling rate ``g g0 / (2J)``."""
    _require_positive("J", J)
    return g * g0 / (2.0 * J)


def parasitic_decay_rate(g: float, kappa: float, J: float) -> float:
    """Emitter decay through each of the detuned supermodes a+ and a-, ``g^2 kappa / (4 J^2)``."""
    _require_positive("J", J)
    return g * g * kappa / (4.0 * J * J)


def parasitic_kappa_threshold(g: float, g0: float, J: float, n_cav: float) -> float:
    """Cavity loss at which the parasitic rate equals the pumped tripartite
    rate: ``kappa = 2 J g0 sqrt(n_cav) / g``."""
    _require_positive("g", g)
    return 2.0 * J * g0 * np.sqrt(n_cav) / g


def emitter_dispersive_shift(g: float, J: float, energy: float, kappa: float = 0.0) -> float:
    """Self-energy of an emitter in cavity T at ``energy`` (rotating frame):
    its off-resonant coupling g/sqrt2 to the supermodes at +/- sqrt2 J."""
    _require_positive("J", J)
    w = SQRT2 * J
    half = 0.5 * kappa
    s = 0.5 * g * g * (1.0 / (energy - w + 1j * half) + 1.0 / (energy + w + 1j * half))
    return float(s.real)


def dressed_resonance_detuning(Omega_M: float, g: float, J: float, sideband: int = +1,
                               kappa: float = 0.0) -> float:
    """Bare detuning ``omega_A - omega_c`` that puts the dressed emitter
    level at ``sideband * Omega_M``.

    In the single-excitation sector the dressed level E solves
    ``E = detuning + shift(E)``, so the required detuning is
    ``E - shift(E)`` with E fixed by the target.
    """
    target = sideband * Omega_M
    return target - emitter_dispersive_shift(g, J, target, kappa)


def fabry_perot_rate(g: float, g0: float, omega1: float) -> float:
    """Tripartite rate of a Fabry-Perot cavity with a moving mirror, ``pi g g0 / omega1``."""
    _require_positive("omega1", omega1)
    return np.pi * g * g0 / omega1


# selective pumping ---------------------------------------------------------------

@dataclass(frozen=True)
class ClassicalAmplitudes:
    a_L: complex
    a_T: complex
    a_R: complex

    @property
    def n_cav(self) -> float:
        """Population of the antisymmetric supermode, ``2 |a_R|^2``."""
        return 2.0 * abs(self.a_R) ** 2


def selective_pump_steady_state(E: float, kappa: float, J: float) -> ClassicalAmplitudes:
    """Steady state of the antisymmetric drive: a_R = -a_L = 2E/kappa, a_T = 0.

    ``J`` does not enter; it is accepted for symmetry with the transient.
    """
    _require_positive("kappa", kappa)
    a = 2.0 * E / kappa
    return ClassicalAmplitudes(complex(-a), 0j, complex(a))


def pump_amplitude_for(n_cav: float, kappa: float) -> float:
    """Drive amplitude E giving steady population ``n_cav``."""
    _require_positive("kappa", kappa)
    if n_cav < 0:
        raise ValueError("n_cav must be >= 0")
    return 0.5 * kappa * np.sqrt(n_cav / 2.0)


@dataclass(frozen=True)
class PumpTransient:
    times: np.ndarray
    a_L: np.ndarray
    a_T: np.ndarray
    a_R: np.ndarray

    @property
    def n_cav(self) -> np.ndarray:
        return 2.0 * np.abs(self.a_R) ** 2

    def at(self, i: int) -> ClassicalAmplitudes:
        return ClassicalAmplitudes(self.a_L[i], self.a_T[i], self.a_R[i])

    def schedule(self, every: int = 1, merge_rtol: float = 0.0, merge_atol: float = 0.0) -> Schedule:
        """``n_cav(t)`` as a piecewise-constant schedule sampled on every
        ``every``-th grid point."""
        return Schedule.from_samples(self.times[::every], self.n_cav[::every],
                                     merge_rtol=merge_rtol, merge_atol=merge_atol)


def _pump_rhs(J: float, kappa: float, E: float):
    h = 0.5 * kappa

    def rhs(t, y):
        aL, aT, aR = y
        return np.array([
            -1j * J * aT - h * aL - E,
            -1j * J * (aL + aR) - h * aT,
            -1j * J * aT - h * aR + E,
        ])
    return rhs


def selective_pump_transient(E_schedule: Schedule, kappa: float, J: float, times,
                             initial: ClassicalAmplitudes | None = None,
                             rtol: float = 1e-11, atol: float = 1e-13) -> PumpTransient:
    """Mean-field amplitudes of the three cavities under the antisymmetric drive ``E(t)``.

    The drive enters as ``da_L/dt += -E``, ``da_R/dt += +E``, which is the
    drive term ``E(a_R^+ - a_L^+ + h.c.)`` with its phase chosen so the
    steady amplitudes are real.  The schedule is piecewise constant; the
    integration restarts at each of its change points.
    """
    _require_positive("kappa", kappa)
    _require_positive("J", J)
    times = np.asarray(times, dtype=float)
    if len(times) < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing with at least two points")
    limit = 0.1 * min(1.0 / kappa, 1.0 / J)
    if np.max(np.diff(times)) > limit * (1 + 1e-9):
        raise ValueError(f"time grid step exceeds 0.1 min(1/kappa, 1/J) = {limit:.3g} ns")
    y = np.zeros(3, dtype=complex) if initial is None else \
        np.array([initial.a_L, initial.a_T, initial.a_R], dtype=complex)
    out = np.empty((3, len(times)), dtype=complex)
    out[:, 0] = y
    cuts = [times[0]] + [t for t in E_schedule.change_points() if times[0] < t < times[-1]] + [times[-1]]
    for a, b in zip(cuts, cuts[1:]):
        E = E_schedule.value_at(a)
        inside = np.nonzero((times > a) & (times <= b))[0]
        t_eval = times[inside]
        if t_eval.size == 0 or t_eval[-1] != b:
            t_eval = np.append(t_eval, b)
        sol = solve_ivp(_pump_rhs(J, kappa, E), (a, b), y, method="DOP853", t_eval=t_eval,
                        rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"pump transient integration failed at t = {sol.t[-1]:.6g} ns: {sol.message}")
        out[:, inside] = sol.y[:, : len(inside)]
        y = sol.y[:, -1]
    return PumpTransient(times, out[0], out[1], out[2])
