"""Hamiltonians and collapse operators of the mode-field-coupling models.

All rates are angular frequencies in rad/ns with hbar = 1.  Every
Hamiltonian is written in the frame rotating at the cavity frequency, so
the only explicit optical/emitter frequency left is the emitter detuning
``omega_A - omega_c``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .operators import (
    BOSON,
    TWO_LEVEL,
    LayoutError,
    QOperator,
    Subsystem,
    SubsystemLayout,
    destroy,
    embed,
    identity,
    pauli_operators,
)

TWO_PI = 2.0 * np.pi

EMITTER = "emitter"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SystemParams:
    """Physical rates and frequencies, all in rad/ns.

    ``kappa_overrides`` optionally maps cavity slot names to their own decay
    rate; every other cavity uses ``kappa``.
    """

    omega_c: float = 0.0
    omega_A: float = 0.0
    Omega_M: float = 0.0
    g: float = 0.0
    g0: float = 0.0
    J: float = 0.0
    J_M: float = 0.0
    kappa: float = 0.0
    Gamma: float = 0.0
    Gamma_star: float = 0.0
    Gamma_M: float = 0.0
    n_th: float = 0.0
    kappa_overrides: tuple[tuple[str, float], ...] = ()

    RATE_FIELDS = (
        "omega_c", "omega_A", "Omega_M", "g", "g0", "J", "J_M",
        "kappa", "Gamma", "Gamma_star", "Gamma_M",
    )

    def __post_init__(self):
        for name in ("Omega_M", "g", "g0", "J", "J_M", "kappa", "Gamma", "Gamma_star", "Gamma_M", "n_th"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ModelError(f"{name} must be finite and >= 0, got {value}")
        for slot, rate in self.kappa_overrides:
            if rate < 0:
                raise ModelError(f"kappa override for {slot} must be >= 0")

    @classmethod
    def from_ghz(cls, **values) -> "SystemParams":
        """Build from values quoted as nu/2pi in GHz (``n_th`` is dimensionless)."""
        conv = {k: (v * TWO_PI if k in cls.RATE_FIELDS else v) for k, v in values.items()}
        return cls(**conv)

    @classmethod
    def paper(cls, **overrides) -> "SystemParams":
        """Diamond nanobeam parameters: {omega_c, Omega_M, g, g0}/2pi = {4.7e5, 14, 20, 0.004} GHz,
        J = 18 g, emitter at omega_c + Omega_M, lossless."""
        base = cls.from_ghz(omega_c=4.7e5, Omega_M=14.0, g=20.0, g0=0.004, J=18 * 20.0, omega_A=4.7e5 + 14.0)
        return dataclasses.replace(base, **overrides)

    @property
    def detuning(self) -> float:
        """Emitter detuning omega_A - omega_c."""
        return self.omega_A - self.omega_c

    def with_detuning(self, detuning: float) -> "SystemParams":
        return dataclasses.replace(self, omega_A=self.omega_c + detuning)

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def kappa_for(self, slot: str) -> float:
        return dict(self.kappa_overrides).get(slot, self.kappa)

    def lossless(self) -> "SystemParams":
        return dataclasses.replace(self, kappa=0.0, Gamma=0.0, Gamma_star=0.0, Gamma_M=0.0, kappa_overrides=())

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.RATE_FIELDS}
        out["n_th"] = self.n_th
        if self.kappa_overrides:
            out["kappa_overrides"] = dict(self.kappa_overrides)
        return out


@dataclass(frozen=True)
class Channel:
    """Scalar control bound to a Hamiltonian term.

    The Hamiltonian at channel value ``v`` is
    ``static + transform(v) * operator``.
    """

    name: str
    operator: QOperator
    value: float
    transform: Callable[[float], float] = np.sqrt
    minimum: float = 0.0

    def coefficient(self, value: float) -> float:
        if value < self.minimum:
            raise ModelError(f"channel {self.name} value {value} below minimum {self.minimum}")
        return float(self.transform(value))


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian plus weighted collapse operators.

    A pair ``(r, c)`` in ``collapse_terms`` is the dissipator
    ``(r/2)(2 c rho c^+ - {c^+ c, rho})``.
    """

    layout: SubsystemLayout
    static_hamiltonian: QOperator
    collapse_terms: tuple[tuple[float, QOperator], ...] = ()
    channel: Channel | None = None
    labels: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ops = [self.static_hamiltonian] + [c for _, c in self.collapse_terms]
        if self.channel is not None:
            ops.append(self.channel.operator)
        for op in ops:
            if op.layout != self.layout:
                raise LayoutError("model operators must share the model layout")
        for rate, _ in self.collapse_terms:
            if not np.isfinite(rate) or rate < 0:
                raise ModelError(f"collapse rate must be finite and >= 0, got {rate}")
        if not self.hamiltonian.is_hermitian():
            raise ModelError("Hamiltonian is not Hermitian")

    def hamiltonian_at(self, value: float) -> QOperator:
        if self.channel is None:
            return self.static_hamiltonian
        return self.static_hamiltonian + self.channel.coefficient(value) * self.channel.operator

    @property
    def hamiltonian(self) -> QOperator:
        if self.channel is None:
            return self.static_hamiltonian
        return self.hamiltonian_at(self.channel.value)

    @property
    def is_closed(self) -> bool:
        return not any(rate > 0 for rate, _ in self.collapse_terms)

    def with_collapse(self, terms: Sequence[tuple[float, QOperator]]) -> "LindbladModel":
        return dataclasses.replace(self, collapse_terms=tuple((float(r), c) for r, c in terms if r > 0))

    def with_channel_value(self, value: float) -> "LindbladModel":
        if self.channel is None:
            raise ModelError("model has no channel")
        self.channel.coefficient(value)
        return dataclasses.replace(self, channel=dataclasses.replace(self.channel, value=float(value)))

    def shifted(self, constant: float) -> "LindbladModel":
        """Same model with ``constant * identity`` added to the Hamiltonian."""
        return dataclasses.replace(self, static_hamiltonian=self.static_hamiltonian + constant * identity(self.layout))


# layouts --------------------------------------------------------------------

MFC_SLOTS = {EMITTER: TWO_LEVEL, "photon": BOSON, "phonon": BOSON}
SEMICLASSICAL_SLOTS = {EMITTER: TWO_LEVEL, "phonon": BOSON}
TWO_CAVITY_SLOTS = {EMITTER: TWO_LEVEL, "cav_L": BOSON, "cav_R": BOSON, "phonon": BOSON}
THREE_CAVITY_SLOTS = {EMITTER: TWO_LEVEL, "cav_L": BOSON, "cav_T": BOSON, "cav_R": BOSON, "phonon": BOSON}
FULL_MECH_SLOTS = {
    EMITTER: TWO_LEVEL, "cav_L": BOSON, "cav_T": BOSON, "cav_R": BOSON,
    "mech_L": BOSON, "mech_T": BOSON, "mech_R": BOSON,
}


def make_layout(slots: dict, dims: dict | None = None, default_dim: int = 2,
                max_excitations: int | None = None) -> SubsystemLayout:
    """Layout in the canonical slot order with per-slot dimension overrides."""
    dims = dims or {}
    unknown = set(dims) - set(slots)
    if unknown:
        raise LayoutError(f"unknown slots {sorted(unknown)}")
    subs = [Subsystem(name, kind, 2 if kind == TWO_LEVEL else int(dims.get(name, default_dim)))
            for name, kind in slots.items()]
    return SubsystemLayout(subs, max_excitations=max_excitations)


def mfc_layout(**dims) -> SubsystemLayout:
    return make_layout(MFC_SLOTS, dims)


def semiclassical_layout(**dims) -> SubsystemLayout:
    return make_layout(SEMICLASSICAL_SLOTS, dims)


def two_cavity_layout(**dims) -> SubsystemLayout:
    return make_layout(TWO_CAVITY_SLOTS, dims)


def three_cavity_layout(max_excitations: int | None = None, **dims) -> SubsystemLayout:
    return make_layout(THREE_CAVITY_SLOTS, dims, max_excitations=max_excitations)


def full_mech_layout(max_excitations: int | None = None, **dims) -> SubsystemLayout:
    return make_layout(FULL_MECH_SLOTS, dims, max_excitations=max_excitations)


def _require_shape(layout: SubsystemLayout, slots: dict, what: str):
    got = {s.name: s.kind for s in layout.subsystems}
    if got != slots:
        raise LayoutError(f"{what} needs slots {slots}, layout has {got}")


def _emitter_ops(layout):
    sm = embed(pauli_operators()[0], layout, EMITTER)
    sz = embed(pauli_operators()[2], layout, EMITTER)
    return sm, sm.dag(), sz


def _x(b: QOperator) -> QOperator:
    return b + b.dag()


def _check_params(params: SystemParams):
    if params.Omega_M <= 0:
        raise ModelError("Omega_M must be > 0 for dynamical scenarios")


# builders -------------------------------------------------------------------

def build_mfc_hamiltonian(params: SystemParams, gamma: float, layout: SubsystemLayout | None = None) -> LindbladModel:
    """Tripartite emitter-photon-phonon model
    ``H = d/2 sz + Omega_M b^+b + gamma (b + b^+)(a s+ + a^+ s-)``."""
    layout = layout or mfc_layout()
    _require_shape(layout, MFC_SLOTS, "MFC Hamiltonian")
    _check_params(params)
    sm, sp_, sz = _emitter_ops(layout)
    a = destroy(layout, "photon")
    b = destroy(layout, "phonon")
    H = (0.5 * params.detuning) * sz + params.Omega_M * (b.dag() @ b) \
        + gamma * (_x(b) @ (a @ sp_ + a.dag() @ sm))
    return LindbladModel(layout, H, labels={"model": "mfc"})


def build_semiclassical_mfc_hamiltonian(params: SystemParams, gamma: float, n_cav: float,
                                        layout: SubsystemLayout | None = None) -> LindbladModel:
    """Drive-enhanced emitter-phonon model with coupling ``gamma * sqrt(n_cav)``."""
    if n_cav < 0:
        raise ModelError("n_cav must be >= 0")
    layout = layout or semiclassical_layout()
    _require_shape(layout, SEMICLASSICAL_SLOTS, "semiclassical MFC Hamiltonian")
    _check_params(params)
    sm, sp_, sz = _emitter_ops(layout)
    b = destroy(layout, "phonon")
    static = (0.5 * params.detuning) * sz + params.Omega_M * (b.dag() @ b)
    drive = gamma * (_x(b) @ (sp_ + sm))
    channel = Channel("n_cav", drive, float(n_cav))
    return LindbladModel(layout, static, channel=channel, labels={"model": "semiclassical"})


def build_two_cavity_hamiltonian(params: SystemParams, layout: SubsystemLayout | None = None) -> LindbladModel:
    """Two coupled cavities, emitter in cavity L, shared mechanical supermode."""
    layout = layout or two_cavity_layout()
    _require_shape(layout, TWO_CAVITY_SLOTS, "two-cavity Hamiltonian")
    _check_params(params)
    sm, sp_, sz = _emitter_ops(layout)
    aL, aR = destroy(layout, "cav_L"), destroy(layout, "cav_R")
    b = destroy(layout, "phonon")
    delta = (params.g0 / np.sqrt(2.0)) * _x(b)
    H = -1.0 * (delta @ aL.dag() @ aL) + delta @ aR.dag() @ aR + params.Omega_M * (b.dag() @ b) \
        + (0.5 * params.detuning) * sz \
        + params.J * (aR.dag() @ aL + aL.dag() @ aR) \
        + params.g * (sp_ @ aL + aL.dag() @ sm)
    return LindbladModel(layout, H, labels={"model": "two-cavity"})


def _capped(builder):
    """Build an operator on the uncapped product space, then restrict it.

    Products of operators that were truncated to an excitation cap are not
    the truncation of the product (and lose Hermiticity); restricting once at
    the end avoids that.
    """
    def wrapped(params, layout):
        if layout.max_excitations is None:
            return builder(params, layout)
        full = builder(params, SubsystemLayout(layout.subsystems))
        return QOperator(layout, layout.restrict(full.matrix))
    wrapped.__name__ = builder.__name__
    wrapped.__doc__ = builder.__doc__
    return wrapped


@_capped
def _three_cavity_terms(params: SystemParams, layout: SubsystemLayout) -> QOperator:
    sm, sp_, sz = _emitter_ops(layout)
    aL, aT, aR = (destroy(layout, s) for s in ("cav_L", "cav_T", "cav_R"))
    b = destroy(layout, "phonon")
    delta = (params.g0 / np.sqrt(2.0)) * _x(b)
    return -1.0 * (delta @ aL.dag() @ aL) + delta @ aR.dag() @ aR + params.Omega_M * (b.dag() @ b) \
        + (0.5 * params.detuning) * sz \
        + params.J * (aT.dag() @ (aL + aR) + (aL.dag() + aR.dag()) @ aT) \
        + params.g * (aT @ sp_ + aT.dag() @ sm)


def build_three_cavity_hamiltonian(params: SystemParams, layout: SubsystemLayout | None = None) -> LindbladModel:
    """Three-cavity model: lateral cavities detuned by -/+ Delta, emitter in T,
    ``Delta = (g0/sqrt2)(b + b^+)``."""
    layout = layout or three_cavity_layout()
    _require_shape(layout, THREE_CAVITY_SLOTS, "three-cavity Hamiltonian")
    _check_params(params)
    return LindbladModel(layout, _three_cavity_terms(params, layout), labels={"model": "three-cavity"})


@_capped
def displaced_drive_operator(params: SystemParams, layout: SubsystemLayout) -> QOperator:
    """Drive term per unit sqrt(n_cav): ``(g0/sqrt2) sqrt(1/2) (b+b^+)[(dL+dL^+) + (dR+dR^+)]``."""
    aL, aR = destroy(layout, "cav_L"), destroy(layout, "cav_R")
    b = destroy(layout, "phonon")
    return (params.g0 / np.sqrt(2.0) * np.sqrt(0.5)) * (_x(b) @ (_x(aL) + _x(aR)))


def build_displaced_three_cavity_hamiltonian(params: SystemParams, n_cav: float,
                                             layout: SubsystemLayout | None = None) -> LindbladModel:
    """Three-cavity model around a coherent antisymmetric pump of ``n_cav`` photons.

    Cavity slots hold the fluctuation operators.  ``n_cav`` is exposed as the
    model channel ``"n_cav"`` so a schedule can vary it in time.
    """
    if n_cav < 0:
        raise ModelError("n_cav must be >= 0")
    layout = layout or three_cavity_layout()
    _require_shape(layout, THREE_CAVITY_SLOTS, "displaced three-cavity Hamiltonian")
    _check_params(params)
    channel = Channel("n_cav", displaced_drive_operator(params, layout), float(n_cav))
    return LindbladModel(layout, _three_cavity_terms(params, layout), channel=channel,
                         labels={"model": "displaced-three-cavity"})


@_capped
def _full_mech_terms(params: SystemParams, layout: SubsystemLayout) -> QOperator:
    sm, sp_, sz = _emitter_ops(layout)
    aL, aT, aR = (destroy(layout, s) for s in ("cav_L", "cav_T", "cav_R"))
    bL, bT, bR = (destroy(layout, s) for s in ("mech_L", "mech_T", "mech_R"))
    H = (0.5 * params.detuning) * sz
    for a, b in ((aL, bL), (aT, bT), (aR, bR)):
        H = H - params.g0 * (_x(b) @ a.dag() @ a)
    H = H + params.Omega_M * (bL.dag() @ bL + bT.dag() @ bT + bR.dag() @ bR) \
        + params.J * (aT.dag() @ (aR + aL) + (aR.dag() + aL.dag()) @ aT) \
        + params.J_M * (bT.dag() @ (bR + bL) + (bR.dag() + bL.dag()) @ bT) \
        + params.g * (sp_ @ aT + aT.dag() @ sm)
    return H


def build_three_cavity_full_mech_hamiltonian(params: SystemParams,
                                             layout: SubsystemLayout | None = None) -> LindbladModel:
    """Three cavities, each dispersively coupled to its own resonator, with
    mechanical hopping ``J_M`` between the central and lateral resonators."""
    layout = layout or full_mech_layout()
    _require_shape(layout, FULL_MECH_SLOTS, "full-mechanics Hamiltonian")
    _check_params(params)
    return LindbladModel(layout, _full_mech_terms(params, layout), labels={"model": "full-mech"})


@_capped
def _full_mech_drive(params: SystemParams, layout: SubsystemLayout) -> QOperator:
    aL, aR = destroy(layout, "cav_L"), destroy(layout, "cav_R")
    bL, bR = destroy(layout, "mech_L"), destroy(layout, "mech_R")
    return (params.g0 * np.sqrt(0.5)) * (_x(bL) @ _x(aL) - _x(bR) @ _x(aR))


def build_displaced_full_mech_hamiltonian(params: SystemParams, n_cav: float,
                                          layout: SubsystemLayout | None = None) -> LindbladModel:
    """Full-mechanics model around the antisymmetric pump (abar_R = -abar_L = sqrt(n_cav/2)).

    The drive term is ``g0 sqrt(n_cav/2) [x_L (dL + dL^+) - x_R (dR + dR^+)]``.
    The static radiation-pressure force ``-g0 (n_cav/2)(x_L + x_R)`` only
    shifts the resonators' equilibrium and is left out.
    """
    if n_cav < 0:
        raise ModelError("n_cav must be >= 0")
    layout = layout or full_mech_layout()
    _require_shape(layout, FULL_MECH_SLOTS, "displaced full-mechanics Hamiltonian")
    _check_params(params)
    channel = Channel("n_cav", _full_mech_drive(params, layout), float(n_cav))
    return LindbladModel(layout, _full_mech_terms(params, layout), channel=channel,
                         labels={"model": "displaced-full-mech"})


def _is_cavity(name: str) -> bool:
    return name == "photon" or name.startswith("cav")


def _is_mechanical(name: str) -> bool:
    return name == "phonon" or name.startswith("mech")


def build_collapse_operators(params: SystemParams, layout: SubsystemLayout) -> list[tuple[float, QOperator]]:
    """Loss channels of the master equation for whatever slots ``layout`` has.

    Cavities (``photon``, ``cav_*``) decay at kappa; mechanical slots
    (``phonon``, ``mech_*``) couple to a thermal bath with ``n_th``; the
    emitter decays at Gamma and dephases with ``(Gamma*/2, sigma_z)``.
    Zero-rate channels are omitted.
    """
    terms: list[tuple[float, QOperator]] = []
    for sub in layout.subsystems:
        if _is_cavity(sub.name):
            terms.append((params.kappa_for(sub.name), destroy(layout, sub.name)))
    for sub in layout.subsystems:
        if _is_mechanical(sub.name):
            b = destroy(layout, sub.name)
            terms.append((params.Gamma_M * (params.n_th + 1.0), b))
            terms.append((params.Gamma_M * params.n_th, b.dag()))
    if EMITTER in layout:
        sm, _, sz = _emitter_ops(layout)
        terms.append((params.Gamma, sm))
        terms.append((params.Gamma_star / 2.0, sz))
    return [(float(r), c) for r, c in terms if r > 0]


def with_losses(model: LindbladModel, params: SystemParams) -> LindbladModel:
    return model.with_collapse(build_collapse_operators(params, model.layout))
