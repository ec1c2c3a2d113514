"""Tensor-product Hilbert spaces and sparse operator algebra.

Every operator and state carries the :class:`SubsystemLayout` it was built
on.  The layout fixes the Kronecker ordering (declaration order, first
subsystem is the slowest index) and, optionally, an excitation cap that
restricts the product basis to states with a bounded total occupation.

Two-level subsystems use the basis ordering ``|g> = 0``, ``|e> = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce
from numbers import Number
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

BOSON = "boson"
TWO_LEVEL = "two-level"


class LayoutError(ValueError):
    """Raised for malformed layouts, unknown slots and dimension mismatches."""


class InvalidDimensionError(LayoutError):
    pass


class LayoutMismatchError(LayoutError):
    """Raised when objects built on different layouts are combined."""


@dataclass(frozen=True)
class Subsystem:
    name: str
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (BOSON, TWO_LEVEL):
            raise LayoutError(f"unknown subsystem kind {self.kind!r}")
        if not isinstance(self.dim, (int, np.integer)):
            raise InvalidDimensionError(f"{self.name}: dimension must be an integer")
        if self.kind == TWO_LEVEL and self.dim != 2:
            raise InvalidDimensionError(f"{self.name}: two-level dimension must be 2")
        if self.kind == BOSON and self.dim < 2:
            raise InvalidDimensionError(f"{self.name}: boson dimension must be >= 2")


class SubsystemLayout:
    """Ordered collection of subsystems defining a tensor-product space.

    Args:
        subsystems: :class:`Subsystem` instances or ``(name, kind, dim)``
            tuples, in Kronecker order.
        max_excitations: if given, only product states whose summed
            occupation (boson number plus emitter excitation) does not
            exceed this value are kept.
    """

    def __init__(self, subsystems: Iterable, max_excitations: int | None = None):
        subs = tuple(s if isinstance(s, Subsystem) else Subsystem(*s) for s in subsystems)
        if not subs:
            raise LayoutError("layout needs at least one subsystem")
        names = [s.name for s in subs]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate subsystem names in {names}")
        if max_excitations is not None and max_excitations < 0:
            raise LayoutError("max_excitations must be >= 0")
        self.subsystems = subs
        self.max_excitations = max_excitations

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(int(s.dim) for s in self.subsystems)

    @property
    def product_dim(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def basis(self) -> np.ndarray | None:
        """Indices of the kept product-basis states, or None when uncapped."""
        if self.max_excitations is None:
            return None
        grids = np.indices(self.dims).reshape(len(self.dims), -1)
        occupation = grids.sum(axis=0)
        return np.flatnonzero(occupation <= self.max_excitations)

    @property
    def total_dim(self) -> int:
        basis = self.basis
        return self.product_dim if basis is None else int(basis.size)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LayoutError(f"unknown slot {name!r}; layout has {self.names}") from None

    def __getitem__(self, name: str) -> Subsystem:
        return self.subsystems[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def restrict(self, matrix: sp.spmatrix) -> sp.csr_matrix:
        """Project a full product-space matrix onto the kept basis."""
        matrix = sp.csr_matrix(matrix)
        if self.basis is None:
            return matrix
        return matrix[self.basis][:, self.basis].tocsr()

    def state_index(self, levels: Mapping[str, int]) -> int:
        """Basis index of the product state with the given levels (others 0)."""
        digits = []
        for sub in self.subsystems:
            level = int(levels.get(sub.name, 0))
            if not 0 <= level < sub.dim:
                raise LayoutError(f"level {level} out of range for {sub.name}")
            digits.append(level)
        unknown = set(levels) - set(self.names)
        if unknown:
            raise LayoutError(f"unknown slots {sorted(unknown)}")
        flat = int(np.ravel_multi_index(digits, self.dims))
        if self.basis is None:
            return flat
        pos = np.searchsorted(self.basis, flat)
        if pos >= self.basis.size or self.basis[pos] != flat:
            raise LayoutError(f"state {dict(levels)} exceeds the excitation cap")
        return int(pos)

    def _key(self):
        return (self.subsystems, self.max_excitations)

    def __eq__(self, other):
        return isinstance(other, SubsystemLayout) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        inner = ", ".join(f"{s.name}:{s.dim}" for s in self.subsystems)
        cap = "" if self.max_excitations is None else f", max_excitations={self.max_excitations}"
        return f"SubsystemLayout({inner}{cap})"

    def to_dict(self) -> dict:
        return {
            "subsystems": [{"name": s.name, "kind": s.kind, "dim": int(s.dim)} for s in self.subsystems],
            "max_excitations": self.max_excitations,
        }


def single_layout(dim: int, kind: str = BOSON, name: str = "mode") -> SubsystemLayout:
    return SubsystemLayout([Subsystem(name, kind, dim)])


def _check_layout(a, b):
    if a.layout != b.layout:
        raise LayoutMismatchError(f"cannot combine objects on {a.layout!r} and {b.layout!r}")


class QOperator:
    """Complex sparse operator tied to a layout.

    ``*`` with a scalar scales; ``*`` or ``@`` between operators is the
    operator product.  Instances are treated as immutable.
    """

    __array_priority__ = 100

    def __init__(self, layout: SubsystemLayout, matrix):
        mat = sp.csr_matrix(matrix, dtype=complex)
        n = layout.total_dim
        if mat.shape != (n, n):
            raise InvalidDimensionError(f"matrix shape {mat.shape} does not match layout dimension {n}")
        mat.sum_duplicates()
        self.layout = layout
        self.matrix = mat

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def dag(self) -> "QOperator":
        return QOperator(self.layout, self.matrix.conj().T)

    @cached_property
    def max_abs(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        diff = self.matrix - self.matrix.conj().T
        err = float(abs(diff).max()) if diff.nnz else 0.0
        return err <= rtol * max(self.max_abs, 1e-300)

    @cached_property
    def hermitian(self) -> bool:
        return self.is_hermitian()

    def __add__(self, other):
        if isinstance(other, QOperator):
            _check_layout(self, other)
            return QOperator(self.layout, self.matrix + other.matrix)
        if isinstance(other, Number):
            return self + other * identity(self.layout)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return QOperator(self.layout, -self.matrix)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, QOperator):
            return self @ other
        if isinstance(other, Number):
            return QOperator(self.layout, self.matrix * other)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, Number):
            return QOperator(self.layout, other * self.matrix)
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, Number):
            return QOperator(self.layout, self.matrix / other)
        return NotImplemented

    def __matmul__(self, other):
        if isinstance(other, QOperator):
            _check_layout(self, other)
            return QOperator(self.layout, self.matrix @ other.matrix)
        return NotImplemented

    def commutator(self, other: "QOperator") -> "QOperator":
        return self @ other - other @ self

    def allclose(self, other: "QOperator", atol: float = 1e-12) -> bool:
        _check_layout(self, other)
        diff = self.matrix - other.matrix
        return diff.nnz == 0 or float(abs(diff).max()) <= atol

    def __repr__(self):
        return f"QOperator({self.layout!r}, nnz={self.matrix.nnz})"


def identity(layout: SubsystemLayout) -> QOperator:
    return QOperator(layout, sp.identity(layout.total_dim, dtype=complex, format="csr"))


def fock_annihilation(dim: int) -> QOperator:
    """Truncated bosonic lowering operator with ``sqrt(n)`` on the superdiagonal."""
    if not isinstance(dim, (int, np.integer)) or dim < 2:
        raise InvalidDimensionError(f"boson dimension must be an integer >= 2, got {dim!r}")
    mat = sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, shape=(dim, dim), format="csr")
    return QOperator(single_layout(dim), mat)


def pauli_operators() -> tuple[QOperator, QOperator, QOperator]:
    """Return ``(sigma_minus, sigma_plus, sigma_z)`` on a two-level space."""
    layout = single_layout(2, TWO_LEVEL, "emitter")
    sm = QOperator(layout, np.array([[0, 1], [0, 0]]))
    sz = QOperator(layout, np.diag([-1.0, 1.0]))
    return sm, sm.dag(), sz


def embed(op: QOperator, layout: SubsystemLayout, slot: str) -> QOperator:
    """Place a single-subsystem operator at ``slot``, identities elsewhere."""
    idx = layout.index(slot)
    if len(op.layout.subsystems) != 1:
        raise LayoutError("embed expects a single-subsystem operator")
    if op.shape[0] != layout.dims[idx]:
        raise InvalidDimensionError(
            f"operator dimension {op.shape[0]} does not match slot {slot!r} of dimension {layout.dims[idx]}"
        )
    factors = [op.matrix if i == idx else sp.identity(d, dtype=complex, format="csr") for i, d in enumerate(layout.dims)]
    full = reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)
    return QOperator(layout, layout.restrict(full))


def destroy(layout: SubsystemLayout, slot: str) -> QOperator:
    """Lowering operator of ``slot`` (bosonic or two-level) on the full space."""
    sub = layout[slot]
    if sub.kind == TWO_LEVEL:
        return embed(pauli_operators()[0], layout, slot)
    return embed(fock_annihilation(sub.dim), layout, slot)


def number(layout: SubsystemLayout, slot: str) -> QOperator:
    """Occupation operator of ``slot``, built as an exact integer diagonal
    (``a^+ a`` from the ladder matrices is only exact to rounding)."""
    sub = layout[slot]
    diag = sp.diags(np.arange(sub.dim, dtype=float), 0, format="csr")
    return embed(QOperator(single_layout(sub.dim, sub.kind, sub.name), diag), layout, slot)


class QuantumState:
    """Pure state vector or density matrix on a layout."""

    def __init__(self, layout: SubsystemLayout, data, validate: bool = True):
        arr = np.asarray(data.toarray() if sp.issparse(data) else data, dtype=complex)
        n = layout.total_dim
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        if arr.shape not in ((n,), (n, n)):
            raise InvalidDimensionError(f"state shape {arr.shape} does not match layout dimension {n}")
        self.layout = layout
        self.data = arr
        self.info: dict = {}
        if validate:
            self.validate()

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def density_matrix(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data

    def to_mixed(self) -> "QuantumState":
        return self if not self.is_pure else QuantumState(self.layout, self.density_matrix(), validate=False)

    def check(self) -> dict:
        """Numerical diagnostics: norm/trace error, Hermiticity error, min eigenvalue."""
        if self.is_pure:
            return {"norm_error": abs(np.linalg.norm(self.data) - 1.0)}
        rho = self.data
        return {
            "trace_error": abs(np.trace(rho) - 1.0),
            "hermiticity_error": float(np.abs(rho - rho.conj().T).max()),
            "min_eigenvalue": float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()),
        }

    def validate(self):
        d = self.check()
        if self.is_pure:
            if d["norm_error"] > 1e-10:
                raise ValueError(f"pure state not normalised (error {d['norm_error']:.2e})")
            return
        if d["trace_error"] > 1e-10:
            raise ValueError(f"density matrix trace error {d['trace_error']:.2e}")
        if d["hermiticity_error"] > 1e-12:
            raise ValueError(f"density matrix not Hermitian (error {d['hermiticity_error']:.2e})")
        if d["min_eigenvalue"] < -1e-8:
            raise ValueError(f"density matrix not positive (min eigenvalue {d['min_eigenvalue']:.2e})")


def basis_state(layout: SubsystemLayout, levels: Mapping[str, int] | None = None) -> QuantumState:
    """Product basis state; unspecified slots are in level 0 (ground/vacuum)."""
    vec = np.zeros(layout.total_dim, dtype=complex)
    vec[layout.state_index(levels or {})] = 1.0
    return QuantumState(layout, vec)


def thermal_populations(dim: int, nbar: float) -> np.ndarray:
    """Geometric occupation probabilities of mean ``nbar``, truncated and renormalised."""
    if nbar < 0:
        raise ValueError("nbar must be >= 0")
    if nbar == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    ratio = nbar / (1.0 + nbar)
    p = ratio ** np.arange(dim)
    return p / p.sum()


def thermal_state(dim: int, nbar: float, name: str = "mode") -> QuantumState:
    """Thermal density matrix of a single truncated boson."""
    return QuantumState(single_layout(dim, BOSON, name), np.diag(thermal_populations(dim, nbar)).astype(complex))


def product_density(layout: SubsystemLayout, factors: Mapping[str, np.ndarray]) -> QuantumState:
    """Tensor product of single-slot density matrices; missing slots in |0><0|."""
    mats = []
    for sub in layout.subsystems:
        if sub.name in factors:
            m = np.asarray(factors[sub.name], dtype=complex)
            if m.ndim == 1:
                m = np.outer(m, m.conj())
        else:
            m = np.zeros((sub.dim, sub.dim), dtype=complex)
            m[0, 0] = 1.0
        mats.append(m)
    full = reduce(np.kron, mats)
    if layout.basis is not None:
        full = full[np.ix_(layout.basis, layout.basis)]
        full = full / np.trace(full)
    return QuantumState(layout, full)


def expectation(state: QuantumState, op: QOperator) -> complex:
    """``<psi|op|psi>`` for pure states, ``Tr(rho op)`` for density matrices."""
    _check_layout(state, op)
    if state.is_pure:
        psi = state.data
        val = complex(np.vdot(psi, op.matrix @ psi))
    else:
        # Tr(rho A) = sum_ij rho_ij A_ji
        val = complex((op.matrix.multiply(state.data.T)).sum())
    if __debug__ and op.hermitian:
        scale = max(1.0, abs(val.real))
        assert abs(val.imag) < 1e-10 * scale, f"Hermitian expectation has imaginary part {val.imag:.3e}"
    return val


def partial_populations(state: QuantumState, slot: str) -> np.ndarray:
    """Diagonal of the reduced density matrix of ``slot`` (Fock/level populations)."""
    layout = state.layout
    idx = layout.index(slot)
    diag = np.real(np.diag(state.density_matrix())) if not state.is_pure else np.abs(state.data) ** 2
    full = np.zeros(layout.product_dim)
    if layout.basis is None:
        full[:] = diag
    else:
        full[layout.basis] = diag
    return full.reshape(layout.dims).sum(axis=tuple(i for i in range(len(layout.dims)) if i != idx))
