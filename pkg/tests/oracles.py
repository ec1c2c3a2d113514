"""Independent reference implementations used by the tests.

Nothing here imports the package's superoperator or propagation code: the
master equation is written in matrix form and vectorized by brute force, and
ladder operators are built with plain numpy Kronecker products.
"""

from __future__ import annotations

from functools import reduce

import numpy as np
from scipy.linalg import expm, null_space


def ladder(dim: int) -> np.ndarray:
    a = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        a[n - 1, n] = np.sqrt(n)
    return a


def kron_embed(op: np.ndarray, dims: list[int], k: int) -> np.ndarray:
    return reduce(np.kron, [op if i == k else np.eye(d) for i, d in enumerate(dims)])


def lindblad_rhs(H: np.ndarray, collapses: list[tuple[float, np.ndarray]], rho: np.ndarray) -> np.ndarray:
    """``-i[H, rho] + sum r/2 (2 c rho c^+ - {c^+ c, rho})``."""
    out = -1j * (H @ rho - rho @ H)
    for r, c in collapses:
        cd = c.conj().T
        out += 0.5 * r * (2 * c @ rho @ cd - cd @ c @ rho - rho @ cd @ c)
    return out


def brute_liouvillian(H: np.ndarray, collapses) -> np.ndarray:
    """Column-stacked generator assembled column by column from :func:`lindblad_rhs`."""
    n = H.shape[0]
    L = np.zeros((n * n, n * n), dtype=complex)
    for j in range(n * n):
        e = np.zeros(n * n, dtype=complex)
        e[j] = 1.0
        L[:, j] = lindblad_rhs(H, collapses, e.reshape(n, n, order="F")).reshape(-1, order="F")
    return L


def expm_propagate(H, collapses, rho0: np.ndarray, t: float) -> np.ndarray:
    n = rho0.shape[0]
    L = brute_liouvillian(H, collapses)
    return (expm(L * t) @ rho0.reshape(-1, order="F")).reshape(n, n, order="F")


def nullspace_steady_state(H, collapses) -> np.ndarray:
    L = brute_liouvillian(H, collapses)
    v = null_space(L, rcond=1e-10)
    assert v.shape[1] == 1, f"steady state not unique ({v.shape[1]} null vectors)"
    n = H.shape[0]
    rho = v[:, 0].reshape(n, n, order="F")
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def random_hermitian(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_density(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def coupled_mode_matrix_two(delta: float, J: float) -> np.ndarray:
    return np.array([[delta, J], [J, -delta]], dtype=float)


def coupled_mode_matrix_three(delta: float, J: float) -> np.ndarray:
    return np.array([[delta, J, 0.0], [J, 0.0, J], [0.0, J, -delta]], dtype=float)


def jaynes_cummings_excited_population(g: float, t):
    """Resonant vacuum Rabi oscillation starting in |e, 0>."""
    return np.cos(g * np.asarray(t)) ** 2


def dressed_detuning_by_root(Omega_M: float, g: float, J: float) -> float:
    """Detuning that places an eigenvalue of the single-excitation emitter +
    supermode block at ``Omega_M``, by root finding on the explicit 3x3
    matrix (a0 decouples at rest; no phonons, no loss)."""
    from scipy.optimize import brentq

    w = np.sqrt(2.0) * J

    def level(det):
        M = np.array([[det, g / np.sqrt(2), g / np.sqrt(2)],
                      [g / np.sqrt(2), w, 0.0],
                      [g / np.sqrt(2), 0.0, -w]])
        vals = np.linalg.eigvalsh(M)
        return vals[np.argmin(np.abs(vals - Omega_M))] - Omega_M

    return brentq(level, Omega_M - 10 * g * g / J, Omega_M + 10 * g * g / J, xtol=1e-14, rtol=1e-15)
