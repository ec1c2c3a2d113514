import numpy as np
import pytest

from mfcsim.liouvillian import (
    Schedule,
    SolverError,
    SteadyStateError,
    build_liouvillian,
    evolve,
    steady_state,
)
from mfcsim.models import Channel, LindbladModel, ModelError
from mfcsim.operators import (
    LayoutError,
    QOperator,
    QuantumState,
    SubsystemLayout,
    basis_state,
    destroy,
    expectation,
    identity,
    number,
    single_layout,
    thermal_populations,
)
from oracles import (
    brute_liouvillian,
    expm_propagate,
    jaynes_cummings_excited_population,
    nullspace_steady_state,
    random_density,
    random_hermitian,
)


def random_model(rng, n=None, n_collapse=None, with_channel=False):
    n = n or int(rng.integers(2, 7))
    lay = single_layout(n)
    H = random_hermitian(rng, n)
    k = int(rng.integers(1, 4)) if n_collapse is None else n_collapse
    terms = []
    for _ in range(k):
        c = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        terms.append((float(rng.uniform(0.1, 1.0)), QOperator(lay, c)))
    channel = None
    if with_channel:
        channel = Channel("drive", QOperator(lay, random_hermitian(rng, n)), 1.0)
    model = LindbladModel(lay, QOperator(lay, H), tuple(terms), channel)
    raw = [(r, c.dense()) for r, c in terms]
    return model, H, raw


def jc_model(g, dim=4):
    lay = SubsystemLayout([("atom", "two-level", 2), ("mode", "boson", dim)])
    a = destroy(lay, "mode")
    s = destroy(lay, "atom")
    H = g * (a.dag() @ s + s.dag() @ a)
    return LindbladModel(lay, H)


# generator -------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_liouvillian_matches_brute_force(seed):
    rng = np.random.default_rng(1000 + seed)
    model, H, raw = random_model(rng)
    L = build_liouvillian(model).dense()
    ref = brute_liouvillian(H, raw)
    np.testing.assert_allclose(L, ref, atol=1e-12 * np.abs(ref).max())


def test_liouvillian_is_trace_preserving(rng):
    model, H, _ = random_model(rng, n=5)
    L = build_liouvillian(model).dense()
    vec_identity = np.eye(5).reshape(-1, order="F")
    np.testing.assert_allclose(vec_identity @ L, 0.0, atol=1e-12)


def test_liouvillian_channel_value(rng):
    model, H, raw = random_model(rng, n=3, with_channel=True)
    V = model.channel.operator.dense()
    L = build_liouvillian(model, 9.0).dense()
    np.testing.assert_allclose(L, brute_liouvillian(H + 3.0 * V, raw), atol=1e-12)


def test_superoperator_apply(rng):
    model, H, raw = random_model(rng, n=4)
    rho = random_density(rng, 4)
    from oracles import lindblad_rhs

    np.testing.assert_allclose(build_liouvillian(model).apply(rho), lindblad_rhs(H, raw, rho), atol=1e-12)


# time evolution -------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["expm", "ode"])
@pytest.mark.parametrize("seed", range(5))
def test_open_evolution_matches_expm_oracle(seed, method):
    rng = np.random.default_rng(2000 + seed)
    model, H, raw = random_model(rng)
    n = model.layout.total_dim
    rho0 = random_density(rng, n)
    X = random_hermitian(rng, n)
    t = np.linspace(0, 2.0, 9)
    r = evolve(model, QuantumState(model.layout, rho0), t, {"x": QOperator(model.layout, X)},
               method=method, rtol=1e-10, atol=1e-12)
    ref = [np.trace(X @ expm_propagate(H, raw, rho0, tk)) for tk in t]
    np.testing.assert_allclose(r["x"], ref, atol=1e-7)


@pytest.mark.parametrize("method", ["eig", "ode", "expm"])
def test_jaynes_cummings_rabi(method):
    g = 0.8
    model = jc_model(g)
    lay = model.layout
    t = np.linspace(0, 2 * np.pi / g, 61)
    psi0 = basis_state(lay, {"atom": 1})
    if method != "eig":
        psi0 = psi0.to_mixed()
    s = destroy(lay, "atom")
    r = evolve(model, psi0, t, {"pe": s.dag() @ s}, method=method, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(r.real("pe"), jaynes_cummings_excited_population(g, t), atol=1e-7)


def test_closed_evolution_conserves_energy(rng):
    lay = single_layout(6)
    model = LindbladModel(lay, QOperator(lay, random_hermitian(rng, 6)))
    psi = rng.normal(size=6) + 1j * rng.normal(size=6)
    psi /= np.linalg.norm(psi)
    t = np.linspace(0, 20, 41)
    r = evolve(model, QuantumState(lay, psi), t, {"H": model.hamiltonian})
    np.testing.assert_allclose(r["H"], r["H"][0], atol=1e-12)


def test_damped_cavity_decays_exponentially():
    lay = single_layout(8)
    a = destroy(lay, "mode")
    model = LindbladModel(lay, 2.0 * number(lay, "mode"), ((0.5, a),))
    t = np.linspace(0, 6, 13)
    r = evolve(model, basis_state(lay, {"mode": 3}).to_mixed(), t, {"n": number(lay, "mode")},
               method="ode", rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(r.real("n"), 3 * np.exp(-0.5 * t), atol=1e-8)


def test_evolution_diagnostics_reported(rng):
    model, _, _ = random_model(rng, n=3)
    r = evolve(model, QuantumState(model.layout, random_density(rng, 3)), np.linspace(0, 1, 5))
    d = r.diagnostics
    assert d["max_trace_error"] < 1e-9
    assert d["min_eigenvalue"] > -1e-9
    assert "wall_time_s" in d


def test_steady_state_is_fixed_point_of_evolution(rng):
    model, _, _ = random_model(rng, n=4)
    rho = steady_state(model)
    X = QOperator(model.layout, random_hermitian(rng, 4))
    r = evolve(model, rho, np.linspace(0, 10, 6), {"x": X}, method="ode", rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(r["x"], expectation(rho, X), atol=1e-8)


def test_evolve_input_validation(rng):
    model, _, _ = random_model(rng, n=3)
    rho = QuantumState(model.layout, random_density(rng, 3))
    with pytest.raises(ValueError):
        evolve(model, rho, [0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        evolve(model, rho, [0.0, 1.0], method="rk4")
    with pytest.raises(LayoutError):
        evolve(model, basis_state(single_layout(4)), [0.0, 1.0])
    with pytest.raises(ModelError):
        evolve(model, rho, [0.0, 1.0], schedule=Schedule.constant(1.0))
    with pytest.raises(ModelError):
        evolve(model, rho, [0.0, 1.0], method="eig")


# schedules ---------------------------------------------------------------------------------

def test_schedule_step_and_lookup():
    s = Schedule.step(2.0, 0.0, 5.0)
    assert s.value_at(0.0) == 0.0
    assert s.value_at(1.999) == 0.0
    assert s.value_at(2.0) == 5.0
    assert s.change_points() == [0.0, 2.0]
    assert Schedule.step(-1.0, 0.0, 5.0).segments == ((0.0, 5.0),)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(())
    with pytest.raises(ValueError):
        Schedule(((0.0, 1.0), (0.0, 2.0)))
    with pytest.raises(ValueError):
        Schedule(((0.0, np.nan),))
    with pytest.raises(ValueError):
        Schedule(((0.0, 1.0),), rise_time=0.0)


def test_schedule_from_samples_merges_equal_values():
    s = Schedule.from_samples([0, 1, 2, 3], [1.0, 1.0 + 1e-12, 2.0, 2.0], merge_rtol=1e-9)
    assert s.segments == ((0.0, 1.0), (2.0, 2.0))


def test_schedule_ramp_approaches_target():
    s = Schedule(((0.0, 0.0), (1.0, 10.0)), rise_time=0.5)
    vals = [v for _, v in s.discretized()]
    assert np.all(np.diff(vals) >= 0)
    assert vals[-1] == 10.0
    # after one time constant the level is near 1 - 1/e of the target
    assert s.value_at(1.5) == pytest.approx(10 * (1 - np.exp(-1)), rel=0.06)


def test_constant_schedule_is_bitwise_identical(rng):
    model, _, _ = random_model(rng, n=3, with_channel=True)
    rho = QuantumState(model.layout, random_density(rng, 3))
    t = np.linspace(0, 3, 7)
    X = {"x": QOperator(model.layout, random_hermitian(rng, 3))}
    a = evolve(model, rho, t, X)
    b = evolve(model, rho, t, X, schedule=Schedule.constant(model.channel.value))
    np.testing.assert_array_equal(a["x"], b["x"])


@pytest.mark.parametrize("method", ["expm", "ode"])
def test_step_schedule_matches_piecewise_oracle(rng, method):
    model, H, raw = random_model(rng, n=3, with_channel=True)
    V = model.channel.operator.dense()
    rho0 = random_density(rng, 3)
    X = random_hermitian(rng, 3)
    t = np.array([0.0, 0.7, 1.9])
    sched = Schedule.step(1.3, 1.0, 4.0)
    r = evolve(model, QuantumState(model.layout, rho0), t, {"x": QOperator(model.layout, X)},
               schedule=sched, method=method, rtol=1e-11, atol=1e-13)
    mid = expm_propagate(H + V, raw, rho0, 1.3)
    end = expm_propagate(H + 2.0 * V, raw, mid, 0.6)
    assert r["x"][2] == pytest.approx(np.trace(X @ end), abs=1e-8)
    assert r["x"][1] == pytest.approx(np.trace(X @ expm_propagate(H + V, raw, rho0, 0.7)), abs=1e-8)


def test_closed_schedule_with_eig(rng):
    lay = single_layout(3)
    V = QOperator(lay, random_hermitian(rng, 3))
    model = LindbladModel(lay, QOperator(lay, random_hermitian(rng, 3)), channel=Channel("c", V, 0.0))
    t = np.linspace(0, 2, 5)
    sched = Schedule.step(1.0, 0.0, 1.0)
    psi = basis_state(lay, {"mode": 0})
    a = evolve(model, psi, t, {"x": V}, schedule=sched, method="eig")
    b = evolve(model, psi.to_mixed(), t, {"x": V}, schedule=sched, method="ode", rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(a["x"], b["x"], atol=1e-8)


# steady state --------------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["dense", "direct", "iterative"])
@pytest.mark.parametrize("seed", range(4))
def test_steady_state_matches_null_space(seed, method):
    rng = np.random.default_rng(3000 + seed)
    model, H, raw = random_model(rng, n=5)
    rho = steady_state(model, method=method, drop_tol=1e-8)
    np.testing.assert_allclose(rho.density_matrix(), nullspace_steady_state(H, raw), atol=1e-9)


def test_thermal_oscillator_steady_state():
    lay = single_layout(40)
    a = destroy(lay, "mode")
    nth, kappa = 0.7, 0.3
    model = LindbladModel(lay, number(lay, "mode"), ((kappa * (nth + 1), a), (kappa * nth, a.dag())))
    rho = steady_state(model)
    np.testing.assert_allclose(np.diag(rho.density_matrix()).real, thermal_populations(40, nth), atol=1e-10)
    assert rho.info["residual"] <= rho.info["residual_bound"]


def test_degenerate_steady_state_is_reported():
    lay = single_layout(3)
    model = LindbladModel(lay, 0.0 * identity(lay))
    with pytest.raises(SolverError):
        steady_state(model)
    assert issubclass(SteadyStateError, SolverError)
