import numpy as np
import pytest

from mfcsim import experiments as X
from mfcsim import models as M
from mfcsim.operators import basis_state, single_layout
from mfcsim.supermodes import mfc_rate
from oracles import dressed_detuning_by_root

TWO_PI = 2 * np.pi


@pytest.fixture(scope="module")
def paper():
    return X.paper_swap_params()


# helpers ---------------------------------------------------------------------------------

def test_resolve_detuning(paper):
    assert X.resolve_detuning(paper, "bare") == paper.Omega_M
    assert X.resolve_detuning(paper, "bare", sideband=-1) == -paper.Omega_M
    dressed = X.resolve_detuning(paper, "dressed")
    assert dressed == pytest.approx(dressed_detuning_by_root(paper.Omega_M, paper.g, paper.J), rel=1e-12)
    with pytest.raises(ValueError):
        X.resolve_detuning(paper, "nearest")


def test_oscillation_period_of_cos_squared():
    t = np.linspace(0, 10, 201)
    assert X.oscillation_period(t, np.cos(np.pi * t / 7.3) ** 2) == pytest.approx(7.3, rel=1e-4)


def test_phonon_decay_rate_fit():
    t = np.linspace(0, 50, 51)
    assert X.phonon_decay_rate(t, 0.5 + 2 * np.exp(-0.07 * t), n_th=0.5) == pytest.approx(0.07, rel=1e-10)
    with pytest.raises(ValueError):
        X.phonon_decay_rate(t, np.zeros_like(t))


def test_swap_fidelity_inputs():
    lay = single_layout(4, name="phonon")
    assert X.swap_fidelity(basis_state(lay, {"phonon": 1})) == pytest.approx(1.0)
    assert X.swap_fidelity(basis_state(lay, {"phonon": 2})) == 0.0
    with pytest.raises(TypeError):
        X.swap_fidelity(0.5)


def test_swap_protocol_validation_and_window():
    with pytest.raises(ValueError):
        X.SwapProtocol(pump="adiabatic")
    with pytest.raises(ValueError):
        X.SwapProtocol(switch_off="fixed")
    w = X.SwapProtocol(switch_off="fixed", t_off=1.05, grid_step=0.2).window(10.0)
    assert w[-1] == pytest.approx(1.05) and w[0] == 0.0
    assert X.SwapProtocol(grid_step=0.5, search_factor=2.0).window(5.0)[-1] == pytest.approx(10.0)


def test_mechanical_supermode_operators():
    lay = M.full_mech_layout()
    sup = X.mechanical_supermodes(lay)
    for k in ("b0", "b_plus", "b_minus"):
        b = sup[k]
        one = b.dag().matrix @ basis_state(lay).data
        assert np.vdot(one, one).real == pytest.approx(1.0, rel=1e-14)


def test_mech_projector_requires_trailing_resonators():
    lay = M.three_cavity_layout()
    with pytest.raises(ValueError):
        X.mech_single_phonon_projector(lay)


# vacuum swap ---------------------------------------------------------------------------------

def test_vacuum_swap_dressed_resonance(paper):
    r = X.run_vacuum_swap(paper, n_points=601)
    m = r.metrics
    assert m["period_ns"] == pytest.approx(4500.0, rel=0.01)
    assert m["min_emitter_population"] < 1e-3
    assert m["max_discrepancy"] < 0.02
    assert r.full.real("emitter")[0] == 1.0


def test_vacuum_swap_bare_resonance_misses(paper):
    # the dispersive shift from the detuned supermodes is far larger than gamma
    r = X.run_vacuum_swap(paper, resonance="bare", n_points=301)
    assert r.metrics["min_emitter_population"] > 0.9


def test_vacuum_swap_rejects_losses(paper):
    with pytest.raises(ValueError):
        X.run_vacuum_swap(paper.replace(kappa=1.0))


def test_vacuum_swap_reduced_model_matches_formula(paper):
    r = X.run_vacuum_swap(paper, n_points=201)
    gamma = mfc_rate(paper.g, paper.g0, paper.J)
    np.testing.assert_allclose(r.reduced.real("emitter"), np.cos(gamma * r.reduced.times) ** 2, atol=1e-9)


# pumped swap --------------------------------------------------------------------------------

def test_lossless_pumped_swap_fidelity(paper):
    r = X.run_pumped_swap(paper, release=False)
    # the residual is the emitter weight left in the detuned supermodes
    assert r.metrics["fidelity"] == pytest.approx(1 - paper.g ** 2 / (2 * paper.J ** 2), abs=1e-4)
    assert r.metrics["t_half_predicted_ns"] == pytest.approx(
        np.pi / (2 * mfc_rate(paper.g, paper.g0, paper.J) * np.sqrt(5e4)))
    assert r.release is None


def test_pumped_swap_release_measures_mechanical_decay():
    p = X.paper_pumped_params(Gamma=0.05 * TWO_PI * 0.1, kappa=TWO_PI * 0.5)
    r = X.run_pumped_swap(p, X.SwapProtocol(release_time=2000.0, release_points=21), max_excitations=2)
    assert r.metrics["decay_rate_ratio"] == pytest.approx(1.0, rel=0.05)
    assert r.pump_off.value_at(r.metrics["t_off_ns"]) == 0.0


def test_pumped_swap_rejects_zero_pump(paper):
    with pytest.raises(ValueError):
        X.run_pumped_swap(paper, n_cav=0.0)
    with pytest.raises(ValueError):
        X.run_pumped_swap(paper, model="two-cavity")


def test_full_mech_pumped_matches_reduced():
    p = X.paper_pumped_params(J_M=TWO_PI * 0.05, Gamma=TWO_PI * 0.005)
    full = X.run_pumped_swap(p, model="full-mech", max_excitations=2, release=False)
    red = X.run_pumped_swap(p, max_excitations=2, release=False)
    assert full.metrics["fidelity"] == pytest.approx(red.metrics["fidelity"], rel=0.01)


# scans ------------------------------------------------------------------------------------

def test_fidelity_scan_is_deterministic_across_workers(paper):
    p = X.paper_pumped_params()
    axes = [("Gamma", [TWO_PI * 1e-3, TWO_PI * 1e-1]), ("kappa", [TWO_PI * 0.01, TWO_PI * 10.0])]
    a = X.swap_fidelity_scan(p, axes, max_excitations=2, jobs=1)
    b = X.swap_fidelity_scan(p, axes, max_excitations=2, jobs=2)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.valid.all()
    assert a.values[0, 0] > a.values[1, 1]
    assert len(list(a.rows())) == 4


def test_fidelity_scan_axis_validation(paper):
    with pytest.raises(ValueError):
        X.swap_fidelity_scan(paper, [("Gamma", [1.0])])
    with pytest.raises(ValueError):
        X.swap_fidelity_scan(paper, [("Gamma", [1.0]), ("omega_c", [1.0])])
    with pytest.raises(ValueError):
        X.swap_fidelity_scan(paper, [("Gamma", [1.0]), ("Gamma", [2.0])])


def test_cooling_without_pump_reaches_bath():
    p = X.paper_cooling_params(n_th=0.3, Gamma=0.1 * X.paper_cooling_params().Omega_M)
    nb, info = X.steady_phonon_number(p, 0.0, phonon_dim=10)
    assert nb == pytest.approx(0.3, rel=1e-3)
    assert info["residual"] <= info["residual_bound"]


def test_pumped_cooling_lowers_occupation():
    p = X.paper_cooling_params(n_th=0.3, Gamma=0.1 * X.paper_cooling_params().Omega_M)
    nb, _ = X.steady_phonon_number(p, 1e3, phonon_dim=10)
    assert 0.0 < nb < 0.3


def test_cooling_scan_requires_mechanical_loss():
    with pytest.raises(ValueError):
        X.cooling_scan(X.paper_cooling_params(Gamma_M=0.0), [1.0], [0.0])


def test_grown_dims():
    assert X._grown_dims(15, 32) == [15, 23, 32]
    assert X._grown_dims(32, 32) == [32]


# coupled-mode curves ------------------------------------------------------------------------

def test_cmt_curves_shapes_and_limits():
    c = X.cmt_curves(1.0, np.linspace(-3, 3, 13))
    assert all(len(v) == 13 for v in c.values())
    mid = 6
    assert c["two_g_plus"][mid] == pytest.approx(1 / np.sqrt(2))
    assert c["three_g_zero"][mid] == 0.0
    np.testing.assert_allclose(c["two_g_plus"] ** 2 + c["two_g_minus"] ** 2, 1.0, atol=1e-14)
    np.testing.assert_allclose(c["three_omega_plus"], np.sqrt(2 + c["delta_over_J"] ** 2), rtol=1e-14)


def test_cooling_matches_rate_equation_estimate():
    # weak-coupling sideband cooling: n_b = n_th Gamma_M / (Gamma_M + 4 G^2 / Gamma_e)
    # with G = gamma sqrt(n_cav) and Gamma_e = Gamma + 2 Gamma_pm
    from mfcsim.supermodes import parasitic_decay_rate

    p = X.paper_cooling_params()
    p = p.replace(Gamma=1e-3 * p.Omega_M)
    n_cav = 1e3
    G = mfc_rate(p.g, p.g0, p.J) * np.sqrt(n_cav)
    width = p.Gamma + 2 * parasitic_decay_rate(p.g, p.kappa, p.J)
    estimate = p.n_th * p.Gamma_M / (p.Gamma_M + 4 * G ** 2 / width)
    nb, _ = X.steady_phonon_number(p, n_cav)
    assert nb == pytest.approx(estimate, rel=0.1)
