import numpy as np
import pytest

from svikit.analysis import (
    ConvergenceReport,
    TemperatureSeries,
    check_momentum,
    check_symplectic,
    energy_series,
    estimate_strong_order,
    gibbs_initial_states,
    symplectic_defect,
    temperature_study,
    trend_slope,
)
from svikit.errors import SymmetryNotDeclared
from svikit.geometry import axis_angle
from svikit.integrators import StepperConfig, simulate, simulate_rigid, variational_euler_step
from svikit.noise import sample_path
from svikit.systems import (
    LieBodyState,
    PhaseState,
    Symmetry,
    make_ballistic_analog,
    make_constrained_pendulum,
    make_coupled,
    make_oscillator,
    make_rigid_pair,
    make_two_body,
)


def test_symplectic_defect_of_rotation_and_shear():
    th = 0.3
    rot = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
    assert symplectic_defect(rot) < 1e-15
    assert symplectic_defect(np.diag([2.0, 1.0])) == pytest.approx(np.sqrt(2.0), rel=1e-14)


def test_variational_euler_is_symplectic():
    sys = make_oscillator(1.0, 1.0, 0.0)
    rep = check_symplectic(sys, lambda s, st, dB, cfg: variational_euler_step(s, st, cfg), fd_step=1e-5)
    assert rep.max_defect <= 1e-8 and rep.samples == 100 and rep.fd_step == 1e-5


@pytest.mark.parametrize("sigma", [0.0, 0.5, 2.0])
def test_svi_symplectic_on_oscillator(sigma):
    assert check_symplectic(make_oscillator(1.0, 1.0, sigma), "svi").max_defect <= 1e-6


def test_eem_defect_matches_symbolic_value():
    # EEM on the oscillator: DF = [[1, h/m], [-h k, 1]], DF^T J DF = (1 + h^2 k / m) J
    h, k, m = 0.1, 1.0, 1.0
    rep = check_symplectic(make_oscillator(m, k, 0.5), "eem", cfg=StepperConfig(h))
    assert rep.max_defect == pytest.approx(h * h * k / m * np.sqrt(2.0), rel=1e-6)
    assert rep.max_defect > 1e-3


def test_svi_defect_does_not_depend_on_sigma():
    defects = [check_symplectic(make_coupled(sigma=s), "svi", seed=3).max_defect for s in (0.0, 0.5, 2.0)]
    assert max(defects) <= 1e-6
    floor = 1e-12
    d = np.maximum(defects, floor)
    assert d.max() / d.min() <= 10.0


def test_symplectic_check_rejects_constraints():
    with pytest.raises(ValueError):
        check_symplectic(make_constrained_pendulum(), "svi")


# -- momentum maps ---------------------------------------------------------------------


def _two_body_run(sys, method, h):
    n = min(500, int(round(20 / h)))
    s0 = PhaseState.from_qp(sys, [0, 0, 0, 1.0, 0.2, -0.1], [0.3, -0.1, 0.2, -0.2, 0.4, 0.1])
    inc = np.sqrt(h) * np.random.default_rng(1).standard_normal((n, sys.n_noise))
    return s0, simulate(sys, method, s0, inc, StepperConfig(h))


@pytest.mark.parametrize("h", [0.01, 0.1, 0.5])
def test_two_body_momentum_conserved_by_svi(h):
    sys = make_two_body()
    s0, tr = _two_body_run(sys, "svi", h)
    for name in ("translation_x", "translation_y", "translation_z"):
        assert check_momentum(sys, name, tr) <= 1e-12 * (1 + np.linalg.norm(s0.p))


def test_eem_also_conserves_translation_momentum():
    sys = make_two_body()
    s0, tr = _two_body_run(sys, "eem", 0.05)
    assert check_momentum(sys, "translation_x", tr) <= 1e-12 * (1 + np.linalg.norm(s0.p))


def test_symmetry_breaking_noise_reports_drift():
    sys = make_two_body(anchored_noise=0.3)
    _, tr = _two_body_run(sys, "svi", 0.1)
    with pytest.raises(SymmetryNotDeclared):
        check_momentum(sys, "translation_x", tr)
    hyp = Symmetry("translation_x", lambda q: np.broadcast_to(np.eye(6)[0] + np.eye(6)[3], np.shape(q)))
    assert check_momentum(sys, hyp, tr) > 1e-3


def test_rigid_momentum_monitor():
    sys = make_rigid_pair()
    R = np.stack([axis_angle([1, 0, 0], 0.2), axis_angle([0, 1, 1], 1.0)])
    s0 = LieBodyState.from_velocities(sys, [[0, 0, 0], [1, 0, 0]], [[0.1, 0, 0], [0, 0.2, 0]], R, [[0, 0, 1], [1, 0, 0]])
    inc = sample_path(2, (0, 5), 7, sys.n_noise).steps()
    states, _ = simulate_rigid(sys, s0, inc, StepperConfig(5 / 128))
    assert check_momentum(sys, "translation_y", states) <= 1e-12 * (1 + np.linalg.norm(s0.p.sum(0)))
    with pytest.raises(SymmetryNotDeclared):
        check_momentum(sys, "rotation_z", states)


# -- strong order -----------------------------------------------------------------------


def test_report_validation_and_csv():
    with pytest.raises(ValueError):
        ConvergenceReport([0.1, 0.2], [1.0, 2.0], 1.0, 0.0, 10)
    rep = ConvergenceReport([0.5, 0.25], [0.2, 0.1], 1.0, -1.0, 10)
    assert rep.to_csv().splitlines() == ["h,ms_error", "0.5,0.2", "0.25,0.1"]
    assert rep.summary()["fitted_slope"] == 1.0


def test_exact_model_flagged():
    # uniform motion: every grid reproduces q0 + t p0 exactly, so no slope is fitted
    sys = make_oscillator(1.0, 0.0, 0.0)
    rep = estimate_strong_order(sys, "svi", PhaseState.from_qp(sys, [0.5], [0.25]), levels=range(2, 5), paths=8,
                                seed=1, levels_ref=8)
    assert rep.exact and np.isnan(rep.fitted_slope)
    assert max(rep.ms_errors) <= 1e-12


def test_additive_free_particle_momentum_exact():
    # with U = 0 and gamma = sigma q the momentum is p0 + sigma W on every grid;
    # only the position quadrature differs from the reference
    sys = make_oscillator(1.0, 0.0, 1.0)
    path = sample_path(3, (0.0, 1.0), 4, 1)
    tr = simulate(sys, "svi", PhaseState.from_qp(sys, [0.0], [0.0]), path.steps(), StepperConfig(path.h))
    np.testing.assert_allclose(tr.final.p[0], path.endpoint[0], atol=1e-14)


def test_levels_ref_precondition():
    sys = make_oscillator(1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        estimate_strong_order(sys, "svi", PhaseState.from_qp(sys, [1.0], [0.0]), levels=range(2, 6), levels_ref=8)


def test_strong_order_reproducible_and_thread_independent():
    sys = make_oscillator(1.0, 1.0, 0.5)
    s0 = PhaseState.from_qp(sys, [1.0], [0.0])
    kw = dict(levels=range(3, 6), paths=64, seed=5, levels_ref=9)
    a = estimate_strong_order(sys, "svi", s0, **kw)
    b = estimate_strong_order(sys, "svi", s0, **kw)
    c = estimate_strong_order(sys, "svi", s0, threads=3, **kw)
    assert a.ms_errors == b.ms_errors == c.ms_errors
    assert a.fitted_slope == c.fitted_slope


def test_eem_has_larger_constant():
    sys = make_oscillator(1.0, 1.0, 0.5)
    s0 = PhaseState.from_qp(sys, [1.0], [0.0])
    kw = dict(levels=range(3, 6), paths=200, seed=2, levels_ref=9)
    svi = estimate_strong_order(sys, "svi", s0, **kw)
    eem = estimate_strong_order(sys, "eem", s0, **kw)
    assert 0.7 < eem.fitted_slope < 1.3
    assert eem.ms_errors[0] > svi.ms_errors[0]


def test_reference_halving_within_budget():
    sys = make_coupled()
    s0 = PhaseState.from_qp(sys, [0.5, -0.3], [0.2, 0.1])
    rep = estimate_strong_order(sys, "svi", s0, levels=range(3, 6), paths=100, seed=1, levels_ref=10,
                                check_reference=True)
    assert rep.reference_check < rep.ms_errors[0] / 8


# -- temperature ------------------------------------------------------------------------


def test_temperature_series_helpers():
    t = np.linspace(0, 10, 11)
    s = TemperatureSeries(t, 2.0 + 0.1 * t, 2.0, "svi", 2)
    assert s.tail_mean(5.0) == pytest.approx(2.75)
    assert s.tail_trend(5.0) == pytest.approx(0.1)
    np.testing.assert_allclose(s.mean_temperature, s.mean_kinetic)
    assert s.time_averaged[0] == 2.0
    with pytest.raises(ValueError):
        TemperatureSeries(t, t[:-1], 1.0, "svi", 1)
    assert trend_slope([0, 1, 2], [1, 1, 1]) == pytest.approx(0.0, abs=1e-15)


def test_gibbs_initial_states_match_equipartition():
    sys = make_ballistic_analog()
    s = gibbs_initial_states(sys, 20_000, 0)
    ke = sys.kinetic(s.p)
    assert abs(ke.mean() - 1.0) < 0.03
    # spring stretch variance kT / kc
    stretch = s.q[:, 1] - s.q[:, 0]
    assert abs(stretch.var() / (1.0 / 0.05) - 1.0) < 0.05


def test_temperature_study_shares_noise_and_is_thread_independent():
    sys = make_ballistic_analog()
    a = temperature_study(sys, ("svi", "eem", "iem"), (0.0, 10.0), 0.1, 40, seed=2)
    b = temperature_study(sys, ("svi", "eem", "iem"), (0.0, 10.0), 0.1, 40, seed=2, threads=3)
    assert len({s.audit for s in a.values()}) == 1
    for m in a:
        assert len(a[m].times) == 101 and a[m].target == 1.0
        np.testing.assert_array_equal(a[m].mean_kinetic, b[m].mean_kinetic)
    # identical initial ensemble
    assert len({s.mean_kinetic[0] for s in a.values()}) == 1


def test_temperature_study_needs_thermostat():
    with pytest.raises(ValueError):
        temperature_study(make_oscillator(), ("svi",), (0, 1), 0.1, 2)


# -- energy -----------------------------------------------------------------------------


def test_svi_energy_bounded_without_trend():
    sys = make_oscillator(1.0, 1.0, 0.0)
    h = 0.1
    tr = simulate(sys, "svi", PhaseState.from_qp(sys, [1.0], [0.0]), np.zeros((10_000, 1)), StepperConfig(h))
    H = energy_series(sys, tr)
    assert np.max(np.abs(H - H[0])) < 0.1
    assert abs(trend_slope(tr.t, H)) < 1e-6


def test_eem_energy_grows_monotonically():
    sys = make_oscillator(1.0, 1.0, 0.0)
    tr = simulate(sys, "eem", PhaseState.from_qp(sys, [1.0], [0.0]), np.zeros((100, 1)), StepperConfig(0.1))
    assert np.all(np.diff(energy_series(sys, tr)) > 0)


def test_equilibrium_energy_constant():
    sys = make_oscillator(1.0, 1.0, 0.0)
    tr = simulate(sys, "svi", PhaseState.from_qp(sys, [0.0], [0.0]), np.zeros((50, 1)), StepperConfig(0.1))
    assert np.all(energy_series(sys, tr) == 0.0)
