import math

import numpy as np
import pytest

from hvdcmpc import linear, params, plant
from hvdcmpc.plant import PlantInput, PlantState

from conftest import assert_close

OMEGA_B = 2.0 * math.pi * 50.0


def test_operating_point_zero_power(coeffs1):
    op = linear.solve_operating_point(coeffs1, 0.0, 0.0, 1.0)
    assert op.residual < 1e-8
    assert op.u0.v_cvd == pytest.approx(op.x0.v_od, abs=1e-9)
    assert op.x0.i_od == pytest.approx(0.0, abs=1e-9)
    assert op.u0.i_dc_line == pytest.approx(0.0, abs=1e-9)


def test_operating_point_export(coeffs1, op_invert):
    assert op_invert.residual < 1e-8
    assert op_invert.x0.i_ld == 0.7
    assert op_invert.x0.i_lq == 0.0
    assert op_invert.x0.v_dc == 1.0
    # plant initialized there stays put
    s = op_invert.x0
    for _ in range(100):
        s = plant.step_rk4(s, op_invert.u0, 1e-5, coeffs1)
    assert_close(np.array(s), np.array(op_invert.x0), 1e-9, "stay-put")


def test_operating_point_infeasible_target(coeffs1):
    with pytest.raises(linear.OperatingPointError):
        linear.solve_operating_point(coeffs1, 100.0, 0.0, 1.0)


def test_solve_equilibrium_pin_count(coeffs1):
    with pytest.raises(ValueError, match="exactly 3"):
        linear.solve_equilibrium(coeffs1, pinned={"i_ld": 0.0})


def test_linearize_paper_entries(lm_invert, cfg):
    red = linear.reduce_model(lm_invert)
    l_c, r_c = cfg.station1.l_c, cfg.station1.r_c
    assert red.a[0, 0] == pytest.approx(-OMEGA_B * r_c / l_c, rel=1e-6)
    assert red.a[0, 0] == pytest.approx(-3.14159265, abs=1e-4)
    assert red.b[0, 0] == pytest.approx(OMEGA_B / l_c, rel=1e-6)
    assert red.b[0, 0] == pytest.approx(2094.395, abs=0.05)


def test_output_selector(lm_invert, op_invert):
    y = lm_invert.c @ np.array(op_invert.x0)
    assert y[0] == pytest.approx(op_invert.x0.i_ld)
    assert y[1] == pytest.approx(op_invert.x0.i_lq)
    assert np.all(lm_invert.d == 0.0)


def test_analytic_vs_numeric_agreement(lm_invert, op_invert, cfg):
    red = linear.reduce_model(lm_invert)
    ana = linear.analytic_reduced(cfg.station1, cfg.base.omega_b, op_invert)
    diffs = linear.compare_reduced_models(red, ana, cfg.station1.omega_g)
    unexpected = [d for d in diffs if not d.disputed]
    assert unexpected == []
    disputed = {(d.matrix, d.row, d.col) for d in diffs if d.disputed}
    assert disputed == {("b", 2, 0), ("b", 2, 1)}


def test_transfer_function_high_frequency_limit(lm_invert):
    g = linear.transfer_function(lm_invert, 1e9 + 0j)
    assert np.max(np.abs(g)) < 1e-5


def test_transfer_function_dq_symmetry(lm_rectify):
    red = linear.reduce_model(lm_rectify)
    for s in (1j * 50.0, 1j * 700.0, 100.0 + 1j * 2000.0):
        g = linear.transfer_function(red, s)
        assert abs(g[0, 0] - g[1, 1]) < 1e-8
        assert abs(g[0, 1] + g[1, 0]) < 1e-8


def test_transfer_function_singular_frequency():
    a = np.array([[0.0, 1.0], [-1.0, 0.0]])
    lm = linear.LinearModel(a=a, b=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)), op=None)
    with pytest.raises(ValueError, match="resonance"):
        linear.transfer_function(lm, 1j * 1.0)


def test_dc_gain_matches_long_simulation(coeffs1, op_rectify, lm_rectify):
    """Steady-state gain of the nonlinear plant under a small step equals the
    full-model G(0); run at the rectifying point so the open loop is stable."""
    g0 = linear.dc_gain(lm_rectify)
    du = 1e-3
    u = PlantInput(op_rectify.u0.v_cvd + du, op_rectify.u0.v_cvq,
                   op_rectify.u0.v_g_mag, op_rectify.u0.i_dc_line)
    s = op_rectify.x0
    dt = 2e-5
    for _ in range(25000):
        s = plant.step_rk4(s, u, dt, coeffs1)
    sim_gain = np.array([(s.i_ld - op_rectify.x0.i_ld) / du,
                         (s.i_lq - op_rectify.x0.i_lq) / du])
    assert_close(sim_gain, g0[:, 0], 2e-3, "dc gain")


def test_discretize_scalar_closed_form():
    alpha = 37.0
    lm = linear.LinearModel(a=np.array([[-alpha]]), b=np.array([[2.0]]),
                            c=np.eye(1), d=np.zeros((1, 1)), op=None)
    dm = linear.discretize_zoh(lm, 1e-3)
    assert dm.a_d[0, 0] == pytest.approx(math.exp(-alpha * 1e-3), abs=1e-12)
    expected_b = 2.0 * (1.0 - math.exp(-alpha * 1e-3)) / alpha
    assert dm.b_d[0, 0] == pytest.approx(expected_b, abs=1e-12)


def test_discretize_integrator():
    lm = linear.LinearModel(a=np.zeros((2, 2)), b=np.eye(2), c=np.eye(2),
                            d=np.zeros((2, 2)), op=None)
    dm = linear.discretize_zoh(lm, 0.25)
    assert_close(dm.a_d, np.eye(2), 1e-14, "A_d")
    assert_close(dm.b_d, 0.25 * np.eye(2), 1e-14, "B_d")


def test_discretize_eigenvalue_mapping(lm_invert):
    ts = 500e-6
    dm = linear.discretize_zoh(linear.reduce_model(lm_invert), ts)
    eig_c = np.linalg.eigvals(linear.reduce_model(lm_invert).a)
    eig_d = np.linalg.eigvals(dm.a_d)
    mapped = np.sort_complex(np.exp(eig_c * ts))
    assert_close(np.abs(np.sort_complex(eig_d) - mapped), 0.0, 1e-8, "eig map")


def test_discretize_rejects_bad_ts(lm_invert):
    with pytest.raises(ValueError, match="ts"):
        linear.discretize_zoh(lm_invert, 0.0)


def test_zoh_matches_fine_rk4():
    """Iterating the discrete model equals integrating the continuous one
    under piecewise-constant input."""
    rng = np.random.default_rng(11)
    a = np.array([[-40.0, 300.0], [-300.0, -40.0]])
    b = np.array([[1.0], [0.5]])
    lm = linear.LinearModel(a=a, b=b, c=np.eye(2), d=np.zeros((2, 1)), op=None)
    ts = 1e-3
    dm = linear.discretize_zoh(lm, ts)
    x_d = np.zeros(2)
    x_c = np.zeros(2)
    dt = 1e-6
    sub = round(ts / dt)
    for k in range(20):
        u = rng.normal()
        x_d = dm.a_d @ x_d + dm.b_d[:, 0] * u
        for _ in range(sub):
            k1 = a @ x_c + b[:, 0] * u
            k2 = a @ (x_c + 0.5 * dt * k1) + b[:, 0] * u
            k3 = a @ (x_c + 0.5 * dt * k2) + b[:, 0] * u
            k4 = a @ (x_c + dt * k3) + b[:, 0] * u
            x_c = x_c + dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
        assert_close(x_d, x_c, 1e-9, f"step {k}")


def test_eigenvalues_rotation_block():
    a = np.array([[0.0, OMEGA_B], [-OMEGA_B, 0.0]])
    lm = linear.LinearModel(a=a, b=np.zeros((2, 1)), c=np.eye(2),
                            d=np.zeros((2, 1)), op=None)
    eig = linear.eigenvalues(lm)
    assert_close(sorted(eig.imag), [-OMEGA_B, OMEGA_B], 1e-9, "rotation")
    assert_close(eig.real, 0.0, 1e-9, "rotation real")


def test_eigenvalues_diagonal_and_order():
    a = np.diag([-5.0, 2.0, -1.0])
    lm = linear.LinearModel(a=a, b=np.zeros((3, 1)), c=np.eye(3),
                            d=np.zeros((3, 1)), op=None)
    eig = linear.eigenvalues(lm)
    assert list(eig.real) == [2.0, -1.0, -5.0]


def test_small_signal_validity(coeffs1, op_rectify, lm_rectify):
    """1e-3 input step: nonlinear and linear responses agree to 1e-5 over 50 ms."""
    dt = 1e-5
    dm = linear.discretize_zoh(lm_rectify, dt)
    du = np.array([1e-3, 0.0, 0.0, 0.0])
    u = PlantInput(op_rectify.u0.v_cvd + 1e-3, op_rectify.u0.v_cvq,
                   op_rectify.u0.v_g_mag, op_rectify.u0.i_dc_line)
    s = op_rectify.x0
    x_lin = np.zeros(13)
    worst = 0.0
    for _ in range(5000):
        s = plant.step_rk4(s, u, dt, coeffs1)
        x_lin = dm.a_d @ x_lin + dm.b_d @ du
        worst = max(worst, np.max(np.abs(np.array(s) - np.array(op_rectify.x0) - x_lin)))
    assert worst < 1e-5
