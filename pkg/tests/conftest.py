import numpy as np
import pytest

from hvdcmpc import harness, linear, params, plant


@pytest.fixture(scope="session")
def cfg():
    return params.default_config()


@pytest.fixture(scope="session")
def coeffs1(cfg):
    return plant.PlantCoeffs(cfg.station1, cfg.pll, cfg.damping, cfg.base, cfg.sim.dt_max)


@pytest.fixture(scope="session")
def op_invert(coeffs1):
    """Operating point exporting 0.7 pu into the ac grid."""
    return linear.solve_operating_point(coeffs1, 0.7, 0.0, 1.0)


@pytest.fixture(scope="session")
def op_rectify(coeffs1):
    """Operating point drawing 0.7 pu from the ac grid (stable dc mode)."""
    return linear.solve_operating_point(coeffs1, -0.7, 0.0, 1.0)


@pytest.fixture(scope="session")
def lm_invert(coeffs1, op_invert):
    return linear.linearize(coeffs1, op_invert)


@pytest.fixture(scope="session")
def lm_rectify(coeffs1, op_rectify):
    return linear.linearize(coeffs1, op_rectify)


_TIMINGS = {}


@pytest.fixture(scope="session")
def step_ts(cfg):
    """The compressed reference-step scenario on the point-to-point system."""
    import time
    start = time.perf_counter()
    ts = harness.simulate_p2p(cfg)
    _TIMINGS["step_scenario"] = time.perf_counter() - start
    return ts


@pytest.fixture(scope="session")
def step_runtime():
    return _TIMINGS


@pytest.fixture(scope="session")
def sweep_result(cfg):
    scn = params.Scenario(duration=0.12, i_ld_ref=0.5, ref_ramp=0.0,
                          events=(params.ScenarioEvent(0.02, "i_ld_ref", 0.75),))
    return harness.weight_sweep(cfg, scn, [0.4, 0.6, 0.9])


def assert_close(actual, expected, tol, label=""):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    err = np.max(np.abs(actual - expected))
    assert err <= tol, f"{label}: |{actual} - {expected}| = {err} > {tol}"
