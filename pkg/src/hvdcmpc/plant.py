"""Continuous-time nonlinear average model of one converter station.

State vector (13 entries, per unit except angles):

    i_ld, i_lq      converter reactor current
    v_dc            dc-link voltage
    i_od, i_oq      grid-side current (lumped grid + transformer branch)
    v_od, v_oq      filter-capacitor voltage
    v_pll_d/q       PLL input low-pass states
    eps_pll         PLL integrator state (rad*s)
    d_theta_pll     PLL angle relative to the grid voltage vector (rad)
    phi_d, phi_q    damping low-pass states

The dq frame is the synchronization frame; the grid source appears rotated
by -d_theta_pll.  The dc-link equation embeds the lossless converter power
balance, so i_dc * v_dc == i_ld*v_cvd + i_lq*v_cvq holds identically.

All functions here are pure and allocation-light: the simulation loop calls
them hundreds of thousands of times, so states travel as NamedTuples of
plain floats rather than numpy arrays.
"""

import math
from typing import NamedTuple

from .params import (
    BaseValues,
    DampingParams,
    PllParams,
    StationParams,
    effective_grid_impedance,
)


class PlantError(RuntimeError):
    """Raised on singular or non-finite plant evaluations."""


class PlantState(NamedTuple):
    i_ld: float
    i_lq: float
    v_dc: float
    i_od: float
    i_oq: float
    v_od: float
    v_oq: float
    v_pll_d: float
    v_pll_q: float
    eps_pll: float
    d_theta_pll: float
    phi_d: float
    phi_q: float


class PlantInput(NamedTuple):
    v_cvd: float
    v_cvq: float
    v_g_mag: float
    i_dc_line: float


N_STATES = len(PlantState._fields)
REDUCED_STATES = PlantState._fields[:7]

V_DC_MIN = 1.0e-6


class PlantCoeffs:
    """Pre-divided coefficient set for fast derivative evaluation."""

    __slots__ = (
        "omega_b", "omega_g", "rot", "wb_lc", "rc_wb_lc", "wb_cdc", "c_dc",
        "wb_leff", "reff_wb_leff", "wb_cf", "w_lp", "k_p_pll", "k_i_pll",
        "omega_ad", "v_g_mag", "dt_max", "station", "pll", "damping",
    )

    def __init__(self, station: StationParams, pll: PllParams,
                 damping: DampingParams, base: BaseValues, dt_max: float = 1.0e-4):
        r_eff, l_eff = effective_grid_impedance(station)
        wb = base.omega_b
        self.omega_b = wb
        self.omega_g = station.omega_g
        self.rot = wb * station.omega_g
        self.wb_lc = wb / station.l_c
        self.rc_wb_lc = wb * station.r_c / station.l_c
        self.wb_cdc = wb / station.c_dc
        self.c_dc = station.c_dc
        self.wb_leff = wb / l_eff
        self.reff_wb_leff = wb * r_eff / l_eff
        self.wb_cf = wb / station.c_f
        self.w_lp = pll.omega_lp
        self.k_p_pll = pll.k_p
        self.k_i_pll = pll.k_i
        self.omega_ad = damping.omega_ad
        self.v_g_mag = station.v_g_mag
        self.dt_max = dt_max
        self.station = station
        self.pll = pll
        self.damping = damping


def derivative(s: PlantState, u: PlantInput, c: PlantCoeffs) -> tuple:
    """Time derivative of the 13-state vector, pu/s (angles rad/s)."""
    v_dc = s.v_dc
    if not v_dc > V_DC_MIN:
        raise PlantError(f"singular state: v_dc = {v_dc!r} (<= {V_DC_MIN} pu)")
    if not (math.isfinite(u.v_cvd) and math.isfinite(u.v_cvq)
            and math.isfinite(u.v_g_mag) and math.isfinite(u.i_dc_line)):
        raise PlantError(f"non-finite plant input {u!r}")

    rot = c.rot
    di_ld = c.wb_lc * (u.v_cvd - s.v_od) - c.rc_wb_lc * s.i_ld + rot * s.i_lq
    di_lq = c.wb_lc * (u.v_cvq - s.v_oq) - rot * s.i_ld - c.rc_wb_lc * s.i_lq
    dv_dc = (c.wb_cdc * u.i_dc_line
             - c.omega_b * (s.i_ld * u.v_cvd + s.i_lq * u.v_cvq) / (c.c_dc * v_dc))
    cos_t = math.cos(s.d_theta_pll)
    sin_t = math.sin(s.d_theta_pll)
    di_od = (c.wb_leff * (s.v_od - u.v_g_mag * cos_t)
             - c.reff_wb_leff * s.i_od + rot * s.i_oq)
    di_oq = (c.wb_leff * (s.v_oq + u.v_g_mag * sin_t)
             - rot * s.i_od - c.reff_wb_leff * s.i_oq)
    dv_od = c.wb_cf * (s.i_ld - s.i_od) + rot * s.v_oq
    dv_oq = c.wb_cf * (s.i_lq - s.i_oq) - rot * s.v_od
    dv_pll_d = c.w_lp * (s.v_od - s.v_pll_d)
    dv_pll_q = c.w_lp * (s.v_oq - s.v_pll_q)
    phase_err = math.atan2(s.v_pll_q, s.v_pll_d)
    d_eps = phase_err
    d_theta = c.omega_b * (c.k_p_pll * phase_err + c.k_i_pll * s.eps_pll)
    dphi_d = c.omega_ad * (s.v_od - s.phi_d)
    dphi_q = c.omega_ad * (s.v_oq - s.phi_q)
    return (di_ld, di_lq, dv_dc, di_od, di_oq, dv_od, dv_oq,
            dv_pll_d, dv_pll_q, d_eps, d_theta, dphi_d, dphi_q)


def pll_frequency(s: PlantState, pll: PllParams, omega_g: float) -> float:
    """Estimated frequency: PI output on the phase error plus grid frequency."""
    if s.v_pll_d == 0.0 and s.v_pll_q == 0.0:
        raise PlantError("PLL phase undefined: both filtered voltages are zero")
    phase_err = math.atan2(s.v_pll_q, s.v_pll_d)
    return pll.k_p * phase_err + pll.k_i * s.eps_pll + omega_g


def power_balance_dc_current(s: PlantState, u: PlantInput) -> float:
    """dc-side converter current from the lossless power balance."""
    if not s.v_dc > V_DC_MIN:
        raise PlantError(f"singular state: v_dc = {s.v_dc!r} (<= {V_DC_MIN} pu)")
    return (s.i_ld * u.v_cvd + s.i_lq * u.v_cvq) / s.v_dc


def step_rk4(s: PlantState, u: PlantInput, dt: float, c: PlantCoeffs) -> PlantState:
    """Classical 4-stage step; the input is held constant across the step."""
    if not 0.0 < dt <= c.dt_max:
        raise PlantError(f"dt = {dt!r} outside (0, {c.dt_max}]")
    h2 = 0.5 * dt
    k1 = derivative(s, u, c)
    s2 = PlantState(*(x + h2 * k for x, k in zip(s, k1)))
    k2 = derivative(s2, u, c)
    s3 = PlantState(*(x + h2 * k for x, k in zip(s, k2)))
    k3 = derivative(s3, u, c)
    s4 = PlantState(*(x + dt * k for x, k in zip(s, k3)))
    k4 = derivative(s4, u, c)
    h6 = dt / 6.0
    out = PlantState(*(x + h6 * (a + 2.0 * (b + cc) + d)
                       for x, a, b, cc, d in zip(s, k1, k2, k3, k4)))
    if not math.isfinite(math.fsum(out)):
        raise PlantError("non-finite state after integration step")
    return out
