"""Decoupled PI current control with outer dc-voltage and reactive loops.

This is the benchmark controller for the second station: an inner current
loop per axis with capacitor-voltage feed-forward and reactor cross-coupling
cancellation, an outer PI that holds the dc-link voltage by moving the
d-axis current reference, and an outer PI that holds reactive power through
the q-axis reference.

Sign conventions: positive i_ld discharges the dc link (inverter operation),
so the dc loop pushes i_ld_ref up when the bus voltage is above its
reference.  Reactive power is measured as q = v_oq*i_od - v_od*i_oq, so with
the d axis on the capacitor voltage a positive i_oq means absorption.
"""

from dataclasses import dataclass, field

from .params import PiSettings, StationParams
from .plant import PlantState, pll_frequency


@dataclass
class PiState:
    """One PI channel with output saturation and anti-windup.

    The integral is frozen whenever the output saturates and the error keeps
    pushing into the limit; a back-calculation term (gain k_aw) additionally
    bleeds the integral toward the saturated output.
    """

    kp: float
    ki: float
    limit: float
    k_aw: float = 1.0
    integral: float = 0.0

    def step(self, error: float, dt: float) -> float:
        raw = self.kp * error + self.ki * self.integral
        out = min(max(raw, -self.limit), self.limit)
        saturated = out != raw
        if not (saturated and error * raw > 0.0):
            self.integral += error * dt
        if saturated and self.k_aw > 0.0 and self.ki > 0.0:
            self.integral += self.k_aw * (out - raw) / self.ki * dt
        return out

    def preload(self, output: float):
        """Set the integral so the zero-error output equals ``output``."""
        self.integral = output / self.ki if self.ki > 0.0 else 0.0


def inner_current_step(i_l_dq, i_ref_dq, v_o_dq, omega: float, l_c: float,
                       pi_d: PiState, pi_q: PiState, dt: float):
    """Converter voltage reference from the decoupled current loops.

    v_ref_d = PI(i_ref_d - i_ld) + v_od - omega*l_c*i_lq and the q-axis dual
    with +omega*l_c*i_ld.
    """
    i_ld, i_lq = i_l_dq
    v_od, v_oq = v_o_dq
    out_d = pi_d.step(i_ref_dq[0] - i_ld, dt)
    out_q = pi_q.step(i_ref_dq[1] - i_lq, dt)
    v_ref_d = out_d + v_od - omega * l_c * i_lq
    v_ref_q = out_q + v_oq + omega * l_c * i_ld
    return v_ref_d, v_ref_q


def outer_dc_voltage_step(v_dc: float, v_dc_ref: float, pi: PiState, dt: float) -> float:
    """d-axis current reference holding the dc bus (positive above reference)."""
    return pi.step(v_dc - v_dc_ref, dt)


def reactive_power(s: PlantState) -> float:
    return s.v_oq * s.i_od - s.v_od * s.i_oq


def outer_reactive_step(q_meas: float, q_ref: float, pi: PiState, dt: float) -> float:
    """q-axis current reference from the reactive-power error."""
    return pi.step(q_meas - q_ref, dt)


@dataclass
class VscPiController:
    """Complete benchmark controller for one station."""

    station: StationParams
    settings: PiSettings
    omega_b: float
    pi_d: PiState = field(init=False)
    pi_q: PiState = field(init=False)
    pi_dc: PiState = field(init=False)
    pi_qpow: PiState = field(init=False)
    i_ld_ref: float = field(init=False, default=0.0)
    i_lq_ref: float = field(init=False, default=0.0)

    def __post_init__(self):
        st = self.settings
        kp, ki = st.inner_gains(self.station, self.omega_b)
        self.pi_d = PiState(kp=kp, ki=ki, limit=st.voltage_limit, k_aw=st.k_aw)
        self.pi_q = PiState(kp=kp, ki=ki, limit=st.voltage_limit, k_aw=st.k_aw)
        self.pi_dc = PiState(kp=st.kp_dc, ki=st.ki_dc, limit=st.current_limit, k_aw=st.k_aw)
        self.pi_qpow = PiState(kp=st.kp_q, ki=st.ki_q, limit=st.current_limit, k_aw=st.k_aw)

    def preload_equilibrium(self, state: PlantState, u0, pll_params, q_ref: float):
        """Start all loops at their steady outputs for the given equilibrium."""
        omega = pll_frequency(state, pll_params, self.station.omega_g)
        self.i_ld_ref = state.i_ld
        self.i_lq_ref = state.i_lq
        self.pi_dc.preload(state.i_ld)
        self.pi_qpow.preload(state.i_lq)
        self.pi_d.preload(u0.v_cvd - state.v_od + omega * self.station.l_c * state.i_lq)
        self.pi_q.preload(u0.v_cvq - state.v_oq - omega * self.station.l_c * state.i_ld)

    def step(self, state: PlantState, v_dc_ref: float, q_ref: float,
             pll_params, dt: float) -> tuple[float, float]:
        """Outer loops then inner loops; returns the voltage reference."""
        self.i_ld_ref = outer_dc_voltage_step(state.v_dc, v_dc_ref, self.pi_dc, dt)
        self.i_lq_ref = outer_reactive_step(reactive_power(state), q_ref, self.pi_qpow, dt)
        omega = pll_frequency(state, pll_params, self.station.omega_g)
        return inner_current_step(
            (state.i_ld, state.i_lq), (self.i_ld_ref, self.i_lq_ref),
            (state.v_od, state.v_oq), omega, self.station.l_c,
            self.pi_d, self.pi_q, dt)
