"""Receding-horizon current controller for the primary station.

At every control interval the controller predicts the reduced electrical
model forward, assembles a QP over the stacked input moves plus one slack
variable, applies the first optimized move, subtracts the active-damping
voltage and clips to the hard voltage bounds.

All prediction quantities are deviations from the operating point; constant
references are extended over the horizon.  The cost is

    sum_i  w_d^2 (i_ld_ref - i_ld)^2 + w_q^2 (i_lq_ref - i_lq)^2
  + r_input^2 sum_j |u_j|^2 + r_move^2 sum_j |u_j - u_{j-1}|^2
  + rho_eps * eps^2

(input terms in deviations from the steady operating input) with
double-sided current bounds softened by eps, scaled per constraint, and
hard input bounds by default.  The input penalties are what make the
tracking weight an effective speed/robustness trade-off; with tracking
terms alone the minimizer would be invariant to a uniform scaling of the
cost and the weight would have no effect.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import qp
from .linear import DiscreteModel, OperatingPoint
from .params import DampingParams, MpcSettings
from .plant import PlantState

log = logging.getLogger(__name__)


def build_prediction(dm: DiscreteModel, p: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked output predictors: y(k+i|k) = phi_i x(k) + gamma_i u_stack.

    Returns phi (p*ny x n) and gamma (p*ny x m*nu); the input is held at its
    last move beyond interval m (move blocking).
    """
    if not 1 <= m <= p:
        raise ValueError(f"need 1 <= control horizon ({m}) <= prediction horizon ({p})")
    n = dm.a_d.shape[0]
    nu = dm.b_d.shape[1]
    ny = dm.c_d.shape[0]
    phi = np.zeros((p * ny, n))
    gamma = np.zeros((p * ny, m * nu))
    # impulse[j] = C A^j B
    a_pow = np.eye(n)
    impulse = []
    for _ in range(p):
        impulse.append(dm.c_d @ a_pow @ dm.b_d)
        a_pow = a_pow @ dm.a_d
    # a_pow is now A^p; rebuild per-step powers for phi
    a_i = dm.a_d.copy()
    for i in range(p):
        rows = slice(i * ny, (i + 1) * ny)
        phi[rows] = dm.c_d @ a_i
        a_i = a_i @ dm.a_d
        for j in range(min(i + 1, m)):
            cols = slice(j * nu, (j + 1) * nu)
            if j < m - 1:
                gamma[rows, cols] = impulse[i - j]
            else:
                # last move stays applied from interval m-1 through i
                acc = np.zeros((ny, nu))
                for l in range(m - 1, i + 1):
                    acc += impulse[i - l]
                gamma[rows, cols] = acc
    return phi, gamma


def active_damping(v_od: float, v_oq: float, phi_d: float, phi_q: float,
                   dp: DampingParams) -> tuple[float, float]:
    """High-pass filtered capacitor voltage scaled by the damping gain."""
    return dp.k_ad * (v_od - phi_d), dp.k_ad * (v_oq - phi_q)


def _move_difference(m: int, nu: int) -> np.ndarray:
    """First-difference operator over stacked moves; row block 0 is u_0."""
    d = np.eye(m * nu)
    for j in range(1, m):
        d[j * nu:(j + 1) * nu, (j - 1) * nu:j * nu] = -np.eye(nu)
    return d


def assemble_qp(phi: np.ndarray, gamma: np.ndarray, x_dev: np.ndarray,
                ref_dev: np.ndarray, cfg: MpcSettings, y0: np.ndarray,
                u0: np.ndarray, u_prev_dev: np.ndarray) -> qp.QpProblem:
    """Build the dense QP over z = [u moves (deviation); eps]."""
    p = cfg.horizon
    m = cfg.control_horizon
    nu = 2
    ny = 2
    nz = m * nu + 1
    w_d, w_q = cfg.weights_dq
    w2 = np.tile(np.array([w_d ** 2, w_q ** 2]), p)

    free = phi @ x_dev
    err = ref_dev - free

    gw = gamma * w2[:, None]
    h = np.zeros((nz, nz))
    h[:m * nu, :m * nu] = 2.0 * (gamma.T @ gw)
    f = np.zeros(nz)
    f[:m * nu] = -2.0 * (gw.T @ err)
    if cfg.r_move > 0.0:
        d = _move_difference(m, nu)
        r2 = cfg.r_move ** 2
        h[:m * nu, :m * nu] += 2.0 * r2 * (d.T @ d)
        c_aff = np.zeros(m * nu)
        c_aff[:nu] = u_prev_dev
        f[:m * nu] += -2.0 * r2 * (d.T @ c_aff)
    if cfg.r_input > 0.0:
        h[:m * nu, :m * nu] += 2.0 * cfg.r_input ** 2 * np.eye(m * nu)
    h[-1, -1] = 2.0 * cfg.rho_eps

    b0 = cfg.bounds
    y_max = np.array([b0.i_d_max - y0[0], b0.i_q_max - y0[1]])
    y_min = np.array([b0.i_d_min - y0[0], b0.i_q_min - y0[1]])
    u_max = np.array([b0.v_d_max - u0[0], b0.v_q_max - u0[1]])
    u_min = np.array([b0.v_d_min - u0[0], b0.v_q_min - u0[1]])
    v_out = np.array([cfg.softening.v_id, cfg.softening.v_iq])
    v_in = np.array([cfg.softening.v_vd, cfg.softening.v_vq])

    rows = []
    rhs = []
    for i in range(p):
        for axis in range(ny):
            g_row = gamma[i * ny + axis]
            base = free[i * ny + axis]
            upper = np.zeros(nz)
            upper[:m * nu] = g_row
            upper[-1] = -v_out[axis]
            rows.append(upper)
            rhs.append(y_max[axis] - base)
            lower = np.zeros(nz)
            lower[:m * nu] = -g_row
            lower[-1] = -v_out[axis]
            rows.append(lower)
            rhs.append(base - y_min[axis])
    for j in range(m):
        for axis in range(nu):
            upper = np.zeros(nz)
            upper[j * nu + axis] = 1.0
            upper[-1] = -v_in[axis]
            rows.append(upper)
            rhs.append(u_max[axis])
            lower = np.zeros(nz)
            lower[j * nu + axis] = -1.0
            lower[-1] = -v_in[axis]
            rows.append(lower)
            rhs.append(-u_min[axis])
    slack_row = np.zeros(nz)
    slack_row[-1] = -1.0
    rows.append(slack_row)
    rhs.append(0.0)

    return qp.QpProblem(h=h, f=f, a_ineq=np.array(rows), b_ineq=np.array(rhs))


@dataclass
class MpcDiagnostics:
    cost: float = 0.0
    eps: float = 0.0
    status: str = "optimal"
    iterations: int = 0
    kkt_residual: float = 0.0
    n_active: int = 0
    predicted_violation: bool = False
    clipped: bool = False


class MpcController:
    """Stateful wrapper: prediction matrices, warm start, damping correction."""

    def __init__(self, cfg: MpcSettings, dm: DiscreteModel, op: OperatingPoint,
                 dp: DampingParams, qp_tol: float = qp.DEFAULT_TOL,
                 qp_max_iter: int = 1000):
        cfg.validate()
        self.cfg = cfg
        self.dm = dm
        self.op = op
        self.dp = dp
        self.qp_tol = qp_tol
        self.qp_max_iter = qp_max_iter
        self.phi, self.gamma = build_prediction(dm, cfg.horizon, cfg.control_horizon)
        self.x0 = np.array(op.x0[:7])
        self.y0 = np.array([op.x0.i_ld, op.x0.i_lq])
        self.u0 = np.array([op.u0.v_cvd, op.u0.v_cvq])
        self.last_input = self.u0.copy()     # absolute first move of the last solve
        self.last_lambda = None
        self.diag = MpcDiagnostics()

    def reset(self):
        self.last_input = self.u0.copy()
        self.last_lambda = None
        self.diag = MpcDiagnostics()

    def retarget(self, dm: DiscreteModel, op: OperatingPoint):
        """Swap the prediction model for a new operating point.

        The last applied input is absolute, so it carries over; the dual
        warm start belongs to the old constraint geometry and is dropped.
        """
        self.dm = dm
        self.op = op
        self.phi, self.gamma = build_prediction(dm, self.cfg.horizon,
                                                self.cfg.control_horizon)
        self.x0 = np.array(op.x0[:7])
        self.y0 = np.array([op.x0.i_ld, op.x0.i_lq])
        self.u0 = np.array([op.u0.v_cvd, op.u0.v_cvq])
        self.last_lambda = None

    def step(self, state: PlantState, i_ld_ref: float, i_lq_ref: float) -> tuple[float, float]:
        """One control interval; returns the converter voltage reference."""
        cfg = self.cfg
        x_dev = np.array(state[:7]) - self.x0
        ref_dev = np.tile(np.array([i_ld_ref, i_lq_ref]) - self.y0, cfg.horizon)
        u_prev_dev = self.last_input - self.u0
        u_prev_dev_sq = u_prev_dev @ u_prev_dev
        problem = assemble_qp(self.phi, self.gamma, x_dev, ref_dev, cfg,
                              self.y0, self.u0, u_prev_dev)
        sol = qp.solve(problem, tol=self.qp_tol, max_iter=self.qp_max_iter,
                       lam0=self.last_lambda)
        if sol.status == "optimal":
            z = sol.z
            self.last_lambda = sol.lam
        else:
            # fall back to the clipped unconstrained minimizer
            log.warning("QP %s at kkt=%.3e; applying clipped unconstrained move",
                        sol.status, sol.kkt_residual)
            h_reg = problem.h + (qp.REG_SCALE * np.trace(problem.h) / problem.n) * np.eye(problem.n)
            z = np.linalg.solve(h_reg, -problem.f)
            z[-1] = max(z[-1], 0.0)
            self.last_lambda = None

        u_dev = z[:2]
        eps = float(z[-1])
        b0 = cfg.bounds
        u_abs = self.u0 + u_dev
        self.last_input = u_abs.copy()

        v_ad_d, v_ad_q = active_damping(state.v_od, state.v_oq,
                                        state.phi_d, state.phi_q, self.dp)
        v_d = u_abs[0] - v_ad_d
        v_q = u_abs[1] - v_ad_q
        v_d_clip = min(max(v_d, b0.v_d_min), b0.v_d_max)
        v_q_clip = min(max(v_q, b0.v_q_min), b0.v_q_max)

        # predicted trajectory against the unsoftened output bounds
        y_pred = self.phi @ x_dev + self.gamma @ z[:-1]
        y_max = np.tile(np.array([b0.i_d_max, b0.i_q_max]) - self.y0, cfg.horizon)
        y_min = np.tile(np.array([b0.i_d_min, b0.i_q_min]) - self.y0, cfg.horizon)
        violated = bool(np.any(y_pred > y_max + 1.0e-12) or np.any(y_pred < y_min - 1.0e-12))

        # J(z) = 0.5 z'Hz + f'z plus the decision-independent constant
        cost = float(0.5 * z @ problem.h @ z + problem.f @ z)
        err = ref_dev - self.phi @ x_dev
        w_d, w_q = cfg.weights_dq
        w2 = np.tile(np.array([w_d ** 2, w_q ** 2]), cfg.horizon)
        cost += float(err @ (w2 * err))
        if cfg.r_move > 0.0:
            cost += cfg.r_move ** 2 * float(u_prev_dev_sq)

        self.diag = MpcDiagnostics(
            cost=max(cost, 0.0), eps=eps, status=sol.status, iterations=sol.iterations,
            kkt_residual=sol.kkt_residual, n_active=len(sol.active_set),
            predicted_violation=violated,
            clipped=(v_d_clip != v_d or v_q_clip != v_q),
        )
        return v_d_clip, v_q_clip
