"""Dense convex quadratic programs solved by Hildreth dual coordinate ascent.

    minimize    0.5 z'Hz + f'z
    subject to  A z <= b

The primal minimizer for a dual iterate lam is z = -H^-1 (f + A'lam); each
dual coordinate is maximized in closed form and clamped at zero, which keeps
the dual objective non-decreasing.  Adequate for the small problems built by
the controller (a handful of variables, tens of rows); no factorization
updates or sparsity.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

DEFAULT_TOL = 1.0e-8
DEFAULT_MAX_ITER = 200
REG_SCALE = 1.0e-9       # Tikhonov lift: H + REG_SCALE*trace(H)/n * I
LAMBDA_DIVERGED = 1.0e12
FARKAS_EVERY = 25        # sweeps between infeasibility-certificate checks


@dataclass
class QpProblem:
    h: np.ndarray
    f: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.h.shape[0]
        if self.a_ineq is None or np.size(self.a_ineq) == 0:
            self.a_ineq = np.zeros((0, n))
            self.b_ineq = np.zeros(0)
        else:
            self.a_ineq = np.atleast_2d(np.asarray(self.a_ineq, dtype=float))
            self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def k(self):
        return self.a_ineq.shape[0]

    def validate(self):
        scale = max(1.0, float(np.max(np.abs(self.h))))
        if np.max(np.abs(self.h - self.h.T)) > 1.0e-12 * scale:
            raise ValueError("Hessian is not symmetric within 1e-12")
        w = np.linalg.eigvalsh(0.5 * (self.h + self.h.T))
        if w[0] < -1.0e-9 * scale:
            raise ValueError(f"Hessian is not positive semidefinite (min eig {w[0]:.3e})")


@dataclass
class QpSolution:
    z: np.ndarray
    status: str                       # optimal | max_iterations | infeasible
    kkt_residual: float
    lam: np.ndarray
    iterations: int
    active_set: list = field(default_factory=list)


def kkt_residual(p: QpProblem, z: np.ndarray, lam: np.ndarray) -> float:
    """Max of stationarity norm, primal violation, dual negativity, complementarity."""
    z = np.asarray(z, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    grad = p.h @ z + p.f
    if p.k:
        grad = grad + p.a_ineq.T @ lam
    stat = float(np.max(np.abs(grad))) if z.size else 0.0
    if p.k:
        slack = p.a_ineq @ z - p.b_ineq
        primal = max(0.0, float(np.max(slack)))
        dual = max(0.0, float(-np.min(lam)))
        comp = float(np.max(np.abs(lam * slack)))
    else:
        primal = dual = comp = 0.0
    return max(stat, primal, dual, comp)


def _dual_objective(p_mat, k_vec, lam):
    return -0.5 * lam @ (p_mat @ lam) - k_vec @ lam


def solve(p: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          lam0: np.ndarray | None = None, debug: bool = False) -> QpSolution:
    """Solve the QP; on optimal the KKT residual is below tol.

    ``lam0`` warm-starts the dual iterate.  ``debug`` asserts the monotone
    dual objective every sweep.
    """
    n, k = p.n, p.k
    h = p.h + (REG_SCALE * np.trace(p.h) / n) * np.eye(n)
    # residuals are judged against the lifted problem actually being solved
    p_reg = QpProblem(h=h, f=p.f, a_ineq=p.a_ineq, b_ineq=p.b_ineq)
    chol = cho_factor(h)
    z_free = cho_solve(chol, -p.f)

    if k == 0:
        return QpSolution(z=z_free, status="optimal",
                          kkt_residual=kkt_residual(p_reg, z_free, np.zeros(0)),
                          lam=np.zeros(0), iterations=0)

    slack_free = p.a_ineq @ z_free - p.b_ineq
    if np.max(slack_free) <= tol:
        lam = np.zeros(k)
        return QpSolution(z=z_free, status="optimal",
                          kkt_residual=kkt_residual(p_reg, z_free, lam),
                          lam=lam, iterations=0)

    # Rescale constraint rows so the dual Hessian A H^-1 A' has unit
    # diagonal (Jacobi preconditioning); this only rescales the dual
    # variables but conditions the coordinate sweeps much better when row
    # curvatures span orders of magnitude (e.g. slack-penalty rows).
    hinv_at0 = cho_solve(chol, p.a_ineq.T)
    curv = np.einsum("ij,ji->i", p.a_ineq, hinv_at0)
    scale = np.where(curv > 0.0, np.sqrt(np.maximum(curv, 1.0e-300)), 1.0)
    a_s = p.a_ineq / scale[:, None]
    b_s = p.b_ineq / scale

    # Dual quadratic: maximize -1/2 lam'P lam - K'lam over lam >= 0.
    hinv_at = hinv_at0 / scale[None, :]            # n x k
    p_mat = a_s @ hinv_at                          # k x k
    k_vec = b_s + a_s @ cho_solve(chol, p.f)
    diag = np.diag(p_mat).copy()

    # Rows with no curvature (zero constraint rows) are either trivially
    # satisfied or contradictory.
    degenerate = diag <= 1.0e-14 * max(1.0, float(np.max(diag, initial=0.0)))
    if np.any(degenerate & (b_s < -tol)):
        z = z_free
        return QpSolution(z=z, status="infeasible",
                          kkt_residual=kkt_residual(p_reg, z, np.zeros(k)),
                          lam=np.zeros(k), iterations=0)

    lam = None
    if lam0 is not None:
        lam0 = np.asarray(lam0, dtype=float)
        if lam0.shape == (k,) and np.isfinite(lam0).all() and np.all(lam0 >= 0.0):
            lam = lam0 * scale
    if lam is None:
        lam = np.zeros(k)

    if debug:
        g_prev = _dual_objective(p_mat, k_vec, lam)

    status = "max_iterations"
    sweeps = 0
    lam_mark = lam.copy()
    for sweeps in range(1, max_iter + 1):
        for i in range(k):
            if degenerate[i]:
                lam[i] = 0.0
                continue
            w = lam[i] - (p_mat[i] @ lam + k_vec[i]) / diag[i]
            lam[i] = w if w > 0.0 else 0.0
        if debug:
            g_now = _dual_objective(p_mat, k_vec, lam)
            assert g_now >= g_prev - 1.0e-12 * max(1.0, abs(g_prev)), \
                "dual objective decreased"
            g_prev = g_now
        if np.max(lam) > LAMBDA_DIVERGED:
            status = "infeasible"
            break
        slack = -(p_mat @ lam + k_vec)             # scaled A z(lam) - b
        viol = max(0.0, float(np.max(slack * scale)))
        comp = float(np.max(np.abs(lam * slack * scale)))
        if max(viol, comp) <= tol:
            status = "optimal"
            break
        if sweeps % FARKAS_EVERY == 0:
            # An unbounded dual drifts along a ray d >= 0 with A'd = 0 and
            # b'd < 0, which is a Farkas certificate that Az <= b has no
            # solution.
            d = lam - lam_mark
            d_norm = float(np.linalg.norm(d))
            if d_norm > 1.0e-8 * max(1.0, float(np.linalg.norm(lam))):
                ray = d / d_norm
                if (np.all(ray >= -1.0e-10)
                        and np.linalg.norm(a_s.T @ ray) < 1.0e-8
                        and b_s @ ray < -1.0e-10):
                    status = "infeasible"
                    break
            lam_mark = lam.copy()

    z = z_free - hinv_at @ lam
    lam_orig = lam / scale
    res = kkt_residual(p_reg, z, lam_orig)
    if status == "optimal" and res > 10.0 * tol:
        status = "max_iterations"
    active = [int(i) for i in np.nonzero(lam_orig > tol)[0]]
    return QpSolution(z=z, status=status, kkt_residual=res, lam=lam_orig,
                      iterations=sweeps, active_set=active)
