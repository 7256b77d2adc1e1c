"""Operator-splitting convex QP solver with active-set polish.

Solves ``min 0.5 z'Pz + q'z  s.t.  lower <= A z <= upper`` by ADMM on the
splitting used by OSQP: each iteration solves one quasi-definite KKT system
with a factorization that is reused across iterations, then projects onto the
constraint slab.  First-order iterations warm-start well across related
problems (branch-and-bound nodes), and an optional polish step solves the
equality-constrained KKT system on the detected active set for high-accuracy
solutions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SOLVED = "solved"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class QpProblem:
    """``min 0.5 z'Pz + q'z  s.t.  lower <= A z <= upper``.

    Variable bounds are expected to be folded into rows of ``A``.
    """

    P: sp.spmatrix
    q: np.ndarray
    A: sp.spmatrix
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        n = self.q.shape[0]
        object.__setattr__(self, "P", sp.csc_matrix(self.P, shape=(n, n)))
        A = sp.csc_matrix(self.A) if self.A.shape[0] else sp.csc_matrix((0, n))
        object.__setattr__(self, "A", A)
        if self.lower.shape != (A.shape[0],) or self.upper.shape != (A.shape[0],):
            raise ValueError("row bounds do not match A")
        if np.any(self.lower > self.upper):
            raise ValueError("row with lower > upper")

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ (self.P @ z) + self.q @ z)


@dataclass(frozen=True)
class QpConfig:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 200_000
    polish: bool = True
    sigma: float = 1e-6          # ADMM splitting parameter
    alpha: float = 1.6           # over-relaxation
    rho0: float = 0.1
    rho_eq_scale: float = 1e3    # stiffer rho on equality rows
    adapt_interval: int = 50
    check_interval: int = 25
    eps_inf: float = 1e-7        # infeasibility certificate tolerance
    polish_reg: float = 1e-9
    polish_refine_steps: int = 3
    polish_passes: int = 10
    polish_interval: int = 1000  # opportunistic mid-run polish attempts


@dataclass
class QpResult:
    status: str
    z: np.ndarray
    y: np.ndarray
    objective: float
    prim_res: float
    dual_res: float
    iterations: int
    polished: bool = False


def _rho_vector(rho: float, lower, upper, scale: float) -> np.ndarray:
    rho_vec = np.full(lower.shape[0], rho)
    rho_vec[lower == upper] *= scale
    return rho_vec


_SCALING_REG = 1e-8
_SCALING_ITERS = 10


def _ruiz_scaling(P: sp.csc_matrix, A: sp.csc_matrix, q: np.ndarray):
    """Modified Ruiz equilibration of the KKT structure plus cost scaling.

    Returns (c, d, e, P_scaled, A_scaled) with P_s = c * D P D and
    A_s = E A D where D = diag(d), E = diag(e).
    """
    n, m = P.shape[0], A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    Ps = P.copy()
    As = A.copy()
    qs = q.copy()
    for _ in range(_SCALING_ITERS):
        col_p = np.abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(n)
        col_a = np.abs(As).max(axis=0).toarray().ravel() if As.nnz else np.zeros(n)
        col = np.maximum(col_p, col_a)
        row = np.abs(As).max(axis=1).toarray().ravel() if As.nnz else np.zeros(m)
        dd = np.where(col > _SCALING_REG, 1.0 / np.sqrt(col), 1.0)
        ee = np.where(row > _SCALING_REG, 1.0 / np.sqrt(row), 1.0)
        D = sp.diags(dd)
        E = sp.diags(ee)
        Ps = (D @ Ps @ D).tocsc()
        As = (E @ As @ D).tocsc()
        qs = dd * qs
        d *= dd
        e *= ee
        # Cost normalization keeps the objective on the same footing as rows.
        col_ps = np.abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(n)
        denom = max(float(np.mean(col_ps)), float(np.max(np.abs(qs), initial=0.0)))
        gamma = 1.0 / max(denom, _SCALING_REG)
        Ps = Ps * gamma
        qs = qs * gamma
        c *= gamma
    return c, d, e, Ps.tocsc(), As.tocsc()


class QpSolver:
    """Workspace bound to one (P, A) structure; bounds/q can vary per solve.

    The problem is equilibrated once (Ruiz scaling on the first solve); every
    iteration runs in scaled space while termination uses unscaled residuals.
    """

    def __init__(self, P, A, cfg: QpConfig | None = None):
        self.cfg = cfg or QpConfig()
        self.n = P.shape[0]
        self.m = A.shape[0]
        self.P = sp.csc_matrix(P)
        self.A = sp.csc_matrix(A) if self.m else sp.csc_matrix((0, self.n))
        self._scaling = None  # (c, d, e, P_scaled, A_scaled)
        self._factor = None
        self._factor_rho = None

    def _ensure_scaling(self, q):
        if self._scaling is None:
            self._scaling = _ruiz_scaling(self.P, self.A, q)
        return self._scaling

    def _factorize(self, Ps, As, rho_vec):
        reg = self.cfg.sigma + 1e-12  # strictly positive even if sigma is 0
        if self.m:
            K = sp.bmat(
                [
                    [Ps + reg * sp.eye(self.n), As.T],
                    [As, -sp.diags(1.0 / rho_vec)],
                ],
                format="csc",
            )
        else:
            K = (Ps + reg * sp.eye(self.n)).tocsc()
        self._factor = spla.splu(K)
        self._factor_rho = rho_vec.copy()

    def solve(self, q, lower, upper, warm=None) -> QpResult:
        cfg = self.cfg
        n, m = self.n, self.m
        q = np.asarray(q, dtype=np.float64)

        if m == 0:
            reg = cfg.sigma + 1e-12
            factor = spla.splu((self.P + reg * sp.eye(n)).tocsc())
            z = factor.solve(-q)
            stat = float(np.max(np.abs(self.P @ z + q), initial=0.0))
            ok = stat <= cfg.eps_abs + cfg.eps_rel * max(
                1.0, float(np.max(np.abs(q), initial=0.0))
            )
            status = SOLVED if ok else DUAL_INFEASIBLE
            return QpResult(status, z, np.empty(0), float(0.5 * z @ (self.P @ z) + q @ z),
                            0.0, stat, 0)

        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        c, d, e, Ps, As = self._ensure_scaling(q)
        qs = c * (d * q)
        ls = e * lower
        us = e * upper
        d_inv = 1.0 / d
        e_inv = 1.0 / e

        rho = cfg.rho0
        rho_vec = _rho_vector(rho, ls, us, cfg.rho_eq_scale)
        if self._factor is None or self._factor_rho.shape != rho_vec.shape or \
                not np.array_equal(self._factor_rho, rho_vec):
            self._factorize(Ps, As, rho_vec)

        if warm is not None:
            x = d_inv * np.asarray(warm[0], dtype=np.float64)
            y = (c * e_inv) * np.asarray(warm[1], dtype=np.float64)
            zc = np.clip(As @ x, ls, us)
        else:
            x = np.zeros(n)
            y = np.zeros(m)
            zc = np.clip(np.zeros(m), ls, us)

        status = MAX_ITERATIONS
        prim = dual = np.inf
        it = 0
        for it in range(1, cfg.max_iter + 1):
            y_prev, x_prev = y, x
            rho_inv = 1.0 / rho_vec
            rhs = np.concatenate([cfg.sigma * x - qs, zc - rho_inv * y])
            sol = self._factor.solve(rhs)
            x_tilde, nu = sol[:n], sol[n:]
            z_tilde = zc + rho_inv * (nu - y)
            x = cfg.alpha * x_tilde + (1.0 - cfg.alpha) * x
            z_relax = cfg.alpha * z_tilde + (1.0 - cfg.alpha) * zc
            zc_new = np.clip(z_relax + rho_inv * y, ls, us)
            y = y + rho_vec * (z_relax - zc_new)
            zc = zc_new

            if it % cfg.check_interval == 0 or it == cfg.max_iter:
                # Unscaled residuals decide termination.
                Az_u = e_inv * (As @ x)
                zc_u = e_inv * zc
                prim = float(np.max(np.abs(Az_u - zc_u), initial=0.0))
                Px_u = d_inv * (Ps @ x) / c
                Aty_u = d_inv * (As.T @ y) / c
                q_u = d_inv * qs / c
                dual = float(np.max(np.abs(Px_u + Aty_u + q_u), initial=0.0))
                eps_prim = cfg.eps_abs + cfg.eps_rel * max(
                    float(np.max(np.abs(Az_u), initial=0.0)),
                    float(np.max(np.abs(zc_u), initial=0.0)),
                )
                eps_dual = cfg.eps_abs + cfg.eps_rel * max(
                    float(np.max(np.abs(Px_u), initial=0.0)),
                    float(np.max(np.abs(Aty_u), initial=0.0)),
                    float(np.max(np.abs(q_u), initial=0.0)),
                )
                if prim <= eps_prim and dual <= eps_dual:
                    status = SOLVED
                    break
                dy_u = (e / c) * (y - y_prev)
                if self._primal_infeasible(dy_u, lower, upper):
                    status = PRIMAL_INFEASIBLE
                    break
                dx_u = d * (x - x_prev)
                if self._dual_infeasible(dx_u, q, lower, upper):
                    status = DUAL_INFEASIBLE
                    break

            if cfg.polish and it % cfg.polish_interval == 0:
                # A merely decent iterate usually identifies the right active
                # set; an accepted polish is an exact KKT point, so finishing
                # early here is sound.
                interim = QpResult(SOLVED, d * x, (e / c) * y, 0.0,
                                   max(prim, 1.0), max(dual, 1.0), it)
                polished = self._polish(q, lower, upper, interim)
                if polished is not None and polished.prim_res <= cfg.eps_abs \
                        and polished.dual_res <= cfg.eps_abs:
                    polished.iterations = it
                    return polished

            if it % cfg.adapt_interval == 0:
                # Scaled residual ratio drives the penalty update.
                Az = As @ x
                prim_s = float(np.max(np.abs(Az - zc), initial=0.0))
                dual_s = float(
                    np.max(np.abs(Ps @ x + qs + As.T @ y), initial=0.0)
                )
                prim_scale = max(
                    float(np.max(np.abs(Az), initial=0.0)),
                    float(np.max(np.abs(zc), initial=0.0)), 1e-10,
                )
                dual_scale = max(
                    float(np.max(np.abs(Ps @ x), initial=0.0)),
                    float(np.max(np.abs(As.T @ y), initial=0.0)),
                    float(np.max(np.abs(qs), initial=0.0)), 1e-10,
                )
                ratio = (prim_s / prim_scale) / max(dual_s / dual_scale, 1e-16)
                new_rho = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
                if new_rho > 5.0 * rho or new_rho < rho / 5.0:
                    rho = new_rho
                    rho_vec = _rho_vector(rho, ls, us, cfg.rho_eq_scale)
                    self._factorize(Ps, As, rho_vec)

        x_u = d * x
        y_u = (e / c) * y
        result = QpResult(
            status, x_u, y_u,
            float(0.5 * x_u @ (self.P @ x_u) + q @ x_u),
            prim if np.isfinite(prim) else np.inf,
            dual if np.isfinite(dual) else np.inf,
            it,
        )
        if status == SOLVED and cfg.polish:
            polished = self._polish(q, lower, upper, result)
            if polished is not None:
                result = polished
        elif status == MAX_ITERATIONS and cfg.polish:
            # Last chance: an accepted full-tolerance polish is a KKT point.
            polished = self._polish(q, lower, upper, result)
            if polished is not None and polished.prim_res <= cfg.eps_abs \
                    and polished.dual_res <= cfg.eps_abs:
                polished.iterations = it
                result = polished
        return result

    def _primal_infeasible(self, dy, lower, upper) -> bool:
        eps = self.cfg.eps_inf
        norm = float(np.max(np.abs(dy), initial=0.0))
        if norm <= eps:
            return False
        v = dy / norm
        # Support-function test must be finite: positive multipliers on rows
        # with infinite upper bound (or negative on infinite lower) disqualify.
        if np.any((v > eps) & ~np.isfinite(upper)) or np.any((v < -eps) & ~np.isfinite(lower)):
            return False
        up_term = float(np.sum(upper[v > eps] * v[v > eps]))
        lo_term = float(np.sum(lower[v < -eps] * v[v < -eps]))
        if up_term + lo_term >= -eps:
            return False
        return float(np.max(np.abs(self.A.T @ v), initial=0.0)) <= eps

    def _dual_infeasible(self, dx, q, lower, upper) -> bool:
        eps = self.cfg.eps_inf
        norm = float(np.max(np.abs(dx), initial=0.0))
        if norm <= eps:
            return False
        v = dx / norm
        if float(q @ v) >= -eps:
            return False
        if float(np.max(np.abs(self.P @ v), initial=0.0)) > eps:
            return False
        Av = self.A @ v
        finite_up = np.isfinite(upper)
        finite_lo = np.isfinite(lower)
        if np.any(Av[finite_up] > eps) or np.any(Av[finite_lo] < -eps):
            return False
        return True

    def _solve_active_kkt(self, q, act, rhs_act):
        cfg = self.cfg
        k = act.shape[0]
        A_act = sp.csc_matrix(self.A[act])
        if k:
            K = sp.bmat(
                [
                    [self.P + cfg.polish_reg * sp.eye(self.n), A_act.T],
                    [A_act, -cfg.polish_reg * sp.eye(k)],
                ],
                format="csc",
            )
        else:
            K = (self.P + cfg.polish_reg * sp.eye(self.n)).tocsc()
        try:
            factor = spla.splu(K)
        except RuntimeError:
            return None
        rhs = np.concatenate([-q, rhs_act])
        sol = factor.solve(rhs)
        # Iterative refinement against the unregularized KKT system.
        for _ in range(cfg.polish_refine_steps):
            zz, yy = sol[: self.n], sol[self.n:]
            r_top = -q - (self.P @ zz) - (A_act.T @ yy if k else 0.0)
            r_bot = rhs_act - (A_act @ zz) if k else np.empty(0)
            sol = sol + factor.solve(np.concatenate([r_top, r_bot]))
        return sol

    def _polish(self, q, lower, upper, result: QpResult) -> QpResult | None:
        """Primal-dual active-set cleanup seeded by the ADMM solution.

        Solves the equality KKT system on the guessed active set, then
        repairs the guess: violated rows join the set, rows whose multiplier
        has the wrong sign leave it.  Accepted only when both residuals
        improve on the first-order solution.
        """
        cfg = self.cfg
        z, y = result.z, result.y
        Az = self.A @ z
        eq = lower == upper
        low_active = eq | (np.isfinite(lower) & ((Az - lower) < -y))
        up_active = ~eq & np.isfinite(upper) & ((upper - Az) < y)
        tol_p = 1e-9
        tol_d = 1e-9
        best = None
        for _ in range(cfg.polish_passes):
            low_active &= ~up_active  # a row is active on one side at most
            low_active |= eq
            act = np.flatnonzero(low_active | up_active)
            rhs_act = np.where(low_active, lower, upper)[act]
            sol = self._solve_active_kkt(q, act, rhs_act)
            if sol is None:
                return None
            z_new = sol[: self.n]
            y_act = sol[self.n:]
            y_new = np.zeros(self.m)
            y_new[act] = y_act
            Az_new = self.A @ z_new
            viol_low = (lower - Az_new) > tol_p
            viol_up = (Az_new - upper) > tol_p
            wrong_low = low_active & ~eq & (y_new > tol_d)
            wrong_up = up_active & (y_new < -tol_d)
            sign_ok = not (np.any(wrong_low) or np.any(wrong_up))
            prim = max(
                float(np.max(np.maximum(lower - Az_new, 0.0), initial=0.0)),
                float(np.max(np.maximum(Az_new - upper, 0.0), initial=0.0)),
            )
            dual = float(
                np.max(np.abs(self.P @ z_new + q + self.A.T @ y_new), initial=0.0)
            )
            # Only sign-consistent iterates are KKT candidates.
            if sign_ok and (best is None or prim < best[2]):
                best = (z_new, y_new, prim, dual)
            if sign_ok and not np.any(viol_low) and not np.any(viol_up):
                break
            low_active = (low_active & ~wrong_low) | viol_low
            up_active = (up_active & ~wrong_up) | viol_up
        if best is None:
            return None
        z_new, y_new, prim, dual = best
        if prim <= max(result.prim_res, 1e-10) and dual <= max(result.dual_res, 1e-10):
            return QpResult(
                SOLVED, z_new, y_new,
                float(0.5 * z_new @ (self.P @ z_new) + q @ z_new),
                prim, dual, result.iterations, polished=True,
            )
        return None


def solve_qp(prob: QpProblem, cfg: QpConfig | None = None, warm=None) -> QpResult:
    """Solve one QP instance; see :class:`QpSolver` for the algorithm."""
    solver = QpSolver(prob.P, prob.A, cfg)
    return solver.solve(prob.q, prob.lower, prob.upper, warm=warm)


def kkt_residuals(prob: QpProblem, z, y) -> tuple:
    """(stationarity, primal feasibility, complementarity) residual norms.

    Recomputed from the problem data only; independent of solver internals.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    stat_vec = prob.P @ z + prob.q
    if prob.m:
        stat_vec = stat_vec + prob.A.T @ y
    stationarity = float(np.max(np.abs(stat_vec), initial=0.0))
    if prob.m == 0:
        return stationarity, 0.0, 0.0
    v = prob.A @ z
    primal = max(
        float(np.max(np.maximum(prob.lower - v, 0.0), initial=0.0)),
        float(np.max(np.maximum(v - prob.upper, 0.0), initial=0.0)),
    )
    y_pos = np.maximum(y, 0.0)
    y_neg = np.maximum(-y, 0.0)
    comp_up = np.where(np.isfinite(prob.upper), y_pos * np.abs(prob.upper - v), y_pos)
    comp_lo = np.where(np.isfinite(prob.lower), y_neg * np.abs(v - prob.lower), y_neg)
    complementarity = float(np.max(np.maximum(comp_up, comp_lo), initial=0.0))
    return stationarity, primal, complementarity
