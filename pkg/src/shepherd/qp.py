"""Small dense convex QP solver.

Solves  min 0.5 x'Hx + g'x  s.t.  A x <= b,  lower <= x <= upper
with an operator-splitting (ADMM) first-order method with over-relaxation,
adaptive step size, warm starting, and primal-infeasibility certificates.
H must be symmetric positive definite. Costs are normalized by max|H|
internally, so scaling (H, g) by any c > 0 leaves the iterates (hence the
minimizer) unchanged; reported residuals refer to the normalized problem.

The herding controller re-solves a problem of this shape every tick, so
the iteration loop is kernel-backed (see shepherd._backend).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky

from shepherd._backend import admm_chunk

__all__ = ["QpProblem", "QpSolution", "QpError", "AdmmSolver",
           "solve_active_set"]

_INF = np.inf


class QpError(ValueError):
    """Malformed problem: bad dimensions or a non-PD Hessian."""


@dataclass
class QpProblem:
    """min 0.5 x'Hx + g'x  s.t.  A x <= b, lower <= x <= upper."""

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        d = self.g.shape[0]
        if self.H.shape != (d, d):
            raise QpError(f"H has shape {self.H.shape}, expected ({d}, {d})")
        scale = max(1.0, np.abs(self.H).max())
        if np.abs(self.H - self.H.T).max() > 1e-12 * scale:
            raise QpError("H is not symmetric")
        self.A = (np.zeros((0, d)) if self.A is None
                  else np.asarray(self.A, dtype=float).reshape(-1, d))
        self.b = (np.zeros(0) if self.b is None
                  else np.asarray(self.b, dtype=float).ravel())
        if self.b.shape[0] != self.A.shape[0]:
            raise QpError("A and b row counts differ")
        self.lower = (np.full(d, -_INF) if self.lower is None
                      else np.asarray(self.lower, dtype=float).ravel())
        self.upper = (np.full(d, _INF) if self.upper is None
                      else np.asarray(self.upper, dtype=float).ravel())
        if self.lower.shape[0] != d or self.upper.shape[0] != d:
            raise QpError("box bounds have wrong length")
        if np.any(self.lower > self.upper):
            raise QpError("lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.H @ x) + float(self.g @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    status: str  # optimal | max-iter | infeasible-detected
    primal_residual: float
    dual_residual: float
    iterations: int
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    box_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


class AdmmSolver:
    """Operator-splitting QP solver with warm starting across solves.

    A solver instance owns its warm-start state (and the adapted step
    size), so it is single-owner; independent instances can run
    concurrently.
    """

    def __init__(self, tol_prim=1e-6, tol_dual=1e-6, max_iter=4000,
                 rho=0.1, sigma=1e-6, relax=1.6, check_every=25,
                 eps_infeasible=1e-6, polish=True):
        self.tol_prim = tol_prim
        self.tol_dual = tol_dual
        self.max_iter = int(max_iter)
        self.sigma = sigma
        self.relax = relax
        self.check_every = int(check_every)
        self.eps_infeasible = eps_infeasible
        self.polish = polish
        self._rho0 = rho
        self._rho = rho
        self._cache = None  # (dim, rows, x, z, y_unscaled)

    def reset(self):
        self._cache = None
        self._rho = self._rho0

    def solve(self, problem: QpProblem, warm_start: bool = True) -> QpSolution:
        H, g = problem.H, problem.g
        d = problem.dim
        rows = problem.A.shape[0]

        cost_scale = max(np.abs(H).max(), 1e-12)
        Hn = H / cost_scale
        gn = g / cost_scale
        try:
            h_chol = cholesky(Hn, lower=True)
        except np.linalg.LinAlgError as exc:
            raise QpError("H is not positive definite") from exc

        a_full = np.vstack([problem.A, np.eye(d)])
        lo = np.concatenate([np.full(rows, -_INF), problem.lower])
        hi = np.concatenate([problem.b, problem.upper])

        if warm_start and self._cache is not None and self._cache[0] == (d, rows):
            _, x, z, y_raw = self._cache
            x, z, y = x.copy(), z.copy(), y_raw / cost_scale
        else:
            self._rho = self._rho0  # a truly cold start forgets adaptation
            # Box-projected unconstrained minimizer: near-linear objectives
            # put the free minimizer many box widths away, and starting at
            # zero would blow up the first iterate and mislead step-size
            # adaptation.
            x = np.clip(cho_solve((h_chol, True), -gn),
                        problem.lower, problem.upper)
            z = np.clip(a_full @ x, lo, hi)
            y = np.zeros(rows + d)

        rho = self._rho
        kkt_chol = self._factor(Hn, a_full, rho)

        status = "max-iter"
        iterations = 0
        r_prim = r_dual = np.inf
        while iterations < self.max_iter:
            chunk = min(self.check_every, self.max_iter - iterations)
            y_before = y.copy()
            admm_chunk(kkt_chol, a_full, gn, lo, hi, rho, self.sigma,
                       self.relax, x, z, y, chunk)
            iterations += chunk

            ax = a_full @ x
            aty = a_full.T @ y
            hx = Hn @ x
            r_prim = float(np.abs(ax - z).max()) if ax.size else 0.0
            r_dual = float(np.abs(hx + gn + aty).max()) if hx.size else 0.0
            if r_prim <= self.tol_prim and r_dual <= self.tol_dual:
                status = "optimal"
                break

            if self._certifies_infeasible(a_full, lo, hi, y - y_before):
                status = "infeasible-detected"
                break

            rho, kkt_chol = self._maybe_adapt(
                Hn, a_full, rho, kkt_chol, r_prim, r_dual, ax, z, hx, aty, gn)

        self._rho = float(np.clip(rho, 1e-2, 1e2))
        self._cache = ((d, rows), x.copy(), z.copy(), y * cost_scale)
        if status == "optimal" and self.polish:
            x, y, r_prim, r_dual = self._polish(
                Hn, gn, a_full, lo, hi, x, z, y, r_prim, r_dual)
        return QpSolution(
            x=x.copy(), status=status,
            primal_residual=r_prim, dual_residual=r_dual,
            iterations=iterations,
            multipliers=y[:rows] * cost_scale,
            box_multipliers=y[rows:] * cost_scale)

    def _polish(self, Hn, gn, a_full, lo, hi, x, z, y, r_prim, r_dual):
        """Re-solve on the identified active set; keep the result only if it
        is feasible with sign-correct multipliers and tighter residuals."""
        act_hi = (hi - z <= 1e-9) & (y > 1e-9)
        act_lo = (z - lo <= 1e-9) & (y < -1e-9)
        active = np.nonzero(act_hi | act_lo)[0]
        g_act = a_full[active]
        target = np.where(act_hi[active], hi[active], lo[active])
        k = active.shape[0]
        d = x.shape[0]
        kkt = np.block([[Hn, g_act.T], [g_act, np.zeros((k, k))]])
        rhs = np.concatenate([-gn, target])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            return x, y, r_prim, r_dual
        x_pol = sol[:d]
        y_pol = np.zeros_like(y)
        y_pol[active] = sol[d:]
        sign_ok = np.all(np.where(act_hi[active], sol[d:] >= -1e-9,
                                  sol[d:] <= 1e-9))
        ax = a_full @ x_pol
        rp = float(np.max(np.maximum(ax - hi, lo - ax), initial=0.0))
        rd = float(np.max(np.abs(Hn @ x_pol + gn + a_full.T @ y_pol),
                          initial=0.0))
        if (sign_ok and rp <= max(r_prim, self.tol_prim)
                and rd <= max(r_dual, self.tol_dual)):
            return x_pol, y_pol, max(rp, 0.0), rd
        return x, y, r_prim, r_dual

    def _factor(self, Hn, a_full, rho):
        kkt = Hn + self.sigma * np.eye(Hn.shape[0]) + rho * (a_full.T @ a_full)
        return np.ascontiguousarray(cholesky(kkt, lower=True))

    def _maybe_adapt(self, Hn, a_full, rho, kkt_chol, r_prim, r_dual,
                     ax, z, hx, aty, gn):
        # Square-root residual-balancing rule on relatively scaled
        # residuals. rho is clamped to a moderate band: transients can
        # otherwise push it to extremes where the iteration effectively
        # freezes and never recovers.
        if ax.size == 0:
            return rho, kkt_chol
        rp_rel = r_prim / max(float(np.abs(ax).max()),
                              float(np.abs(z).max()), 1.0)
        rd_rel = r_dual / max(float(np.abs(hx).max()),
                              float(np.abs(aty).max()),
                              float(np.abs(gn).max()) if gn.size else 0.0, 1.0)
        if rp_rel <= 0.0 or rd_rel <= 0.0:
            return rho, kkt_chol
        ratio = np.sqrt(rp_rel / rd_rel)
        if 0.2 < ratio < 5.0:
            return rho, kkt_chol
        new_rho = float(np.clip(rho * ratio, 1e-2, 1e2))
        if new_rho == rho:
            return rho, kkt_chol
        return new_rho, self._factor(Hn, a_full, new_rho)

    def _certifies_infeasible(self, a_full, lo, hi, dy) -> bool:
        """OSQP-style primal infeasibility certificate on the dual step."""
        norm_dy = float(np.abs(dy).max()) if dy.size else 0.0
        if norm_dy < 1e-12:
            return False
        if float(np.abs(a_full.T @ dy).max()) > self.eps_infeasible * norm_dy:
            return False
        pos = np.maximum(dy, 0.0)
        neg = np.minimum(dy, 0.0)
        unbounded_below = np.isneginf(lo)
        unbounded_above = np.isposinf(hi)
        if np.any(neg[unbounded_below] < -self.eps_infeasible * norm_dy):
            return False  # certificate needs dy >= 0 on one-sided rows
        if np.any(pos[unbounded_above] > self.eps_infeasible * norm_dy):
            return False
        neg = np.where(unbounded_below, 0.0, neg)
        pos = np.where(unbounded_above, 0.0, pos)
        lo_f = np.where(unbounded_below, 0.0, lo)
        hi_f = np.where(unbounded_above, 0.0, hi)
        support = float(hi_f @ pos + lo_f @ neg)
        return support < -self.eps_infeasible * norm_dy


def solve_active_set(problem: QpProblem, x_feasible,
                     max_changes: int = 1000) -> QpSolution:
    """Exact dense primal active-set solve from a feasible point.

    Last-resort path for tiny problems where the splitting iteration
    crawls (nearly flat valleys from a weak ridge against a strong slack
    penalty). Finite and exact for the strictly convex problems handed to
    it; smallest-index tie breaking keeps it deterministic. Iteration
    count reports working-set changes.
    """
    H, g = problem.H, problem.g
    d = problem.dim
    rows_blocks = [problem.A]
    rhs_blocks = [problem.b]
    eye = np.eye(d)
    finite_up = np.isfinite(problem.upper)
    finite_lo = np.isfinite(problem.lower)
    rows_blocks.append(eye[finite_up])
    rhs_blocks.append(problem.upper[finite_up])
    rows_blocks.append(-eye[finite_lo])
    rhs_blocks.append(-problem.lower[finite_lo])
    G = np.vstack(rows_blocks)
    h = np.concatenate(rhs_blocks)
    total = G.shape[0]
    # Deterministic lexicographic-style relaxation: breaks the exact ties of
    # degenerate vertices that can cycle the working-set walk. The shift is
    # far below every tolerance used downstream.
    h = h + 1e-9 * (np.arange(total) + 1.0)

    x = np.asarray(x_feasible, float).copy()
    if total and np.max(G @ x - h) > 1e-7:
        raise QpError("active-set start point is not feasible")
    working = sorted(np.nonzero(h - G @ x <= 1e-9)[0].tolist()) if total else []

    def result(x, working, lam, changes):
        mults = np.zeros(total)
        mults[working] = lam
        n_rows = problem.A.shape[0]
        return QpSolution(
            x=x, status="optimal",
            primal_residual=float(np.max(G @ x - h, initial=0.0)),
            dual_residual=float(np.max(np.abs(
                H @ x + g + G.T @ mults), initial=0.0)),
            iterations=changes, multipliers=mults[:n_rows])

    for change in range(max_changes):
        k = len(working)
        Gw = G[working] if k else np.zeros((0, d))
        kkt = np.block([[H, Gw.T], [Gw, np.zeros((k, k))]])
        rhs = np.concatenate([-(H @ x + g), np.zeros(k)])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        p, lam = sol[:d], sol[d:]
        scale = 1.0 + float(np.abs(x).max(initial=0.0))
        stationary = float(np.abs(p).max(initial=0.0)) <= 1e-11 * scale
        if not stationary:
            alpha = 1.0
            blocking = -1
            others = [i for i in range(total) if i not in working]
            for i in others:
                gp = float(G[i] @ p)
                if gp > 1e-13:
                    step = float(h[i] - G[i] @ x) / gp
                    if step < alpha - 1e-13:
                        alpha, blocking = step, i
                    elif blocking >= 0 and abs(step - alpha) <= 1e-13:
                        blocking = min(blocking, i)  # Bland tie-break
            moved = max(alpha, 0.0) * float(np.abs(p).max())
            x = x + max(alpha, 0.0) * p
            if blocking >= 0:
                working.append(blocking)
                working.sort()
                continue
            # Full step with no blocking row: x is the working-set optimum
            # even when a near-singular KKT leaves p as conditioning noise.
            stationary = moved <= 1e-9 * scale or alpha == 1.0
            if not stationary:
                continue
        if k == 0 or np.all(lam >= -1e-9):
            return result(x, working, lam, change)
        working.remove(min(i for i, l in zip(working, lam) if l < -1e-9))
    raise QpError("active-set solve did not terminate")
