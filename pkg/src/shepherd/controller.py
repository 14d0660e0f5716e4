"""Constraint assembly and the dog velocity QP.

Three families of linear inequalities on the stacked dog velocity vector
(one row layout: dog j owns columns 2j, 2j+1):

* herding rows (one per sheep) from the degree-2 barrier that keeps each
  sheep inside the protected disk of radius r_d - r around the moving
  reference; the control enters through the dog-position Jacobians of the
  sheep velocity law,
* obstacle rows (one per tracked nearest obstacle point per dog) from a
  degree-1 distance barrier around sensed boundary points,
* inter-dog rows (one per unordered pair) from a degree-1 pairwise
  distance barrier.

The objective equalizes the dogs' reference-projected accelerations
across sheep pairs and tracks a loitering reference velocity; when the
hard problem is infeasible the herding rows (only) are softened with
quadratically penalized slacks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from shepherd.flock import FlockState
from shepherd.params import ControllerGains, FlockParams, WorldState
from shepherd.qp import AdmmSolver, QpProblem, solve_active_set
from shepherd.trajectory import TrajectoryStateSample

__all__ = [
    "ConstraintBlock",
    "HerdingSplit",
    "ControlResult",
    "DogInsideObstacleError",
    "SolverFailureError",
    "herding_block",
    "obstacle_block",
    "interdog_block",
    "reference_velocity",
    "pair_difference_matrix",
    "objective_terms",
    "HerdingController",
]


class DogInsideObstacleError(RuntimeError):
    """A dog is already inside its obstacle safety disk at assembly time."""


class SolverFailureError(RuntimeError):
    """Even the softened QP failed to converge."""


@dataclass(frozen=True)
class ConstraintBlock:
    """One stacked inequality a @ u_d <= b over dog velocities."""

    a: np.ndarray  # (rows, 2m)
    b: np.ndarray  # (rows,)
    kind: str  # herding | obstacle | inter-dog

    @classmethod
    def empty(cls, kind: str, m: int) -> "ConstraintBlock":
        return cls(np.zeros((0, 2 * m)), np.zeros(0), kind)

    @property
    def rows(self) -> int:
        return self.a.shape[0]

    def violation(self, u: np.ndarray) -> float:
        if self.rows == 0:
            return 0.0
        return float(np.max(self.a @ u - self.b, initial=0.0))


@dataclass(frozen=True)
class HerdingSplit:
    """Right-hand side split used by the runtime feasibility diagnostic:
    `dynamic` collects every term driven by the reference velocity and
    acceleration, `static` the rest; static + dynamic == b exactly."""

    static: np.ndarray
    dynamic: np.ndarray


def herding_block(world: WorldState, params: FlockParams,
                  gains: ControllerGains, traj: TrajectoryStateSample,
                  flock: FlockState) -> tuple[ConstraintBlock, HerdingSplit]:
    """Herding rows: one inequality per sheep on the stacked dog velocity.

    Derived by differentiating the protected-disk barrier twice (the dog
    velocities appear through the sheep-acceleration Jacobians) and
    chaining with gains p1, p2. The returned pair satisfies
    omega_i = b_i - a_i @ u_d, where omega_i is the chained barrier rate
    that the constraint keeps non-negative (pinned by a rollout
    differentiation oracle in the tests).
    """
    if flock.jac_sheep is None:
        raise ValueError("herding rows need a flock state with Jacobians")
    n, m = world.n, world.m
    e = world.sheep - traj.pos[None, :]  # (n, 2)
    vel = flock.velocities

    a_rows = np.einsum("ic,ijcd->ijd", e, flock.jac_dog).reshape(n, 2 * m)

    rel_vel = vel[None, :, :] - vel[:, None, :]
    sheep_coupling = np.einsum("ikcd,ikd->ic", flock.jac_sheep, rel_vel)
    dog_jac_sum = flock.jac_dog.sum(axis=1)  # (n, 2, 2)
    own_vel_term = np.einsum("icd,id->ic", dog_jac_sum, vel)

    margin = gains.r_d - gains.r
    beta, alpha = gains.beta, gains.alpha
    e_dot_v = np.einsum("ic,ic->i", e, vel)
    b_static = (0.5 * beta * (margin**2 - np.einsum("ic,ic->i", e, e))
                - np.einsum("ic,ic->i", vel, vel)
                - alpha * e_dot_v
                + np.einsum("ic,ic->i", e, own_vel_term)
                - np.einsum("ic,ic->i", e, sheep_coupling))
    b_dynamic = (-float(traj.vel @ traj.vel)
                 + 2.0 * vel @ traj.vel
                 + e @ traj.acc
                 + alpha * (e @ traj.vel))
    block = ConstraintBlock(a_rows, b_static + b_dynamic, "herding")
    return block, HerdingSplit(b_static, b_dynamic)


def obstacle_block(dog_pos: np.ndarray, closest_points,
                   gains: ControllerGains,
                   inside_tol: float = 0.0) -> ConstraintBlock:
    """Obstacle rows: keep each dog outside r_circ of its tracked points.

    closest_points: per-dog array of sensed boundary points, shape (k_j, 2)
    (possibly empty). Raises DogInsideObstacleError when a dog is more than
    inside_tol inside its safety disk at assembly time.
    """
    dog_pos = np.asarray(dog_pos, float).reshape(-1, 2)
    m = dog_pos.shape[0]
    rows, rhs = [], []
    for j in range(m):
        pts = np.asarray(closest_points[j], float).reshape(-1, 2)
        for point in pts:
            delta = dog_pos[j] - point
            sq = float(delta @ delta)
            if sq < max(gains.r_circ - inside_tol, 0.0) ** 2:
                raise DogInsideObstacleError(
                    f"dog {j} is {np.sqrt(sq):.3f} m from a sensed obstacle "
                    f"point, inside the {gains.r_circ:.3f} m safety disk")
            row = np.zeros(2 * m)
            row[2 * j:2 * j + 2] = -delta  # (b* - x_dj)^T
            rows.append(row)
            rhs.append(0.5 * gains.lam * (sq - gains.r_circ**2))
    if not rows:
        return ConstraintBlock.empty("obstacle", m)
    return ConstraintBlock(np.vstack(rows), np.asarray(rhs), "obstacle")


def interdog_block(dog_pos: np.ndarray, gains: ControllerGains) -> ConstraintBlock:
    """Pairwise dog separation rows, one per unordered pair."""
    dog_pos = np.asarray(dog_pos, float).reshape(-1, 2)
    m = dog_pos.shape[0]
    if m < 2:
        return ConstraintBlock.empty("inter-dog", m)
    rows, rhs = [], []
    for k in range(m):
        for j in range(k + 1, m):
            delta = dog_pos[k] - dog_pos[j]
            row = np.zeros(2 * m)
            row[2 * k:2 * k + 2] = -delta  # (x_dj - x_dk)^T
            row[2 * j:2 * j + 2] = delta   # (x_dk - x_dj)^T
            rows.append(row)
            rhs.append(0.5 * gains.gamma * (float(delta @ delta) - gains.r_a**2))
    return ConstraintBlock(np.vstack(rows), np.asarray(rhs), "inter-dog")


def reference_velocity(dog_pos: np.ndarray, ref_pos: np.ndarray,
                       gains: ControllerGains) -> np.ndarray:
    """Loitering reference: pull dogs inside the r_d + r_f band, zero inside."""
    dog_pos = np.asarray(dog_pos, float).reshape(-1, 2)
    e = ref_pos[None, :] - dog_pos
    dist = np.linalg.norm(e, axis=1)
    band = gains.r_d + gains.r_f
    excess = np.maximum(dist - band, 0.0)
    safe = np.where(dist > 1e-9, dist, 1.0)
    u = gains.k_f * (excess / safe)[:, None] * e
    return u.reshape(-1)


def pair_difference_matrix(n: int, mode: str = "consecutive") -> np.ndarray:
    """Sheep pairing matrix: zero first row then rows +1/-1 at (i, i-1)
    for consecutive mode, or one +1/-1 row per unordered pair."""
    if mode == "consecutive":
        c = np.zeros((n, n))
        for i in range(1, n):
            c[i, i] = 1.0
            c[i, i - 1] = -1.0
        return c
    if mode == "all":
        rows = []
        for i in range(n):
            for k in range(i + 1, n):
                row = np.zeros(n)
                row[k] = 1.0
                row[i] = -1.0
                rows.append(row)
        return np.vstack(rows) if rows else np.zeros((0, n))
    raise ValueError(f"unknown pair mode {mode!r}")


def objective_terms(a_herding: np.ndarray, u_ref: np.ndarray,
                    gains: ControllerGains) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic/linear terms of the objective  u' H u + g' u.

    H = A' C' C A + epsilon_reg I (symmetric PD); the linear term follows
    gains.linear_form: 'tracking' uses g = -2 u_ref so the objective equals
    ||u - u_ref||^2 up to constants when A C vanishes, 'literal' keeps the
    bare + u_ref' u coupling.
    """
    n, two_m = a_herding.shape
    c = pair_difference_matrix(n, gains.pair_mode)
    ca = c @ a_herding
    h = ca.T @ ca + gains.epsilon_reg * np.eye(two_m)
    h = 0.5 * (h + h.T)
    if gains.linear_form == "tracking":
        g = -2.0 * u_ref
    else:
        g = u_ref.copy()
    return h, g


@dataclass
class ControlResult:
    command: np.ndarray  # (2m,), always inside the box
    status: str  # hard | soft
    hard_feasible: bool
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    solver_status: str = ""


class HerdingController:
    """Owns the warm-started solvers and the soften-on-infeasible policy.

    Obstacle rows, inter-dog rows, and the speed box are never softened;
    only the herding rows receive quadratically penalized slacks when the
    hard problem is reported infeasible.
    """

    def __init__(self, gains: ControllerGains, u_bar: float,
                 solver: AdmmSolver | None = None,
                 soft_solver: AdmmSolver | None = None):
        self.gains = gains
        self.u_bar = u_bar
        self.solver = solver or AdmmSolver()
        # The softened problem is a near-LP in the command block (tiny ridge
        # against a large slack penalty) where the splitting iteration can
        # plateau; keep its budget modest and let the exact dense fallback
        # finish the job when warm starting is not enough.
        self.soft_solver = soft_solver or AdmmSolver(max_iter=2000)

    def solve(self, herding: ConstraintBlock, obstacle: ConstraintBlock,
              interdog: ConstraintBlock, h_obj: np.ndarray,
              g_obj: np.ndarray) -> ControlResult:
        two_m = h_obj.shape[0]
        a_all = np.vstack([herding.a, obstacle.a, interdog.a])
        b_all = np.concatenate([herding.b, obstacle.b, interdog.b])
        box = np.full(two_m, self.u_bar)

        hard = QpProblem(2.0 * h_obj, g_obj, a_all, b_all, -box, box)
        sol = self.solver.solve(hard)
        if sol.status == "max-iter":
            # A stale warm start can be worse than none; retry cold once.
            sol = self.solver.solve(hard, warm_start=False)
        if sol.status == "optimal":
            u = np.clip(sol.x, -box, box)
            return ControlResult(u, "hard", True, np.zeros(herding.rows),
                                 sol.iterations, sol.status)
        return self._solve_soft(herding, obstacle, interdog, h_obj, g_obj,
                                box, sol.iterations, sol.status)

    def _solve_soft(self, herding, obstacle, interdog, h_obj, g_obj, box,
                    hard_iterations, hard_status):
        two_m = box.shape[0]
        n_h = herding.rows
        dim = two_m + n_h
        # Substituting s = sqrt(w_slack) * slack keeps the Hessian blocks at
        # comparable magnitude (w_slack ~ 1e4 against a ~1e-6 ridge would
        # otherwise blow up the solver's conditioning).
        root_w = np.sqrt(self.gains.w_slack)
        h_soft = np.zeros((dim, dim))
        h_soft[:two_m, :two_m] = 2.0 * h_obj
        h_soft[two_m:, two_m:] = 2.0 * np.eye(n_h)
        g_soft = np.concatenate([g_obj, np.zeros(n_h)])
        a_rows = [np.hstack([herding.a, -np.eye(n_h) / root_w])]
        if obstacle.rows:
            a_rows.append(np.hstack([obstacle.a, np.zeros((obstacle.rows, n_h))]))
        if interdog.rows:
            a_rows.append(np.hstack([interdog.a, np.zeros((interdog.rows, n_h))]))
        a_soft = np.vstack(a_rows)
        b_soft = np.concatenate([herding.b, obstacle.b, interdog.b])
        lower = np.concatenate([-box, np.zeros(n_h)])
        upper = np.concatenate([box, np.full(n_h, np.inf)])

        prob = QpProblem(h_soft, g_soft, a_soft, b_soft, lower, upper)
        sol = self.soft_solver.solve(prob)
        if sol.status != "optimal":
            # Weak-coupling geometries give the soft problem a nearly flat
            # valley where the splitting iteration crawls; fall back to the
            # exact dense solve from a feasible point (slacks absorb the
            # herding rows; a phase-1 hop handles violated recovery rows).
            mu0 = self._feasible_command(obstacle, interdog, box)
            slack0 = root_w * np.maximum(herding.a @ mu0 - herding.b, 0.0)
            sol = solve_active_set(prob, np.concatenate([mu0, slack0]))
        if sol.status != "optimal":
            raise SolverFailureError(
                f"softened QP ended with status {sol.status!r} "
                f"(hard status {hard_status!r})")
        u = np.clip(sol.x[:two_m], -box, box)
        slack = sol.x[two_m:] / root_w
        return ControlResult(u, "soft", False, slack,
                             hard_iterations + sol.iterations, sol.status)

    def _feasible_command(self, obstacle, interdog, box):
        """A command satisfying the never-softened rows and the box.

        Zero works unless a safety set is already (marginally) violated,
        in which case the rows demand a separating velocity; a phase-1 LP
        finds one or proves the recovery rows irreconcilable.
        """
        a_rows = np.vstack([obstacle.a, interdog.a])
        b_rows = np.concatenate([obstacle.b, interdog.b])
        two_m = box.shape[0]
        if a_rows.shape[0] == 0 or np.all(b_rows >= 0.0):
            return np.zeros(two_m)
        from scipy.optimize import linprog

        rows = a_rows.shape[0]
        # variables (mu, t): minimize sum t, A mu - t <= b, t >= 0, |mu| <= box
        c = np.concatenate([np.zeros(two_m), np.ones(rows)])
        a_ub = np.hstack([a_rows, -np.eye(rows)])
        bounds = [(-b, b) for b in box] + [(0.0, None)] * rows
        res = linprog(c, A_ub=a_ub, b_ub=b_rows, bounds=bounds,
                      method="highs")
        if not res.success or res.fun > 1e-7:
            raise SolverFailureError(
                "obstacle/inter-dog recovery rows are jointly infeasible")
        return res.x[:two_m]
