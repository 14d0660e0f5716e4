"""Closed-loop herding engine.

One run proceeds as: a dog-free settle phase measures the herd's resting
radius (fixing the protected-region radius), then the control loop runs at
the integration rate. Each dog completes a LiDAR sweep once per scan
period; every completed sweep updates the shared occupancy grid and, while
the active fitting window does not yet end at the goal, triggers a replan
from the current reference position and a refit of the reference segment.
An expiring segment is refit from the next window of the stored path.
Every tick assembles the barrier constraint rows, solves the dog velocity
QP (softening the herding rows only when the hard problem is infeasible),
and integrates the coupled dynamics with classical RK4 under a zero-order
hold on the dog command.

Runs are deterministic: identical scenarios produce byte-identical CSV
logs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from shepherd.controller import (
    ConstraintBlock,
    HerdingController,
    herding_block,
    interdog_block,
    objective_terms,
    obstacle_block,
    reference_velocity,
)
from shepherd.flock import evaluate_flock
from shepherd.geometry import min_enclosing_circle
from shepherd.mapping import (
    GroundTruthWorld,
    LidarSpec,
    OccupancyGrid,
    nearest_occupied_points,
    simulate_lidar,
    update_occupancy,
)
from shepherd.params import (
    ControllerGains,
    FlockParams,
    TrajectoryLimits,
    WorldState,
)
from shepherd.planner import GridPath, NoPathError, extract_skeleton, plan_path
from shepherd.trajectory import BoundaryState, TrajectorySegment, fit_segment

__all__ = [
    "Scenario", "RunLog", "Simulation", "SimulationError",
    "settle_flock", "estimate_herd_radius", "rk4_step",
]

CSV_SCHEMA_VERSION = 1
SUMMARY_SCHEMA_VERSION = 1


class SimulationError(RuntimeError):
    """The run aborted (solver failure or dynamics singularity)."""


@dataclass
class SettleConfig:
    speed_tol: float = 1e-4
    max_time: float = 60.0


@dataclass
class SuccessConfig:
    arrival_radius: float = 0.5
    dwell: float = 2.0


@dataclass
class Scenario:
    """Everything one run needs, validation included."""

    name: str
    world: GroundTruthWorld
    sheep0: np.ndarray  # (n, 2)
    dogs0: np.ndarray  # (m, 2)
    flock: FlockParams
    gains: ControllerGains
    goal: np.ndarray  # (2,)
    dt: float = 0.01
    t_final: float = 120.0
    lidar: LidarSpec = field(default_factory=LidarSpec)
    scan_period: float = 1.0
    grid_resolution: float = 0.1
    limits: TrajectoryLimits = field(default_factory=TrajectoryLimits)
    settle: SettleConfig = field(default_factory=SettleConfig)
    success: SuccessConfig = field(default_factory=SuccessConfig)
    r_s_margin: float = 0.35  # protected radius = herd radius + this margin
    start_delay: float = 0.0  # hold the reference while the dogs organize
    seed: int = 0
    source: dict | None = None  # parsed scenario document, echoed in logs

    def __post_init__(self):
        self.sheep0 = np.asarray(self.sheep0, float).reshape(-1, 2)
        self.dogs0 = np.asarray(self.dogs0, float).reshape(-1, 2)
        self.goal = np.asarray(self.goal, float).reshape(2)
        self.validate()

    def validate(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.sheep0.shape[0] != self.flock.n:
            raise ValueError("sheep position count does not match flock.n")
        if self.dogs0.shape[0] != self.flock.m:
            raise ValueError("dog position count does not match flock.m")
        if not self.world.in_bounds(self.goal):
            raise ValueError("goal lies outside the workspace")
        for label, pts in (("sheep", self.sheep0), ("dog", self.dogs0)):
            for p in pts:
                if not self.world.in_bounds(p):
                    raise ValueError(f"{label} at {p.tolist()} outside workspace")
                if self.world.inside_any_obstacle(p):
                    raise ValueError(f"{label} at {p.tolist()} inside an obstacle")
        m = self.dogs0.shape[0]
        for i in range(m):
            for j in range(i + 1, m):
                gap = float(np.linalg.norm(self.dogs0[i] - self.dogs0[j]))
                if gap < self.gains.r_a:
                    raise ValueError(
                        f"dogs {i} and {j} start {gap:.3f} m apart, closer "
                        f"than the safety distance {self.gains.r_a}")


@dataclass
class RunLog:
    """Per-tick records plus run-level events and summary metrics."""

    n: int
    m: int
    columns: list
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    paths: list = field(default_factory=list)  # (index, GridPath)
    summary: dict = field(default_factory=dict)
    final_map_text: str = ""

    @classmethod
    def create(cls, n: int, m: int) -> "RunLog":
        cols = ["t"]
        cols += [f"s{i}{a}" for i in range(n) for a in ("x", "y")]
        cols += [f"d{j}{a}" for j in range(m) for a in ("x", "y")]
        cols += [f"u{j}{a}" for j in range(m) for a in ("x", "y")]
        cols += ["refx", "refy", "refvx", "refvy", "refax", "refay",
                 "qp_status", "hard_feasible", "h_herd_min", "h_obs_min",
                 "h_dog_min", "r_max", "heading"]
        return cls(n=n, m=m, columns=cols)

    def add_row(self, values):
        if len(values) != len(self.columns):
            raise ValueError("row length does not match column schema")
        self.rows.append(values)

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        vals = [row[idx] for row in self.rows]
        if name == "qp_status":
            return np.asarray(vals, dtype=object)
        return np.asarray(vals, dtype=float)

    def csv_text(self) -> str:
        lines = ["# runlog v%d" % CSV_SCHEMA_VERSION,
                 ",".join(self.columns)]
        for row in self.rows:
            parts = []
            for v in row:
                if isinstance(v, str):
                    parts.append(v)
                elif isinstance(v, (bool, np.bool_)):
                    parts.append(str(int(v)))
                else:
                    parts.append(repr(float(v)))
            lines.append(",".join(parts))
        return "\n".join(lines) + "\n"

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runlog.csv").write_text(self.csv_text())
        summary = dict(self.summary)
        summary["schema_version"] = SUMMARY_SCHEMA_VERSION
        summary["events"] = self.events
        summary["segments"] = self.segments
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if self.final_map_text:
            (out / "map.txt").write_text(self.final_map_text)
        with open(out / "paths.csv", "w", newline="") as fh:
            fh.write("plan,k,x,y\n")
            for index, path in self.paths:
                for k, p in enumerate(path.world_points):
                    fh.write(f"{index},{k},{float(p[0])!r},{float(p[1])!r}\n")
        return out

    @classmethod
    def load_csv(cls, path) -> "RunLog":
        lines = Path(path).read_text().strip().splitlines()
        if not lines[0].startswith("# runlog"):
            raise ValueError("not a runlog csv")
        columns = lines[1].split(",")
        log = cls(n=sum(c.startswith("s") and c.endswith("x")
                        for c in columns),
                  m=sum(c.startswith("d") and c.endswith("x")
                        for c in columns),
                  columns=columns)
        status_idx = columns.index("qp_status")
        for line in lines[2:]:
            parts = line.split(",")
            row = []
            for i, part in enumerate(parts):
                row.append(part if i == status_idx else float(part))
            log.rows.append(row)
        return log


def rk4_step(sheep, dogs, dog_command, params: FlockParams, dt: float,
             eps: float = 1e-9):
    """One classical RK4 step of the coupled system: dogs hold their
    commanded velocity, sheep follow the flock law re-evaluated per stage."""
    u = np.asarray(dog_command, float).reshape(-1, 2)

    def f(s, d):
        return evaluate_flock(WorldState(s, d), params, jacobians=False,
                              eps=eps).velocities

    k1 = f(sheep, dogs)
    k2 = f(sheep + 0.5 * dt * k1, dogs + 0.5 * dt * u)
    k3 = f(sheep + 0.5 * dt * k2, dogs + 0.5 * dt * u)
    k4 = f(sheep + dt * k3, dogs + dt * u)
    new_sheep = sheep + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    new_dogs = dogs + dt * u
    return new_sheep, new_dogs


def settle_flock(sheep, params: FlockParams, dt: float,
                 speed_tol: float = 1e-4, max_time: float = 60.0):
    """Integrate the dog-free flock until every sheep is (numerically)
    stationary. Returns (positions, settled, elapsed)."""
    sheep = np.asarray(sheep, float).copy()
    no_dogs = np.zeros((0, 2))
    steps = int(round(max_time / dt))
    sheep_only = FlockParams(k_s=params.k_s, k_d=params.k_d, r_s=params.r_s,
                             v_bar=params.v_bar, u_bar=params.u_bar,
                             n=sheep.shape[0], m=0)
    for step_idx in range(steps):
        vel = evaluate_flock(WorldState(sheep, no_dogs), sheep_only,
                             jacobians=False).velocities
        if float(np.max(np.abs(vel), initial=0.0)) < speed_tol:
            return sheep, True, step_idx * dt
        sheep, _ = rk4_step(sheep, no_dogs, np.zeros((0, 2)), sheep_only, dt)
    return sheep, False, max_time


def estimate_herd_radius(sheep, params: FlockParams, dt: float = 0.01,
                         speed_tol: float = 1e-4, max_time: float = 60.0):
    """Settle the dog-free flock and measure its minimum enclosing circle.

    Dogs are frozen (equivalently, infinitely distant) for the estimate.
    Returns (radius, settled_positions, settled_flag).
    """
    settled, ok, _ = settle_flock(sheep, params, dt, speed_tol, max_time)
    _, radius = min_enclosing_circle(settled)
    return float(radius), settled, ok


class Simulation:
    """Owns all mutable run state; one instance per run."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.flock_params = scenario.flock
        self.log = RunLog.create(scenario.flock.n, scenario.flock.m)

    # -- run orchestration ----------------------------------------------------
    def run(self) -> RunLog:
        sc = self.sc
        radius, settled_sheep, settled_ok = estimate_herd_radius(
            sc.sheep0, sc.flock, sc.dt, sc.settle.speed_tol,
            sc.settle.max_time)
        if not settled_ok:
            self.log.events.append(
                {"type": "settle-warning", "t": 0.0,
                 "detail": "speed criterion unmet at cap"})
        r_d = radius + sc.r_s_margin
        gains = sc.gains.with_region_radius(r_d)
        self.gains = gains
        self.log.summary.update({
            "herd_radius": float(radius),
            "protected_radius": float(r_d),
            "settled": bool(settled_ok),
        })

        sheep = settled_sheep
        dogs = sc.dogs0.copy()
        ref0 = sheep.mean(axis=0)

        grid = OccupancyGrid(sc.world.bounds, sc.grid_resolution,
                             inflate_radius=radius)
        controller = HerdingController(gains, sc.flock.u_bar)
        self.grid = grid

        self.plan_count = 0
        self.path: GridPath | None = None
        self.path_cursor = 0
        self.segment: TrajectorySegment | None = None
        if sc.start_delay > 0.0:
            # Hold the reference in place while the dogs settle into their
            # loitering band; planning starts when the hold expires.
            self.segment = TrajectorySegment(
                np.concatenate([[ref0[0]], np.zeros(7)]),
                np.concatenate([[ref0[1]], np.zeros(7)]),
                0.0, sc.start_delay, sc.limits.v_max, sc.limits.a_max)
        else:
            self._plan_and_fit(ref0, BoundaryState.rest(ref0), t_c=0.0,
                               reason="initial")

        steps_total = int(round(sc.t_final / sc.dt))
        steps_per_scan = max(1, int(round(sc.scan_period / sc.dt)))
        dwell_needed = sc.success.dwell
        dwell = 0.0
        success = False
        success_time = math.nan
        first_contained = math.nan
        soft_events = 0

        for k in range(steps_total):
            t = k * sc.dt

            holding = t < sc.start_delay
            if k > 0 and k % steps_per_scan == 0 and not self._window_at_goal():
                self._scan_and_replan(dogs, t, replan=not holding)

            if not holding and self.segment is not None \
                    and t >= self.segment.t_end and not self._window_at_goal():
                if self.path is None:
                    ref = self.segment.eval(t).pos
                    self._plan_and_fit(ref, BoundaryState.rest(ref),
                                       t_c=self.segment.t_end,
                                       reason="initial")
                else:
                    self._advance_window()

            if self.segment is None:
                raise SimulationError("no reference trajectory available")
            sample = self.segment.eval(t)
            world = WorldState(sheep, dogs, t)
            flock = evaluate_flock(world, self.flock_params)
            herd = herding_block(world, self.flock_params, gains, sample,
                                 flock)[0]
            points = [nearest_occupied_points(grid, dogs[j], gains.obstacle_k)
                      for j in range(sc.flock.m)]
            obstacle = obstacle_block(
                dogs, points, gains,
                inside_tol=max(gains.r_circ - 0.1, 0.0))
            inter = interdog_block(dogs, gains)
            u_ref = reference_velocity(dogs, sample.pos, gains)
            h_obj, g_obj = objective_terms(herd.a, u_ref, gains)
            result = controller.solve(herd, obstacle, inter, h_obj, g_obj)
            if result.status == "soft":
                soft_events += 1
                self.log.events.append(
                    {"type": "soften", "t": float(t),
                     "max_slack": float(np.max(result.slack, initial=0.0))})

            u = result.command.reshape(-1, 2)
            row = self._record(t, sheep, dogs, u, sample, result, gains,
                               points, flock.velocities)
            if math.isnan(first_contained) and row["r_max"] <= r_d:
                first_contained = t

            sheep, dogs = rk4_step(sheep, dogs, u, self.flock_params, sc.dt)

            centroid = sheep.mean(axis=0)
            at_goal_ref = (self._window_at_goal()
                           and t >= self.segment.t_end)
            if at_goal_ref and np.linalg.norm(centroid - sc.goal) \
                    <= sc.success.arrival_radius:
                dwell += sc.dt
                if dwell >= dwell_needed:
                    success = True
                    success_time = t + sc.dt
                    break
            else:
                dwell = 0.0

        self.log.summary.update({
            "success": bool(success),
            "success_time": None if math.isnan(success_time)
            else float(success_time),
            "first_containment_time": None if math.isnan(first_contained)
            else float(first_contained),
            "steps": len(self.log.rows),
            "replans": int(self.plan_count),
            "soft_steps": int(soft_events),
            "goal": [float(v) for v in sc.goal],
            "scenario": sc.name,
        })
        if sc.source is not None:
            self.log.summary["parameters"] = sc.source
        self.log.final_map_text = grid.snapshot_text()
        return self.log

    # -- helpers ---------------------------------------------------------------
    def _window_at_goal(self) -> bool:
        return bool(self.segment is not None and self.segment.terminal)

    def _scan_and_replan(self, dogs, t, replan=True):
        sc = self.sc
        for j in range(dogs.shape[0]):
            if not sc.world.in_bounds(dogs[j]):
                # Nothing physically fences the dogs in; a straggler outside
                # the mapped workspace just skips its sweep.
                self.log.events.append({"type": "scan-skipped", "t": float(t),
                                        "dog": int(j)})
                continue
            try:
                scan = simulate_lidar(sc.world, dogs[j], sc.lidar)
            except Exception as exc:
                raise SimulationError(f"scan failed at t={t:.2f}: {exc}")
            update_occupancy(self.grid, scan, refresh=False)
        self.grid.refresh_inflation()
        if not replan:
            return
        sample = self.segment.eval(t)
        boundary = BoundaryState(sample.pos, sample.vel, sample.acc)
        self._plan_and_fit(sample.pos, boundary, t_c=t, reason="scan")

    def _plan_and_fit(self, start, boundary, t_c, reason):
        sc = self.sc
        skeleton = extract_skeleton(self.grid)
        start_cell = self.grid.clip_cell(*self.grid.world_to_cell(start))
        if not self.grid.traversable_mask(optimistic=True)[start_cell]:
            snapped = self._nearest_traversable(start_cell)
            if snapped is None:
                self._note_plan_failure(t_c, "reference enclosed")
                return
            start = self.grid.cell_center(*snapped)
        try:
            path = plan_path(self.grid, start, sc.goal, skeleton)
        except NoPathError as exc:
            self._note_plan_failure(t_c, str(exc))
            return
        self.path = path
        self.path_cursor = 0
        self.plan_count += 1
        self.log.paths.append((self.plan_count, path))
        self.log.events.append({"type": "replan", "t": float(t_c),
                                "reason": reason, "path_len": path.K})
        self._fit_from_cursor(boundary, t_c)

    def _advance_window(self):
        assert self.segment is not None
        t_c = self.segment.t_end
        boundary = self.segment.end_state()
        self._fit_from_cursor(boundary, t_c)

    def _fit_from_cursor(self, boundary, t_c):
        sc = self.sc
        path = self.path
        if path is None:
            return
        start = self.path_cursor
        end = min(start + sc.limits.window, path.K)
        if end <= start:
            # path exhausted: hold at the terminal state
            if self.segment is None or not self.segment.terminal:
                hold = TrajectorySegment(
                    np.concatenate([[boundary.pos[0]], np.zeros(7)]),
                    np.concatenate([[boundary.pos[1]], np.zeros(7)]),
                    t_c, 1.0, sc.limits.v_max, sc.limits.a_max, terminal=True)
                self.segment = hold
                self._log_segment(hold, boundary)
            return
        window = path.world_points[start:end + 1]
        terminal = end == path.K
        try:
            seg = fit_segment(window, boundary, sc.limits, t_c=t_c,
                              terminal=terminal)
        except Exception as exc:
            if self.segment is None:
                raise SimulationError(
                    f"segment fit failed at t={t_c:.2f}: {exc}")
            # Keep tracking the previous segment; the next scan retries.
            self.log.events.append({"type": "fit-failure", "t": float(t_c),
                                    "detail": str(exc)})
            return
        self.segment = seg
        self.path_cursor = end
        self._log_segment(seg, boundary)

    def _log_segment(self, seg, boundary):
        entry = seg.to_dict()
        entry["boundary"] = {
            "pos": [float(v) for v in boundary.pos],
            "vel": [float(v) for v in boundary.vel],
            "acc": [float(v) for v in boundary.acc],
        }
        self.log.segments.append(entry)

    def _nearest_traversable(self, cell):
        mask = self.grid.traversable_mask(optimistic=True)
        rows, cols = np.nonzero(mask)
        if rows.size == 0:
            return None
        d2 = (rows - cell[0]) ** 2 + (cols - cell[1]) ** 2
        order = np.lexsort((cols, rows, d2))
        best = order[0]
        if d2[best] > (1.0 / self.grid.resolution) ** 2:
            return None  # nothing traversable within ~1 m; treat as enclosed
        return int(rows[best]), int(cols[best])

    def _note_plan_failure(self, t, detail):
        self.log.events.append({"type": "plan-failure", "t": float(t),
                                "detail": detail})

    def _record(self, t, sheep, dogs, u, sample, result, gains,
                nearest_pts, sheep_vel):
        err = sheep - sample.pos[None, :]
        dist = np.linalg.norm(err, axis=1)
        r_max = float(dist.max())
        margin = gains.r_d - gains.r
        h_herd = float(0.5 * (margin**2 - dist**2).min())
        h_obs = math.inf
        for j, pts in enumerate(nearest_pts):
            if pts.shape[0]:
                d2 = float(np.min(np.sum((pts - dogs[j]) ** 2, axis=1)))
                h_obs = min(h_obs, 0.5 * (d2 - gains.r_circ**2))
        if dogs.shape[0] >= 2:
            pair = np.linalg.norm(dogs[:, None, :] - dogs[None, :, :], axis=2)
            iu = np.triu_indices(dogs.shape[0], k=1)
            h_dog = float(0.5 * (pair[iu].min() ** 2 - gains.r_a**2))
        else:
            h_dog = math.inf
        mean_vel = sheep_vel.mean(axis=0)
        heading = float(math.atan2(mean_vel[1], mean_vel[0]))
        values = [t]
        values += [float(v) for v in sheep.reshape(-1)]
        values += [float(v) for v in dogs.reshape(-1)]
        values += [float(v) for v in u.reshape(-1)]
        values += [float(sample.pos[0]), float(sample.pos[1]),
                   float(sample.vel[0]), float(sample.vel[1]),
                   float(sample.acc[0]), float(sample.acc[1]),
                   result.status, bool(result.hard_feasible),
                   h_herd, h_obs, h_dog, r_max, heading]
        self.log.add_row(values)
        return {"r_max": r_max}
