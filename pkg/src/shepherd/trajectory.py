"""Polynomial reference segments fitted to path windows.

Each segment is a degree-7 polynomial per axis over normalized time
tau = (t - t_c) / duration, least-squares fitted to the window points at
arc-length-proportional stamps, with hard equalities pinning position,
velocity, and acceleration at the segment start (continuity with the
previous segment) and position at the window end; terminal windows also
pin zero end velocity/acceleration. The duration is the smallest value in
a bracket whose densely sampled per-axis velocity/acceleration stay within
the configured caps, found by bisection.

Evaluation past the validity window holds the terminal position with zero
velocity and acceleration, so a controller outrunning replanning still
sees bounded reference rates.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from shepherd.params import TrajectoryLimits

__all__ = [
    "TrajectoryStateSample",
    "BoundaryState",
    "TrajectorySegment",
    "FitError",
    "fit_segment",
]

DEGREE = 7
DENSE_SAMPLES = 1000


class FitError(ValueError):
    """Segment fitting failed (degenerate window or no feasible duration)."""


@dataclass(frozen=True)
class TrajectoryStateSample:
    """Reference position/velocity/acceleration at one instant."""

    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray

    @classmethod
    def zero(cls, pos) -> "TrajectoryStateSample":
        return cls(np.asarray(pos, float), np.zeros(2), np.zeros(2))


@dataclass(frozen=True)
class BoundaryState:
    """Continuity target at a segment start."""

    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray

    @classmethod
    def rest(cls, pos) -> "BoundaryState":
        return cls(np.asarray(pos, float), np.zeros(2), np.zeros(2))


def _horner(coeffs: np.ndarray, x: float) -> float:
    acc = 0.0
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


def _derive(coeffs: np.ndarray) -> np.ndarray:
    k = np.arange(1, coeffs.shape[0])
    return coeffs[1:] * k


@dataclass(frozen=True)
class TrajectorySegment:
    """One fitted reference piece, valid on [t_c, t_c + duration]."""

    coeffs_x: np.ndarray  # ascending degree over tau = (t - t_c)/duration
    coeffs_y: np.ndarray
    t_c: float
    duration: float
    v_max: float
    a_max: float
    terminal: bool = False  # window ended at the overall goal

    @property
    def t_end(self) -> float:
        return self.t_c + self.duration

    def eval(self, t: float) -> TrajectoryStateSample:
        """Sample the reference; queries past t_end hold position with
        zero velocity/acceleration, queries before t_c clamp to t_c."""
        tau = (t - self.t_c) / self.duration
        if tau > 1.0:
            pos = np.array([_horner(self.coeffs_x, 1.0),
                            _horner(self.coeffs_y, 1.0)])
            return TrajectoryStateSample(pos, np.zeros(2), np.zeros(2))
        tau = max(tau, 0.0)
        out = []
        for coeffs in (self.coeffs_x, self.coeffs_y):
            d1 = _derive(coeffs)
            d2 = _derive(d1)
            out.append((_horner(coeffs, tau),
                        _horner(d1, tau) / self.duration,
                        _horner(d2, tau) / self.duration**2))
        (px, vx, ax), (py, vy, ay) = out
        return TrajectoryStateSample(np.array([px, py]), np.array([vx, vy]),
                                     np.array([ax, ay]))

    def end_state(self) -> BoundaryState:
        s = self.eval(self.t_c + self.duration)
        return BoundaryState(s.pos, s.vel, s.acc)

    def sample_grid(self, num: int = DENSE_SAMPLES):
        """(t, pos, vel, acc) arrays over `num` uniform times in the window."""
        ts = np.linspace(self.t_c, self.t_c + self.duration, num)
        taus = (ts - self.t_c) / self.duration
        pos = np.empty((num, 2))
        vel = np.empty((num, 2))
        acc = np.empty((num, 2))
        for axis, coeffs in enumerate((self.coeffs_x, self.coeffs_y)):
            d1 = _derive(coeffs)
            d2 = _derive(d1)
            pos[:, axis] = np.polyval(coeffs[::-1], taus)
            vel[:, axis] = np.polyval(d1[::-1], taus) / self.duration
            acc[:, axis] = np.polyval(d2[::-1], taus) / self.duration**2
        return ts, pos, vel, acc

    def dump_csv(self, path, num: int = 200):
        ts, pos, vel, acc = self.sample_grid(num)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y", "vx", "vy", "ax", "ay"])
            for i, t in enumerate(ts):
                writer.writerow([repr(float(v)) for v in
                                 (t, pos[i, 0], pos[i, 1], vel[i, 0],
                                  vel[i, 1], acc[i, 0], acc[i, 1])])

    def to_dict(self) -> dict:
        return {
            "coeffs_x": [float(c) for c in self.coeffs_x],
            "coeffs_y": [float(c) for c in self.coeffs_y],
            "t_c": float(self.t_c),
            "duration": float(self.duration),
            "v_max": float(self.v_max),
            "a_max": float(self.a_max),
            "terminal": bool(self.terminal),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectorySegment":
        return cls(np.asarray(data["coeffs_x"], float),
                   np.asarray(data["coeffs_y"], float),
                   data["t_c"], data["duration"], data["v_max"],
                   data["a_max"], data.get("terminal", False))


def _constraint_matrix(terminal: bool) -> np.ndarray:
    k = np.arange(DEGREE + 1, dtype=float)
    rows = [np.eye(DEGREE + 1)[0],          # value at tau=0
            np.eye(DEGREE + 1)[1],          # first derivative at tau=0
            2.0 * np.eye(DEGREE + 1)[2],    # second derivative at tau=0
            np.ones(DEGREE + 1)]            # value at tau=1
    if terminal:
        rows.append(k.copy())               # first derivative at tau=1
        rows.append(k * (k - 1.0))          # second derivative at tau=1
    return np.vstack(rows)


def _fit_axis(taus, targets, boundary_pva, end_pos, duration, terminal,
              e_mat, e_null):
    d = [boundary_pva[0], boundary_pva[1] * duration,
         boundary_pva[2] * duration**2, end_pos]
    if terminal:
        d += [0.0, 0.0]
    d = np.asarray(d)
    c_part, *_ = np.linalg.lstsq(e_mat, d, rcond=None)
    design = np.vander(taus, DEGREE + 1, increasing=True)
    reduced = design @ e_null
    z, *_ = np.linalg.lstsq(reduced, targets - design @ c_part, rcond=None)
    return c_part + e_null @ z


def fit_segment(points, boundary: BoundaryState, limits: TrajectoryLimits,
                t_c: float = 0.0, terminal: bool = False,
                hold_duration: float = 1.0) -> TrajectorySegment:
    """Fit one segment through a path window.

    points    (W+1, 2) window of path points, first point at the segment
              start's cell; at most limits.window + 1 of them are expected
    boundary  continuity state at t_c (rest state for the first segment)
    terminal  window ends at the overall goal: pin zero end velocity and
              acceleration
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 1:
        raise FitError("empty window")
    if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(boundary.pos))
            and np.all(np.isfinite(boundary.vel))
            and np.all(np.isfinite(boundary.acc))):
        raise FitError("non-finite window or boundary")

    keep = [0]
    for i in range(1, pts.shape[0]):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    pts = pts[keep]

    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = float(seg_len.sum())
    v_eff = limits.v_max / limits.headroom
    a_eff = limits.a_max / limits.headroom

    if arc < 1e-9:
        if (np.linalg.norm(boundary.vel) > 1e-9
                or np.linalg.norm(boundary.acc) > 1e-9):
            raise FitError("degenerate window with a moving boundary state")
        coeffs = np.zeros(DEGREE + 1)
        cx, cy = coeffs.copy(), coeffs.copy()
        cx[0], cy[0] = boundary.pos
        return TrajectorySegment(cx, cy, t_c, hold_duration,
                                 limits.v_max, limits.a_max, terminal)

    taus = np.concatenate([[0.0], np.cumsum(seg_len)]) / arc
    e_mat = _constraint_matrix(terminal)
    e_null = null_space(e_mat)

    def build(duration):
        cx = _fit_axis(taus, pts[:, 0], (boundary.pos[0], boundary.vel[0],
                                         boundary.acc[0]), pts[-1, 0],
                       duration, terminal, e_mat, e_null)
        cy = _fit_axis(taus, pts[:, 1], (boundary.pos[1], boundary.vel[1],
                                         boundary.acc[1]), pts[-1, 1],
                       duration, terminal, e_mat, e_null)
        return TrajectorySegment(cx, cy, t_c, duration,
                                 limits.v_max, limits.a_max, terminal)

    def feasible(segment):
        _, _, vel, acc = segment.sample_grid(DENSE_SAMPLES)
        return (np.max(np.abs(vel)) <= v_eff
                and np.max(np.abs(acc)) <= a_eff)

    found = _scan_and_bisect(build, feasible, 0.5 * arc / v_eff,
                             50.0 * arc / v_eff)
    if found is not None:
        return found

    # The shape-fitting route can fail when a window is too rigid for its
    # boundary (a terminal window entered at cruise speed leaves only two
    # free parameters per axis). Fall back to an exactly determined quintic
    # boundary-value profile: no fitting residual, so only the duration
    # needs searching.
    def build_bvp(duration):
        if terminal:
            end_vel = np.zeros(2)
        else:
            chord = pts[-1] - pts[0]
            norm = np.linalg.norm(chord)
            direction = chord / norm if norm > 1e-12 else np.zeros(2)
            end_vel = direction * min(arc / duration, 0.95 * v_eff)
        cx = _quintic_axis(boundary.pos[0], boundary.vel[0], boundary.acc[0],
                          pts[-1, 0], end_vel[0], 0.0, duration)
        cy = _quintic_axis(boundary.pos[1], boundary.vel[1], boundary.acc[1],
                          pts[-1, 1], end_vel[1], 0.0, duration)
        return TrajectorySegment(cx, cy, t_c, duration,
                                 limits.v_max, limits.a_max, terminal)

    found = _scan_and_bisect(build_bvp, feasible, 0.5 * arc / v_eff,
                             50.0 * arc / v_eff)
    if found is not None:
        return found
    raise FitError("no feasible duration in the bisection bracket")


def _scan_and_bisect(build, feasible, t_lo, t_hi, scan_points=24,
                     bisect_iters=40):
    """Smallest feasible duration: geometric scan (the feasible set is an
    interval around the natural duration once a moving boundary pins
    c1 = vel*T), then bisection of its lower edge."""
    seg_lo = build(t_lo)
    if feasible(seg_lo):
        return seg_lo
    seg_hi = None
    for cand in np.geomspace(t_lo, t_hi, scan_points)[1:]:
        seg = build(cand)
        if feasible(seg):
            t_hi, seg_hi = cand, seg
            break
        t_lo = cand
    if seg_hi is None:
        return None
    for _ in range(bisect_iters):
        mid = 0.5 * (t_lo + t_hi)
        seg_mid = build(mid)
        if feasible(seg_mid):
            t_hi, seg_hi = mid, seg_mid
        else:
            t_lo = mid
    return seg_hi


def _quintic_axis(p0, v0, a0, p1, v1, a1, duration):
    """Degree-5 coefficients over tau in [0, 1] meeting the six boundary
    conditions exactly; padded to the segment's degree-7 layout."""
    t = duration
    c = np.zeros(DEGREE + 1)
    c[0] = p0
    c[1] = v0 * t
    c[2] = a0 * t * t / 2.0
    dp = p1 - p0 - c[1] - c[2]
    dv = v1 * t - c[1] - 2.0 * c[2]
    da = a1 * t * t - 2.0 * c[2]
    c[3] = 10.0 * dp - 4.0 * dv + 0.5 * da
    c[4] = -15.0 * dp + 7.0 * dv - da
    c[5] = 6.0 * dp - 3.0 * dv + 0.5 * da
    return c
