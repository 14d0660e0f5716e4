"""Parameter containers shared across the herding stack.

All gains and radii are plain floats in SI units (meters, seconds).
Validation happens at construction so downstream code can assume
well-formed inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """A parameter violates its documented range."""

    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name


def _require(cond: bool, name: str, message: str):
    if not cond:
        raise ParameterError(name, message)


@dataclass(frozen=True)
class FlockParams:
    """Gains and limits of the sheep flock model.

    k_s   inter-sheep attraction/repulsion gain (1/s)
    k_d   dog-on-sheep repulsion gain (m^3/s)
    r_s   preferred inter-sheep distance (m)
    v_bar per-axis sheep speed limit (m/s), enforced smoothly via tanh
    u_bar per-axis dog speed limit (m/s)
    n, m  sheep / dog counts
    """

    k_s: float = 0.3
    k_d: float = 0.15
    r_s: float = 0.5
    v_bar: float = 0.4
    u_bar: float = 0.4
    n: int = 1
    m: int = 1

    def __post_init__(self):
        for name in ("k_s", "k_d", "r_s", "v_bar", "u_bar"):
            value = getattr(self, name)
            _require(np.isfinite(value), name, "must be finite")
            _require(value > 0.0, name, "must be strictly positive")
        _require(self.n >= 1, "n", "need at least one sheep")
        _require(self.m >= 0, "m", "dog count cannot be negative")


@dataclass
class WorldState:
    """Stacked planar positions of every agent plus the simulation clock."""

    sheep: np.ndarray  # (n, 2)
    dogs: np.ndarray  # (m, 2)
    t: float = 0.0

    def __post_init__(self):
        self.sheep = np.atleast_2d(np.asarray(self.sheep, dtype=float))
        self.dogs = np.asarray(self.dogs, dtype=float).reshape(-1, 2)
        _require(np.all(np.isfinite(self.sheep)), "sheep", "positions must be finite")
        _require(np.all(np.isfinite(self.dogs)), "dogs", "positions must be finite")
        _require(self.sheep.shape[1] == 2, "sheep", "expected (n, 2) positions")

    @property
    def n(self) -> int:
        return self.sheep.shape[0]

    @property
    def m(self) -> int:
        return self.dogs.shape[0]

    def copy(self) -> "WorldState":
        return WorldState(self.sheep.copy(), self.dogs.copy(), self.t)


@dataclass
class ControllerGains:
    """Gains of the herding controller and its safety constraints.

    p1, p2      chain gains of the degree-2 herding barrier (1/s); the
                derived alpha = p1 + p2 and beta = p1 * p2 enter the
                constraint right-hand side
    lam         obstacle-avoidance barrier gain (1/s)
    gamma       inter-dog barrier gain (1/s)
    r           herding safety margin inside the protected region (m)
    r_d         protected-region radius (m); normally set at runtime to
                the measured herd radius plus the r_s safety distance
    r_circ      dog-to-obstacle safety distance (m)
    r_a         dog-to-dog safety distance (m)
    r_f         loitering band width beyond r_d (m)
    k_f         reference-velocity gain (1/s)
    epsilon_reg ridge added to the objective Hessian
    w_slack     quadratic penalty on herding slacks when softened
    linear_form 'tracking' (g = -2 u_ref) or 'literal' (g = u_ref)
    pair_mode   'consecutive' or 'all' sheep pairings in the objective
    obstacle_k  sensed obstacle points tracked per dog
    """

    p1: float = 5.2
    p2: float = 8.2
    lam: float = 5.0
    gamma: float = 5.0
    r: float = 0.35
    r_d: float = 1.0
    r_circ: float = 0.2
    r_a: float = 0.2
    r_f: float = 0.5
    k_f: float = 1.0
    epsilon_reg: float = 1e-6
    w_slack: float = 1e4
    linear_form: str = "tracking"
    pair_mode: str = "consecutive"
    obstacle_k: int = 1

    def __post_init__(self):
        for name in ("p1", "p2", "lam", "gamma", "k_f", "epsilon_reg", "w_slack"):
            _require(getattr(self, name) > 0.0, name, "must be strictly positive")
        _require(0.0 < self.r < self.r_d, "r", "need 0 < r < r_d")
        for name in ("r_circ", "r_a", "r_f"):
            _require(getattr(self, name) >= 0.0, name, "must be non-negative")
        _require(self.linear_form in ("tracking", "literal"), "linear_form",
                 "expected 'tracking' or 'literal'")
        _require(self.pair_mode in ("consecutive", "all"), "pair_mode",
                 "expected 'consecutive' or 'all'")
        _require(self.obstacle_k >= 1, "obstacle_k", "must be at least 1")

    @property
    def alpha(self) -> float:
        return self.p1 + self.p2

    @property
    def beta(self) -> float:
        return self.p1 * self.p2

    def with_region_radius(self, r_d: float) -> "ControllerGains":
        out = ControllerGains(**{f: getattr(self, f) for f in self.__dataclass_fields__
                                 if f != "r_d"}, r_d=r_d)
        return out


@dataclass(frozen=True)
class TrajectoryLimits:
    """Kinematic caps for fitted reference segments (per-axis sup norms)."""

    v_max: float = 0.48
    a_max: float = 0.2
    window: int = 50
    headroom: float = 1.0  # >1 fits against tightened bounds, leaving margin

    def __post_init__(self):
        _require(self.v_max > 0, "v_max", "must be strictly positive")
        _require(self.a_max > 0, "a_max", "must be strictly positive")
        _require(self.window >= 1, "window", "must be at least 1")
        _require(self.headroom >= 1.0, "headroom", "must be >= 1")
