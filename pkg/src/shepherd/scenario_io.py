"""Scenario documents: YAML schema, validation, overrides, round-trip.

A scenario file is a flat YAML mapping with nested sections per subsystem.
Unknown keys anywhere are rejected so typos fail loudly before a run.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from shepherd.mapping import GroundTruthWorld, LidarSpec
from shepherd.params import ControllerGains, FlockParams, TrajectoryLimits
from shepherd.sim import Scenario, SettleConfig, SuccessConfig

__all__ = ["ScenarioError", "load_scenario", "scenario_from_document",
           "scenario_to_document", "apply_overrides"]


class ScenarioError(ValueError):
    """Scenario document rejected; `field` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


_TOP_KEYS = {"name", "seed", "dt", "t_final", "goal", "workspace",
             "obstacles", "sheep", "dogs", "flock", "controller", "lidar",
             "grid", "trajectory", "settle", "success", "r_s_margin",
             "start_delay"}
_FLOCK_KEYS = {"k_s", "k_d", "r_s", "v_bar", "u_bar"}
_CONTROLLER_KEYS = {"p1", "p2", "lambda", "gamma", "r", "r_circ", "r_a",
                    "r_f", "k_f", "epsilon_reg", "w_slack", "linear_form",
                    "pair_mode", "obstacle_k"}
_LIDAR_KEYS = {"max_range", "angular_step_deg", "scan_period"}
_GRID_KEYS = {"resolution"}
_TRAJ_KEYS = {"v_max", "a_max", "window", "headroom"}
_SETTLE_KEYS = {"speed_tol", "max_time"}
_SUCCESS_KEYS = {"arrival_radius", "dwell"}


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ScenarioError(where, "expected a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ScenarioError(f"{where}.{sorted(unknown)[0]}", "unknown key")


def _points(raw, field: str) -> np.ndarray:
    try:
        pts = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(field, "expected a list of [x, y] pairs")
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ScenarioError(field, "expected a non-empty list of [x, y] pairs")
    if not np.all(np.isfinite(pts)):
        raise ScenarioError(field, "coordinates must be finite")
    return pts


def _positive(value, field: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(field, "expected a number")
    if not math.isfinite(value) or value <= 0.0:
        raise ScenarioError(field, "must be a strictly positive number")
    return value


def scenario_from_document(doc: dict) -> Scenario:
    _check_keys(doc, _TOP_KEYS, "scenario")
    for key in ("name", "goal", "workspace", "sheep", "dogs"):
        if key not in doc:
            raise ScenarioError(key, "missing required key")

    flock_doc = dict(doc.get("flock", {}))
    _check_keys(flock_doc, _FLOCK_KEYS, "flock")
    ctrl_doc = dict(doc.get("controller", {}))
    _check_keys(ctrl_doc, _CONTROLLER_KEYS, "controller")
    lidar_doc = dict(doc.get("lidar", {}))
    _check_keys(lidar_doc, _LIDAR_KEYS, "lidar")
    grid_doc = dict(doc.get("grid", {}))
    _check_keys(grid_doc, _GRID_KEYS, "grid")
    traj_doc = dict(doc.get("trajectory", {}))
    _check_keys(traj_doc, _TRAJ_KEYS, "trajectory")
    settle_doc = dict(doc.get("settle", {}))
    _check_keys(settle_doc, _SETTLE_KEYS, "settle")
    success_doc = dict(doc.get("success", {}))
    _check_keys(success_doc, _SUCCESS_KEYS, "success")

    sheep = _points(doc["sheep"], "sheep")
    dogs = _points(doc["dogs"], "dogs")
    goal = _points([doc["goal"]], "goal")[0]
    workspace = doc["workspace"]
    if (not isinstance(workspace, (list, tuple)) or len(workspace) != 4):
        raise ScenarioError("workspace", "expected [xmin, xmax, ymin, ymax]")

    obstacles = doc.get("obstacles", []) or []
    polys = []
    for idx, poly in enumerate(obstacles):
        pts = _points(poly, f"obstacles[{idx}]")
        if pts.shape[0] < 3:
            raise ScenarioError(f"obstacles[{idx}]",
                                "polygon needs at least 3 vertices")
        polys.append(pts)

    for key in _FLOCK_KEYS:
        if key in flock_doc:
            flock_doc[key] = _positive(flock_doc[key], f"flock.{key}")
    try:
        flock = FlockParams(n=sheep.shape[0], m=dogs.shape[0], **flock_doc)
    except ValueError as exc:
        raise ScenarioError(f"flock.{getattr(exc, 'name', '?')}", str(exc))

    ctrl_kwargs = dict(ctrl_doc)
    if "lambda" in ctrl_kwargs:
        ctrl_kwargs["lam"] = ctrl_kwargs.pop("lambda")
    try:
        gains = ControllerGains(**ctrl_kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"controller.{getattr(exc, 'name', '?')}",
                            str(exc))

    lidar = LidarSpec(
        max_range=_positive(lidar_doc.get("max_range", 5.0),
                            "lidar.max_range"),
        angular_step=math.radians(
            _positive(lidar_doc.get("angular_step_deg", 2.0),
                      "lidar.angular_step_deg")))
    scan_period = _positive(lidar_doc.get("scan_period", 1.0),
                            "lidar.scan_period")

    try:
        limits = TrajectoryLimits(
            v_max=float(traj_doc.get("v_max", 0.48)),
            a_max=float(traj_doc.get("a_max", 0.2)),
            window=int(traj_doc.get("window", 50)),
            headroom=float(traj_doc.get("headroom", 1.0)))
    except ValueError as exc:
        raise ScenarioError(f"trajectory.{getattr(exc, 'name', '?')}",
                            str(exc))

    settle = SettleConfig(
        speed_tol=_positive(settle_doc.get("speed_tol", 1e-4),
                            "settle.speed_tol"),
        max_time=_positive(settle_doc.get("max_time", 60.0),
                           "settle.max_time"))
    success = SuccessConfig(
        arrival_radius=_positive(success_doc.get("arrival_radius", 0.5),
                                 "success.arrival_radius"),
        dwell=_positive(success_doc.get("dwell", 2.0), "success.dwell"))

    try:
        world = GroundTruthWorld(polys, tuple(float(v) for v in workspace))
        scenario = Scenario(
            name=str(doc["name"]),
            world=world,
            sheep0=sheep,
            dogs0=dogs,
            flock=flock,
            gains=gains,
            goal=goal,
            dt=_positive(doc.get("dt", 0.01), "dt"),
            t_final=float(doc.get("t_final", 120.0)),
            lidar=lidar,
            scan_period=scan_period,
            grid_resolution=_positive(grid_doc.get("resolution", 0.1),
                                      "grid.resolution"),
            limits=limits,
            settle=settle,
            success=success,
            r_s_margin=_positive(doc.get("r_s_margin", 0.35), "r_s_margin"),
            start_delay=float(doc.get("start_delay", 0.0)),
            seed=int(doc.get("seed", 0)),
            source=None,
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("scenario", str(exc))
    scenario.source = scenario_to_document(scenario)
    return scenario


def scenario_to_document(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "seed": sc.seed,
        "dt": float(sc.dt),
        "t_final": float(sc.t_final),
        "goal": [float(v) for v in sc.goal],
        "workspace": [float(v) for v in sc.world.bounds],
        "obstacles": [[[float(x), float(y)] for x, y in poly]
                      for poly in sc.world.obstacles],
        "sheep": [[float(x), float(y)] for x, y in sc.sheep0],
        "dogs": [[float(x), float(y)] for x, y in sc.dogs0],
        "flock": {
            "k_s": sc.flock.k_s, "k_d": sc.flock.k_d, "r_s": sc.flock.r_s,
            "v_bar": sc.flock.v_bar, "u_bar": sc.flock.u_bar,
        },
        "controller": {
            "p1": sc.gains.p1, "p2": sc.gains.p2, "lambda": sc.gains.lam,
            "gamma": sc.gains.gamma, "r": sc.gains.r,
            "r_circ": sc.gains.r_circ, "r_a": sc.gains.r_a,
            "r_f": sc.gains.r_f, "k_f": sc.gains.k_f,
            "epsilon_reg": sc.gains.epsilon_reg,
            "w_slack": sc.gains.w_slack,
            "linear_form": sc.gains.linear_form,
            "pair_mode": sc.gains.pair_mode,
            "obstacle_k": sc.gains.obstacle_k,
        },
        "lidar": {
            "max_range": sc.lidar.max_range,
            "angular_step_deg": math.degrees(sc.lidar.angular_step),
            "scan_period": sc.scan_period,
        },
        "grid": {"resolution": sc.grid_resolution},
        "trajectory": {
            "v_max": sc.limits.v_max, "a_max": sc.limits.a_max,
            "window": sc.limits.window, "headroom": sc.limits.headroom,
        },
        "settle": {"speed_tol": sc.settle.speed_tol,
                   "max_time": sc.settle.max_time},
        "success": {"arrival_radius": sc.success.arrival_radius,
                    "dwell": sc.success.dwell},
        "r_s_margin": sc.r_s_margin,
        "start_delay": sc.start_delay,
    }


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply `section.key=value` strings (values parsed as YAML scalars)."""
    out = yaml.safe_load(yaml.safe_dump(doc))  # deep copy via round trip
    for item in overrides or []:
        if "=" not in item:
            raise ScenarioError("override", f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return out


def load_scenario(path, overrides=None) -> Scenario:
    raw = Path(path).read_text()
    doc = yaml.safe_load(raw)
    if not isinstance(doc, dict):
        raise ScenarioError("scenario", "file is not a YAML mapping")
    if overrides:
        doc = apply_overrides(doc, overrides)
    return scenario_from_document(doc)
