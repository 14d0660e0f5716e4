"""Settle-phase equilibria, the RK4 stepper, and run-loop edges."""
import math

import numpy as np
import pytest

from shepherd.geometry import min_enclosing_circle
from shepherd.mapping import GroundTruthWorld
from shepherd.params import ControllerGains, FlockParams
from shepherd.sim import (
    RunLog,
    Scenario,
    Simulation,
    estimate_herd_radius,
    rk4_step,
    settle_flock,
)

PARAMS = FlockParams(k_s=0.3, k_d=0.15, r_s=0.5, v_bar=0.4, u_bar=0.4,
                     n=2, m=0)


class TestHerdRadius:
    def test_single_sheep_zero_radius(self):
        params = FlockParams(n=1, m=0)
        radius, settled, ok = estimate_herd_radius(
            np.array([[2.0, -1.0]]), params)
        assert ok and radius == 0.0
        np.testing.assert_array_equal(settled, [[2.0, -1.0]])

    def test_pair_settles_to_rest_separation(self):
        # Equilibrium of the pairwise law is separation r_s, so the
        # enclosing circle radius is r_s / 2.
        sheep = np.array([[0.0, 0.0], [0.8, 0.1]])
        radius, settled, ok = estimate_herd_radius(sheep, PARAMS)
        assert ok
        gap = float(np.linalg.norm(settled[0] - settled[1]))
        assert gap == pytest.approx(0.5, abs=1e-3)
        assert radius == pytest.approx(0.25, abs=5e-4)

    def test_triangle_settles_to_circumradius(self):
        params = FlockParams(n=3, m=0)
        angles = np.array([0.0, 2.0, 4.0]) * math.pi / 3.0
        sheep = 0.45 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        radius, settled, ok = estimate_herd_radius(sheep, params)
        assert ok
        # settled triangle should be equilateral with side r_s
        for i in range(3):
            gap = np.linalg.norm(settled[i] - settled[(i + 1) % 3])
            assert gap == pytest.approx(0.5, abs=1e-3)
        _, brute = min_enclosing_circle(settled)
        assert radius == pytest.approx(brute, abs=1e-12)
        assert radius == pytest.approx(0.5 / math.sqrt(3.0), abs=1e-3)

    def test_settle_reports_cap_hit(self):
        # An equilateral-unstable start with a tiny cap cannot settle.
        sheep = np.array([[0.0, 0.0], [3.0, 0.0]])
        _, ok, elapsed = settle_flock(sheep, PARAMS, dt=0.01, max_time=0.05)
        assert not ok and elapsed == 0.05


class TestRk4:
    def test_lone_sheep_stays_put(self):
        params = FlockParams(n=1, m=0)
        s, d = rk4_step(np.array([[1.0, 2.0]]), np.zeros((0, 2)),
                        np.zeros((0, 2)), params, 0.01)
        np.testing.assert_array_equal(s, [[1.0, 2.0]])

    def test_dog_displacement_exact(self):
        params = FlockParams(n=1, m=1)
        sheep = np.array([[0.0, 0.0]])
        dogs = np.array([[50.0, 0.0]])  # far enough to leave the sheep alone
        u = np.array([[0.4, 0.0]])
        for _ in range(100):
            sheep, dogs = rk4_step(sheep, dogs, u, params, 0.01)
        np.testing.assert_allclose(dogs, [[50.4, 0.0]], atol=1e-12)

    def test_order_four_convergence(self):
        params = FlockParams(n=4, m=0)
        rng = np.random.default_rng(3)
        start = rng.uniform(-1, 1, size=(4, 2))
        coarse = start.copy()
        for _ in range(500):
            coarse, _ = rk4_step(coarse, np.zeros((0, 2)), np.zeros((0, 2)),
                                 params, 0.01)
        fine = start.copy()
        for _ in range(5000):
            fine, _ = rk4_step(fine, np.zeros((0, 2)), np.zeros((0, 2)),
                               params, 0.001)
        np.testing.assert_allclose(coarse, fine, atol=1e-6)


class TestRunLoop:
    def test_zero_budget_run_logs_settle_only(self):
        scenario = _tiny_scenario(t_final=0.0)
        log = Simulation(scenario).run()
        assert log.rows == []
        assert log.summary["herd_radius"] > 0
        assert not log.summary["success"]

    def test_short_run_logs_every_step(self):
        scenario = _tiny_scenario(t_final=0.5)
        log = Simulation(scenario).run()
        assert len(log.rows) == 50
        ts = log.column("t")
        assert ts[0] == 0.0
        np.testing.assert_allclose(np.diff(ts), 0.01, atol=1e-12)

    def test_runlog_csv_round_trip(self, tmp_path):
        scenario = _tiny_scenario(t_final=0.3)
        log = Simulation(scenario).run()
        out = log.save(tmp_path / "run")
        loaded = RunLog.load_csv(out / "runlog.csv")
        assert loaded.columns == log.columns
        np.testing.assert_array_equal(loaded.column("t"), log.column("t"))
        np.testing.assert_array_equal(loaded.column("s0x"), log.column("s0x"))
        assert (out / "summary.json").exists()
        assert (out / "map.txt").exists()
        assert (out / "paths.csv").exists()

    def test_determinism_byte_identical(self, tmp_path):
        a = Simulation(_tiny_scenario(t_final=1.5)).run()
        b = Simulation(_tiny_scenario(t_final=1.5)).run()
        assert a.csv_text() == b.csv_text()


def _tiny_scenario(t_final):
    flock = FlockParams(n=2, m=1)
    world = GroundTruthWorld([], (-5, 8, -5, 5))
    return Scenario(
        name="tiny",
        world=world,
        sheep0=np.array([[0.0, 0.2], [0.4, -0.2]]),
        dogs0=np.array([[-2.0, 0.0]]),
        flock=flock,
        gains=ControllerGains(),
        goal=np.array([4.0, 0.0]),
        dt=0.01,
        t_final=t_final,
    )
