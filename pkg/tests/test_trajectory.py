"""Segment fitting: bound satisfaction, continuity, evaluation exactness."""
import numpy as np
import pytest

from shepherd.params import TrajectoryLimits
from shepherd.trajectory import (
    BoundaryState,
    FitError,
    TrajectorySegment,
    fit_segment,
)

LIMITS = TrajectoryLimits(v_max=0.48, a_max=0.2, window=50)


def straight_window(length=5.0, points=51, angle=0.0):
    s = np.linspace(0.0, length, points)
    return np.stack([s * np.cos(angle), s * np.sin(angle)], axis=1)


class TestFit:
    def test_straight_rest_to_rest_window(self):
        pts = straight_window()
        seg = fit_segment(pts, BoundaryState.rest(pts[0]), LIMITS,
                          terminal=True)
        start = seg.eval(seg.t_c)
        end = seg.eval(seg.t_c + seg.duration)
        np.testing.assert_allclose(start.pos, pts[0], atol=1e-6)
        np.testing.assert_allclose(end.pos, pts[-1], atol=1e-6)
        _, _, vel, acc = seg.sample_grid(1000)
        assert np.max(np.abs(vel)) <= 0.48 + 1e-9
        assert np.max(np.abs(acc)) <= 0.2 + 1e-9
        np.testing.assert_allclose(end.vel, 0.0, atol=1e-9)
        np.testing.assert_allclose(end.acc, 0.0, atol=1e-9)

    def test_single_cell_window_constant(self):
        p = np.array([1.3, -0.7])
        seg = fit_segment(p[None, :], BoundaryState.rest(p), LIMITS)
        for t in (0.0, 0.4, seg.duration, seg.duration + 3.0):
            s = seg.eval(t)
            np.testing.assert_array_equal(s.pos, p)
            np.testing.assert_array_equal(s.vel, np.zeros(2))
            np.testing.assert_array_equal(s.acc, np.zeros(2))

    def test_degenerate_window_with_motion_rejected(self):
        p = np.array([[0.0, 0.0]])
        moving = BoundaryState(np.zeros(2), np.array([0.1, 0.0]), np.zeros(2))
        with pytest.raises(FitError):
            fit_segment(p, moving, LIMITS)

    def test_chained_junction_continuity(self):
        # L-shaped path split into two windows; the second segment starts
        # from the first one's state at an interior replan time.
        leg1 = straight_window(4.0, 41)
        corner = leg1[-1]
        leg2 = corner + straight_window(4.0, 41, angle=np.pi / 2)
        seg1 = fit_segment(leg1, BoundaryState.rest(leg1[0]), LIMITS, t_c=0.0)
        t_join = seg1.t_c + 0.6 * seg1.duration
        b = seg1.eval(t_join)
        seg2 = fit_segment(leg2, BoundaryState(b.pos, b.vel, b.acc), LIMITS,
                           t_c=t_join, terminal=True)
        a = seg1.eval(t_join)
        c = seg2.eval(t_join)
        np.testing.assert_allclose(c.pos, a.pos, atol=1e-9)
        np.testing.assert_allclose(c.vel, a.vel, atol=1e-9)
        np.testing.assert_allclose(c.acc, a.acc, atol=1e-9)

    def test_expiry_junction_continuity(self):
        pts = straight_window(5.0, 51)
        seg1 = fit_segment(pts, BoundaryState.rest(pts[0]), LIMITS, t_c=0.0)
        b = seg1.end_state()
        pts2 = pts[-1] + straight_window(3.0, 31, angle=0.3)
        seg2 = fit_segment(pts2, b, LIMITS, t_c=seg1.t_end, terminal=True)
        s1 = seg1.eval(seg1.t_end)
        s2 = seg2.eval(seg1.t_end)
        np.testing.assert_allclose(s2.pos, s1.pos, atol=1e-9)
        np.testing.assert_allclose(s2.vel, s1.vel, atol=1e-9)
        np.testing.assert_allclose(s2.acc, s1.acc, atol=1e-9)
        _, _, vel, acc = seg2.sample_grid(1000)
        assert np.max(np.abs(vel)) <= 0.48 + 1e-9
        assert np.max(np.abs(acc)) <= 0.2 + 1e-9

    def test_headroom_tightens_bounds(self):
        pts = straight_window()
        tight = TrajectoryLimits(v_max=0.48, a_max=0.2, headroom=1.25)
        seg = fit_segment(pts, BoundaryState.rest(pts[0]), tight,
                          terminal=True)
        _, _, vel, acc = seg.sample_grid(1000)
        assert np.max(np.abs(vel)) <= 0.48 / 1.25 + 1e-9
        assert np.max(np.abs(acc)) <= 0.2 / 1.25 + 1e-9


class TestEval:
    def test_start_matches_boundary(self):
        rng = np.random.default_rng(2)
        pts = straight_window(4.0, 41, angle=0.4)
        b = BoundaryState(pts[0], np.array([0.1, -0.05]), np.array([0.02, 0.0]))
        seg = fit_segment(pts, b, LIMITS, t_c=3.0)
        s = seg.eval(3.0)
        np.testing.assert_allclose(s.pos, b.pos, atol=1e-9)
        np.testing.assert_allclose(s.vel, b.vel, atol=1e-9)
        np.testing.assert_allclose(s.acc, b.acc, atol=1e-9)

    def test_velocity_matches_position_difference(self):
        pts = straight_window(5.0, 51, angle=1.1)
        seg = fit_segment(pts, BoundaryState.rest(pts[0]), LIMITS)
        rng = np.random.default_rng(7)
        h = 1e-6
        for t in rng.uniform(seg.t_c + 0.1, seg.t_end - 0.1, size=8):
            plus = seg.eval(t + h).pos
            minus = seg.eval(t - h).pos
            fd = (plus - minus) / (2 * h)
            np.testing.assert_allclose(seg.eval(t).vel, fd, rtol=1e-6,
                                       atol=1e-7)

    def test_horner_matches_symbolic_derivative(self):
        pts = straight_window(5.0, 51, angle=0.2)
        seg = fit_segment(pts, BoundaryState.rest(pts[0]), LIMITS)
        k = np.arange(1, 8)
        d_coeffs = seg.coeffs_x[1:] * k
        for tau in (0.0, 0.3, 0.77, 1.0):
            t = seg.t_c + tau * seg.duration
            want = np.polyval(d_coeffs[::-1], tau) / seg.duration
            assert seg.eval(t).vel[0] == want

    def test_clamp_beyond_end_has_zero_rates(self):
        pts = straight_window(5.0, 51)
        seg = fit_segment(pts, BoundaryState.rest(pts[0]), LIMITS)
        end = seg.eval(seg.t_end)
        later = seg.eval(seg.t_end + 100.0)
        np.testing.assert_array_equal(later.pos, end.pos)
        np.testing.assert_array_equal(later.vel, np.zeros(2))
        np.testing.assert_array_equal(later.acc, np.zeros(2))

    def test_round_trip_dict(self):
        pts = straight_window(2.0, 21)
        seg = fit_segment(pts, BoundaryState.rest(pts[0]), LIMITS, t_c=5.0)
        clone = TrajectorySegment.from_dict(seg.to_dict())
        for t in (5.0, 6.0, seg.t_end):
            a, b = seg.eval(t), clone.eval(t)
            np.testing.assert_array_equal(a.pos, b.pos)
            np.testing.assert_array_equal(a.vel, b.vel)

    def test_dump_csv(self, tmp_path):
        pts = straight_window(2.0, 21)
        seg = fit_segment(pts, BoundaryState.rest(pts[0]), LIMITS)
        out = tmp_path / "seg.csv"
        seg.dump_csv(out, num=50)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "t,x,y,vx,vy,ax,ay"
        assert len(lines) == 51
