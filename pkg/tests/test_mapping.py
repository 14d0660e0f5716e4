"""Mapping stack: ray casting, occupancy updates, inflation, queries."""
import math

import numpy as np
import pytest

from shepherd.geometry import min_enclosing_circle, polygon_distance
from shepherd.mapping import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    GroundTruthWorld,
    LidarSpec,
    OccupancyGrid,
    PoseInsideObstacleError,
    nearest_occupied_points,
    simulate_lidar,
    update_occupancy,
)

SPEC = LidarSpec(max_range=5.0, angular_step=math.radians(2.0))


def box(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


class TestLidar:
    def test_empty_world_all_max_range(self):
        world = GroundTruthWorld([], (-10, 10, -10, 10))
        scan = simulate_lidar(world, (0.0, 0.0), SPEC)
        assert len(scan.angles) == 180
        np.testing.assert_array_equal(scan.ranges, 5.0)
        assert not scan.hit_flags.any()

    def test_wall_hit_analytic(self):
        world = GroundTruthWorld([box(2.0, -5.0, 2.5, 5.0)], (-10, 10, -10, 10))
        scan = simulate_lidar(world, (0.0, 0.0), SPEC)
        assert scan.ranges[0] == pytest.approx(2.0, abs=1e-12)
        assert scan.hit_flags[0]
        # ray at pi points away from the wall
        idx = np.argmin(np.abs(scan.angles - math.pi))
        assert scan.ranges[idx] == 5.0 and not scan.hit_flags[idx]

    def test_oblique_ray_exact_distance(self):
        world = GroundTruthWorld([box(2.0, -5.0, 2.5, 5.0)], (-10, 10, -10, 10))
        scan = simulate_lidar(world, (0.0, 0.0), SPEC)
        ang = scan.angles[5]  # 10 degrees
        assert scan.ranges[5] == pytest.approx(2.0 / math.cos(ang), rel=1e-12)

    def test_pose_inside_obstacle_rejected(self):
        world = GroundTruthWorld([box(-1, -1, 1, 1)], (-10, 10, -10, 10))
        with pytest.raises(PoseInsideObstacleError):
            simulate_lidar(world, (0.0, 0.0), SPEC)
        with pytest.raises(PoseInsideObstacleError):
            simulate_lidar(world, (20.0, 0.0), SPEC)


class TestOccupancyUpdate:
    def test_max_range_ray_marks_free_line(self):
        grid = OccupancyGrid((-1, 6, -1, 1), resolution=0.1)
        scan = _single_ray_scan((0.0, 0.0), 0.0, 5.0, hit=False)
        update_occupancy(grid, scan)
        assert (grid.cells == OCCUPIED).sum() == 0
        free = np.argwhere(grid.cells == FREE)
        assert len(free) >= 48  # ~5 m of 0.1 m cells
        assert np.all(free[:, 0] == grid.world_to_cell((0.0, 0.0))[0])

    def test_hitting_ray_single_occupied_endpoint(self):
        grid = OccupancyGrid((-1, 6, -1, 1), resolution=0.1)
        scan = _single_ray_scan((0.05, 0.05), 0.0, 2.0, hit=True)
        update_occupancy(grid, scan)
        occ = np.argwhere(grid.cells == OCCUPIED)
        assert occ.shape[0] == 1
        np.testing.assert_array_equal(occ[0], grid.world_to_cell((2.05, 0.05)))

    def test_occupied_never_downgraded(self):
        grid = OccupancyGrid((-1, 6, -1, 1), resolution=0.1)
        update_occupancy(grid, _single_ray_scan((0.05, 0.05), 0.0, 2.0, True))
        occ_before = grid.occupied_mask.copy()
        update_occupancy(grid, _single_ray_scan((0.05, 0.05), 0.0, 5.0, False))
        assert np.array_equal(grid.occupied_mask, occ_before)

    def test_wall_seen_from_both_sides(self):
        world = GroundTruthWorld([box(2.0, -2.0, 2.2, 2.0)], (-1, 6, -3, 3))
        grid = OccupancyGrid((-1, 6, -3, 3), resolution=0.1)
        for pose in ((0.5, 0.0), (4.0, 0.0)):
            update_occupancy(grid, simulate_lidar(world, pose, SPEC))
        occ = np.argwhere(grid.occupied_mask)
        centers = grid.cell_centers(occ[:, 0], occ[:, 1])
        # every occupied center within one cell of the true wall slab
        assert np.all(centers[:, 0] >= 2.0 - 0.1)
        assert np.all(centers[:, 0] <= 2.2 + 0.1)
        # wall approximated along its visible span on both faces
        left = centers[centers[:, 0] < 2.1]
        assert left[:, 1].max() > 1.0 and left[:, 1].min() < -1.0

    def test_monotone_knowledge(self):
        world = GroundTruthWorld([box(2.0, -2.0, 2.2, 2.0)], (-1, 6, -3, 3))
        grid = OccupancyGrid((-1, 6, -3, 3), resolution=0.1)
        known_prev = 0
        rng = np.random.default_rng(5)
        for _ in range(5):
            pose = rng.uniform([-0.5, -2.5], [1.5, 2.5])
            update_occupancy(grid, simulate_lidar(world, pose, SPEC))
            known = int((grid.cells != UNKNOWN).sum())
            assert known >= known_prev
            known_prev = known

    def test_no_interior_cell_marked_free(self):
        world = GroundTruthWorld([box(2.0, -2.0, 3.0, 2.0)], (-1, 6, -3, 3))
        grid = OccupancyGrid((-1, 6, -3, 3), resolution=0.1)
        rng = np.random.default_rng(9)
        for _ in range(8):
            pose = rng.uniform([-0.5, -2.8], [1.5, 2.8])
            update_occupancy(grid, simulate_lidar(world, pose, SPEC))
        diag = grid.resolution * math.sqrt(2.0)
        free = np.argwhere(grid.cells == FREE)
        centers = grid.cell_centers(free[:, 0], free[:, 1])
        deep = ((centers[:, 0] > 2.0 + diag) & (centers[:, 0] < 3.0 - diag)
                & (centers[:, 1] > -2.0 + diag) & (centers[:, 1] < 2.0 - diag))
        assert not deep.any()


class TestInflation:
    def test_zero_radius_only_occupied(self):
        grid = OccupancyGrid((0, 2, 0, 2), resolution=0.1, inflate_radius=0.0)
        grid.cells[5, 5] = OCCUPIED
        grid.refresh_inflation()
        assert grid.inflated.sum() == 1 and grid.inflated[5, 5]

    def test_disk_matches_brute_force(self):
        grid = OccupancyGrid((0, 4, 0, 4), resolution=0.1, inflate_radius=0.3)
        grid.cells[20, 20] = OCCUPIED
        grid.refresh_inflation()
        # brute force: any cell center within radius of the occupied center
        want = np.zeros_like(grid.inflated)
        for r in range(grid.height):
            for c in range(grid.width):
                d = grid.resolution * math.hypot(r - 20, c - 20)
                want[r, c] = d <= 0.3
        assert np.array_equal(grid.inflated, want)

    def test_empty_grid_empty_layer(self):
        grid = OccupancyGrid((0, 2, 0, 2), resolution=0.1, inflate_radius=0.5)
        grid.refresh_inflation()
        assert not grid.inflated.any()

    def test_random_pattern_matches_brute_force(self):
        rng = np.random.default_rng(3)
        grid = OccupancyGrid((0, 5, 0, 5), resolution=0.1, inflate_radius=0.25)
        rows = rng.integers(0, grid.height, size=12)
        cols = rng.integers(0, grid.width, size=12)
        grid.cells[rows, cols] = OCCUPIED
        grid.refresh_inflation()
        rr, cc = np.meshgrid(np.arange(grid.height), np.arange(grid.width),
                             indexing="ij")
        want = np.zeros_like(grid.inflated)
        for r, c in zip(rows, cols):
            d = grid.resolution * np.hypot(rr - r, cc - c)
            want |= d <= 0.25
        assert np.array_equal(grid.inflated, want)
        assert (grid.inflated & grid.occupied_mask).sum() == grid.occupied_mask.sum()


class TestNearestOccupied:
    def test_empty_grid(self):
        grid = OccupancyGrid((0, 2, 0, 2), resolution=0.1)
        assert nearest_occupied_points(grid, (1.0, 1.0), 3).shape == (0, 2)

    def test_single_cell(self):
        grid = OccupancyGrid((0, 2, 0, 2), resolution=0.1)
        grid.cells[3, 7] = OCCUPIED
        got = nearest_occupied_points(grid, (1.0, 1.0), 1)
        np.testing.assert_allclose(got[0], grid.cell_center(3, 7))

    def test_matches_exhaustive_sort(self):
        rng = np.random.default_rng(11)
        grid = OccupancyGrid((0, 3, 0, 3), resolution=0.1)
        rows = rng.integers(0, grid.height, size=40)
        cols = rng.integers(0, grid.width, size=40)
        grid.cells[rows, cols] = OCCUPIED
        pos = np.array([1.4, 1.7])
        got = nearest_occupied_points(grid, pos, 3)
        occ = np.argwhere(grid.occupied_mask)
        centers = grid.cell_centers(occ[:, 0], occ[:, 1])
        order = sorted(range(len(centers)),
                       key=lambda i: (float(np.sum((centers[i] - pos) ** 2)),
                                      int(occ[i, 0]), int(occ[i, 1])))
        want = centers[order[:3]]
        np.testing.assert_allclose(got, want)


class TestSnapshot:
    def test_round_trip(self):
        grid = OccupancyGrid((0, 1, 0, 0.5), resolution=0.1,
                             inflate_radius=0.1)
        grid.cells[1, 3] = OCCUPIED
        grid.cells[0, :] = FREE
        grid.cells[0, 3] = OCCUPIED
        grid.refresh_inflation()
        text = grid.snapshot_text()
        clone = OccupancyGrid.from_snapshot_text(text)
        # The one-char-per-cell alphabet folds free-and-inflated into 'I',
        # so the round trip preserves occupancy, the non-traversable layer,
        # and the state of every non-inflated cell.
        assert np.array_equal(clone.occupied_mask, grid.occupied_mask)
        assert np.array_equal(clone.inflated | clone.occupied_mask,
                              grid.inflated | grid.occupied_mask)
        outside = ~grid.inflated
        assert np.array_equal(clone.cells[outside], grid.cells[outside])
        assert clone.snapshot_text() == text

    def test_golden_tiny_grid(self):
        grid = OccupancyGrid((0, 0.4, 0, 0.2), resolution=0.1)
        grid.cells[0] = [FREE, FREE, OCCUPIED, UNKNOWN]
        grid.cells[1] = [FREE, UNKNOWN, UNKNOWN, UNKNOWN]
        grid.inflated[0, 2] = True
        want = "4 2 0.1 0.0 0.0\nFFOU\nFUUU\n"
        assert grid.snapshot_text() == want


class TestGeometryHelpers:
    def test_polygon_distance_parallel_walls(self):
        a = box(0, 0, 1, 1)
        b = box(2.2, 0, 3.2, 1)
        assert polygon_distance(a, b) == pytest.approx(1.2)

    def test_polygon_distance_touching(self):
        a = box(0, 0, 1, 1)
        b = box(0.5, 0.5, 2, 2)
        assert polygon_distance(a, b) == 0.0

    def test_min_circle_single_point(self):
        center, radius = min_enclosing_circle([[2.0, 3.0]])
        np.testing.assert_array_equal(center, [2.0, 3.0])
        assert radius == 0.0

    def test_min_circle_pair(self):
        center, radius = min_enclosing_circle([[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(center, [0.5, 0.0])
        assert radius == pytest.approx(0.5)

    def test_min_circle_matches_brute_force(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            pts = rng.normal(size=(rng.integers(3, 12), 2))
            _, radius = min_enclosing_circle(pts)
            want = _brute_force_circle_radius(pts)
            assert radius == pytest.approx(want, rel=1e-9, abs=1e-9)


def _brute_force_circle_radius(pts):
    """Try every pair diameter and triple circumcircle; smallest valid."""
    from itertools import combinations

    best = math.inf
    n = len(pts)
    for i, j in combinations(range(n), 2):
        c = 0.5 * (pts[i] + pts[j])
        r = float(np.linalg.norm(pts[i] - c))
        if np.all(np.linalg.norm(pts - c, axis=1) <= r + 1e-9):
            best = min(best, r)
    for i, j, k in combinations(range(n), 3):
        c = _circumcenter(pts[i], pts[j], pts[k])
        if c is None:
            continue
        r = float(np.linalg.norm(pts[i] - c))
        if np.all(np.linalg.norm(pts - c, axis=1) <= r + 1e-9):
            best = min(best, r)
    return best


def _circumcenter(p, q, r):
    d = 2.0 * (p[0] * (q[1] - r[1]) + q[0] * (r[1] - p[1])
               + r[0] * (p[1] - q[1]))
    if abs(d) < 1e-14:
        return None
    ux = ((p @ p) * (q[1] - r[1]) + (q @ q) * (r[1] - p[1])
          + (r @ r) * (p[1] - q[1])) / d
    uy = ((p @ p) * (r[0] - q[0]) + (q @ q) * (p[0] - r[0])
          + (r @ r) * (q[0] - p[0])) / d
    return np.array([ux, uy])


def _single_ray_scan(pose, angle, rng_val, hit):
    return _scan_from_rays(pose, [angle], [rng_val], [hit])


def _scan_from_rays(pose, angles, ranges, hits):
    from shepherd.mapping import LidarScan

    return LidarScan(np.asarray(pose, float), np.asarray(angles, float),
                     np.asarray(ranges, float), 5.0,
                     np.asarray(hits, dtype=bool))
