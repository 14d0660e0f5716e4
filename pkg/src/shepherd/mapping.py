"""Simulated LiDAR, occupancy grid, inflation, nearest-obstacle queries.

The sensor is noiseless and poses are known, so the grid uses three hard
states (unknown / free / occupied) with an occupied-sticky update: a cell
seen occupied once is never downgraded. A boolean inflated layer marks
everything within the herd radius of an occupied cell as non-traversable
for the planner; it always contains the occupied cells themselves.

Grid convention: cell (row, col) covers the square
[origin + col*res, origin + (col+1)*res) x [origin + row*res, ...), so
rows grow with y and cols with x; cell centers sit at the +res/2 offsets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from shepherd.geometry import point_in_polygon, polygon_edges, ray_hits

__all__ = [
    "UNKNOWN", "FREE", "OCCUPIED",
    "GroundTruthWorld", "LidarSpec", "LidarScan", "OccupancyGrid",
    "PoseInsideObstacleError",
    "simulate_lidar", "update_occupancy", "nearest_occupied_points",
]

UNKNOWN, FREE, OCCUPIED = 0, 1, 2
_STATE_CHARS = {UNKNOWN: "U", FREE: "F", OCCUPIED: "O"}


class PoseInsideObstacleError(ValueError):
    """Scan requested from inside an obstacle or outside the workspace."""


@dataclass
class GroundTruthWorld:
    """Simulation ground truth: closed polygon obstacles in a rectangle."""

    obstacles: list  # list of (V, 2) vertex arrays
    bounds: tuple  # (xmin, xmax, ymin, ymax)
    _edges: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.obstacles = [np.asarray(o, float).reshape(-1, 2)
                          for o in self.obstacles]
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("degenerate workspace bounds")
        if self.obstacles:
            self._edges = np.concatenate(
                [polygon_edges(o) for o in self.obstacles], axis=0)
        else:
            self._edges = np.zeros((0, 2, 2))

    @property
    def edges(self) -> np.ndarray:
        return self._edges

    def in_bounds(self, point) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return xmin <= point[0] <= xmax and ymin <= point[1] <= ymax

    def inside_any_obstacle(self, point) -> bool:
        return any(point_in_polygon(point, o) for o in self.obstacles)


@dataclass(frozen=True)
class LidarSpec:
    max_range: float = 5.0
    angular_step: float = math.radians(2.0)

    @property
    def angles(self) -> np.ndarray:
        count = int(round(2.0 * math.pi / self.angular_step))
        return np.arange(count) * self.angular_step


@dataclass
class LidarScan:
    pose: np.ndarray
    angles: np.ndarray
    ranges: np.ndarray
    max_range: float
    hit_flags: np.ndarray

    def __post_init__(self):
        if not (len(self.angles) == len(self.ranges) == len(self.hit_flags)):
            raise ValueError("angles/ranges/hit_flags length mismatch")


def simulate_lidar(world: GroundTruthWorld, pose,
                   spec: LidarSpec) -> LidarScan:
    """Exact first-hit ranges against every obstacle edge, clipped at
    max_range; hit_flags mark rays that actually struck geometry."""
    pose = np.asarray(pose, float)
    if not world.in_bounds(pose) or world.inside_any_obstacle(pose):
        raise PoseInsideObstacleError(
            f"scan pose {pose.tolist()} is not in free workspace")
    angles = spec.angles
    ranges = np.empty(len(angles))
    hits = np.zeros(len(angles), dtype=bool)
    for idx, ang in enumerate(angles):
        direction = np.array([math.cos(ang), math.sin(ang)])
        dist = ray_hits(pose, direction, world.edges, spec.max_range)
        if math.isinf(dist):
            ranges[idx] = spec.max_range
        else:
            ranges[idx] = dist
            hits[idx] = True
    return LidarScan(pose, angles.copy(), ranges, spec.max_range, hits)


class OccupancyGrid:
    """Tri-state grid plus an inflated (non-traversable) layer."""

    def __init__(self, bounds, resolution: float = 0.1,
                 inflate_radius: float = 0.0):
        xmin, xmax, ymin, ymax = bounds
        self.resolution = float(resolution)
        self.origin = np.array([xmin, ymin], dtype=float)
        self.width = int(math.ceil((xmax - xmin) / resolution))
        self.height = int(math.ceil((ymax - ymin) / resolution))
        self.cells = np.full((self.height, self.width), UNKNOWN, dtype=np.int8)
        self.inflated = np.zeros((self.height, self.width), dtype=bool)
        self.inflate_radius = float(inflate_radius)
        self._occupied_centers = np.zeros((0, 2))

    # --- coordinate helpers -------------------------------------------------
    def world_to_cell(self, point) -> tuple[int, int]:
        col = int(math.floor((point[0] - self.origin[0]) / self.resolution))
        row = int(math.floor((point[1] - self.origin[1]) / self.resolution))
        return row, col

    def cell_center(self, row, col) -> np.ndarray:
        return self.origin + self.resolution * (np.array([col, row]) + 0.5)

    def cell_centers(self, rows, cols) -> np.ndarray:
        stacked = np.stack([np.asarray(cols, float),
                            np.asarray(rows, float)], axis=-1)
        return self.origin + self.resolution * (stacked + 0.5)

    def in_grid(self, row, col) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def clip_cell(self, row, col) -> tuple[int, int]:
        return (min(max(row, 0), self.height - 1),
                min(max(col, 0), self.width - 1))

    # --- state queries -------------------------------------------------------
    @property
    def occupied_mask(self) -> np.ndarray:
        return self.cells == OCCUPIED

    @property
    def known_free_mask(self) -> np.ndarray:
        return self.cells == FREE

    @property
    def occupied_centers(self) -> np.ndarray:
        return self._occupied_centers

    def traversable_mask(self, optimistic: bool) -> np.ndarray:
        """Planner traversability: known free (or also unknown when
        optimistic), excluding the inflated layer."""
        base = self.cells == FREE
        if optimistic:
            base = base | (self.cells == UNKNOWN)
        return base & ~self.inflated

    def refresh_inflation(self):
        """Inflated layer = occupied dilated to the configured radius via a
        Euclidean distance transform threshold."""
        occ = self.occupied_mask
        if not occ.any():
            self.inflated = np.zeros_like(occ)
            self._occupied_centers = np.zeros((0, 2))
            return
        dist = distance_transform_edt(~occ, sampling=self.resolution)
        self.inflated = dist <= self.inflate_radius
        rows, cols = np.nonzero(occ)
        self._occupied_centers = self.cell_centers(rows, cols)

    def snapshot_text(self) -> str:
        """Portable text dump: header then one U/F/O/I char per cell, row 0
        first. Inflated-but-not-occupied cells print I."""
        header = (f"{self.width} {self.height} {float(self.resolution)!r} "
                  f"{float(self.origin[0])!r} {float(self.origin[1])!r}")
        lines = [header]
        for row in range(self.height):
            chars = []
            for col in range(self.width):
                state = int(self.cells[row, col])
                if self.inflated[row, col] and state != OCCUPIED:
                    chars.append("I")
                else:
                    chars.append(_STATE_CHARS[state])
            lines.append("".join(chars))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_snapshot_text(cls, text: str) -> "OccupancyGrid":
        lines = text.strip().splitlines()
        width, height, res, ox, oy = lines[0].split()
        width, height = int(width), int(height)
        grid = cls((float(ox), float(ox) + width * float(res),
                    float(oy), float(oy) + height * float(res)),
                   resolution=float(res))
        for row, line in enumerate(lines[1:height + 1]):
            for col, ch in enumerate(line):
                if ch == "O":
                    grid.cells[row, col] = OCCUPIED
                elif ch == "F":
                    grid.cells[row, col] = FREE
                elif ch == "I":
                    grid.inflated[row, col] = True
        grid.inflated |= grid.occupied_mask
        rows, cols = np.nonzero(grid.occupied_mask)
        grid._occupied_centers = grid.cell_centers(rows, cols)
        return grid


def _bresenham(r0, c0, r1, c1):
    """8-connected integer line walk from (r0, c0) to (r1, c1), inclusive."""
    cells = []
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        cells.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return cells


def update_occupancy(grid: OccupancyGrid, scan: LidarScan,
                     refresh: bool = True):
    """Fold one scan into the grid: ray-walked cells become free, hit
    endpoints occupied; occupied never downgrades. Off-grid portions of a
    ray are skipped cell-by-cell (the walk stays exact)."""
    pose_cell = grid.world_to_cell(scan.pose)
    nudge = 1e-3 * grid.resolution
    free_cells = []
    occ_cells = []
    for ang, rng, hit in zip(scan.angles, scan.ranges, scan.hit_flags):
        direction = np.array([math.cos(ang), math.sin(ang)])
        end_point = scan.pose + (rng + (nudge if hit else -nudge)) * direction
        end_cell = grid.world_to_cell(end_point)
        walk = _bresenham(pose_cell[0], pose_cell[1], end_cell[0], end_cell[1])
        if hit:
            body, last = walk[:-1], walk[-1]
            if grid.in_grid(*last):
                occ_cells.append(last)
        else:
            body = walk
        free_cells.extend(c for c in body if grid.in_grid(*c))
    if free_cells:
        rows, cols = zip(*free_cells)
        rows = np.fromiter(rows, int)
        cols = np.fromiter(cols, int)
        keep = grid.cells[rows, cols] != OCCUPIED
        grid.cells[rows[keep], cols[keep]] = FREE
    if occ_cells:
        rows, cols = zip(*occ_cells)
        grid.cells[np.fromiter(rows, int), np.fromiter(cols, int)] = OCCUPIED
    if refresh:
        grid.refresh_inflation()


def nearest_occupied_points(grid: OccupancyGrid, position,
                            k: int = 1) -> np.ndarray:
    """Centers of the k nearest occupied cells, ascending distance, ties
    broken by (row, col); shape (k', 2) with k' <= k."""
    occ = grid.occupied_mask
    rows, cols = np.nonzero(occ)
    if rows.size == 0:
        return np.zeros((0, 2))
    centers = grid.cell_centers(rows, cols)
    delta = centers - np.asarray(position, float)[None, :]
    dist = np.einsum("ij,ij->i", delta, delta)
    order = np.lexsort((cols, rows, dist))
    return centers[order[:k]]
