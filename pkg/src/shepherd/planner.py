"""Skeleton-guided grid planning over the discovered map.

The route from the current reference position to the goal has three
stages: a connector from the start cell to the nearest reachable skeleton
cell, a walk along the skeleton toward the cell closest to the goal, and
a straight rasterized exit through (optimistically traversable) unknown
space to the goal. With no obstacles discovered yet there is no skeleton
and planning degenerates to a direct path over free-or-unknown cells.

Everything known stays clear of the inflated layer by construction, so
every planned cell keeps at least the inflation radius of clearance from
every mapped obstacle cell. Tie-breaking is lexicographic throughout to
make replanning deterministic.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np
from skimage.morphology import medial_axis

from shepherd.mapping import OccupancyGrid

__all__ = ["GridPath", "NoPathError", "extract_skeleton", "plan_path"]

_SQRT2 = math.sqrt(2.0)
_NEIGHBORS = ((-1, -1, _SQRT2), (-1, 0, 1.0), (-1, 1, _SQRT2),
              (0, -1, 1.0), (0, 1, 1.0),
              (1, -1, _SQRT2), (1, 0, 1.0), (1, 1, _SQRT2))


class NoPathError(RuntimeError):
    """Start cell blocked or no traversable route exists."""


@dataclass(frozen=True)
class GridPath:
    """Ordered 8-connected cell route with metric waypoints."""

    cells: tuple  # ((row, col), ...)
    world_points: np.ndarray  # (K+1, 2)

    @property
    def K(self) -> int:
        return len(self.cells) - 1

    def dump_csv(self, path_or_handle):
        rows = [(k, float(p[0]), float(p[1]))
                for k, p in enumerate(self.world_points)]
        if hasattr(path_or_handle, "write"):
            writer = csv.writer(path_or_handle)
            writer.writerow(["k", "x", "y"])
            writer.writerows(rows)
        else:
            with open(path_or_handle, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["k", "x", "y"])
                writer.writerows(rows)


def extract_skeleton(grid: OccupancyGrid) -> np.ndarray:
    """Boolean mask of medial-axis cells of the discovered traversable space.

    Thinned ridge of the free-space distance transform (one-cell-wide,
    8-connected curves). Clearance is measured against mapped obstacles
    only, with unknown space counting as open, so a corridor's ridge runs
    down its midline all the way to the frontier instead of bending around
    the discovery boundary; the ridge is then restricted to known free
    cells. Empty when nothing occupied has been discovered: with no
    obstacles there is no meaningful mid-line and the planner falls back
    to direct routing.
    """
    if not grid.occupied_mask.any():
        return np.zeros_like(grid.inflated)
    open_space = grid.traversable_mask(optimistic=True)
    if not open_space.any():
        return np.zeros_like(grid.inflated)
    ridge = medial_axis(open_space, rng=0)
    return ridge & grid.known_free_mask & ~grid.inflated


def _reconstruct(came_from, node):
    out = [node]
    while node in came_from:
        node = came_from[node]
        out.append(node)
    out.reverse()
    return out


def _search(traversable, start, goal_set=None, goal_cell=None,
            heuristic_to=None):
    """Deterministic A* / Dijkstra over a boolean mask.

    Stops at the first popped member of goal_set (Dijkstra mode) or at
    goal_cell (A* with Euclidean heuristic). Ties break on (f, h, row,
    col) so identical inputs give identical routes.
    """
    height, width = traversable.shape
    if goal_cell is not None:
        def h_of(cell):
            return math.hypot(cell[0] - goal_cell[0], cell[1] - goal_cell[1])
    else:
        def h_of(cell):
            return 0.0

    g_score = {start: 0.0}
    came = {}
    h0 = h_of(start)
    heap = [(h0, h0, start[0], start[1])]
    closed = set()
    while heap:
        f, _, r, c = heapq.heappop(heap)
        node = (r, c)
        if node in closed:
            continue
        closed.add(node)
        if goal_set is not None and node in goal_set:
            return _reconstruct(came, node)
        if goal_cell is not None and node == goal_cell:
            return _reconstruct(came, node)
        g_here = g_score[node]
        for dr, dc, step in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < height and 0 <= nc < width):
                continue
            if not traversable[nr, nc]:
                continue
            cand = g_here + step
            nxt = (nr, nc)
            if cand < g_score.get(nxt, math.inf) - 1e-12:
                g_score[nxt] = cand
                came[nxt] = node
                hh = h_of(nxt)
                heapq.heappush(heap, (cand + hh, hh, nr, nc))
    return None


def _bresenham_cells(a, b):
    cells = []
    r, c = a
    r1, c1 = b
    dr, dc = abs(r1 - r), abs(c1 - c)
    sr = 1 if r1 >= r else -1
    sc = 1 if c1 >= c else -1
    err = dc - dr
    while True:
        cells.append((r, c))
        if (r, c) == (r1, c1):
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return cells


def _erase_loops(cells):
    seen = {}
    out = []
    for cell in cells:
        if cell in seen:
            del_from = seen[cell]
            for dropped in out[del_from + 1:]:
                seen.pop(dropped, None)
            out = out[:del_from + 1]
        else:
            seen[cell] = len(out)
            out.append(cell)
    return out


def _component_cells(mask, seed):
    """8-connected component of mask containing seed (iterative flood)."""
    height, width = mask.shape
    stack = [seed]
    comp = {seed}
    while stack:
        r, c = stack.pop()
        for dr, dc, _ in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if (0 <= nr < height and 0 <= nc < width and mask[nr, nc]
                    and (nr, nc) not in comp):
                comp.add((nr, nc))
                stack.append((nr, nc))
    return comp


def plan_path(grid: OccupancyGrid, start_xy, goal_xy,
              skeleton: np.ndarray | None = None) -> GridPath:
    """Plan a cell route from start_xy to goal_xy over the current map."""
    start = grid.clip_cell(*grid.world_to_cell(start_xy))
    goal = grid.clip_cell(*grid.world_to_cell(goal_xy))
    known = grid.traversable_mask(optimistic=False)
    optimistic = grid.traversable_mask(optimistic=True)
    if not optimistic[start]:
        raise NoPathError(f"start cell {start} is not traversable")
    if skeleton is None:
        skeleton = extract_skeleton(grid)

    if start == goal:
        return _finish(grid, [start])

    skeleton_cells = set(map(tuple, np.argwhere(skeleton)))
    if not skeleton_cells:
        direct = _search(optimistic, start, goal_cell=goal)
        if direct is None:
            raise NoPathError("no traversable route to the goal")
        return _finish(grid, direct)

    # Stage 1: connector to the nearest reachable skeleton cell. The start
    # may sit in not-yet-scanned space, so the connector is optimistic too.
    connector = _search(optimistic, start, goal_set=skeleton_cells)
    if connector is None:
        direct = _search(optimistic, start, goal_cell=goal)
        if direct is None:
            raise NoPathError("no traversable route to the goal")
        return _finish(grid, direct)
    entry = connector[-1]

    # Stage 2: along the skeleton to the component cell nearest the goal.
    component = _component_cells(skeleton, entry)
    exit_cell = min(component,
                    key=lambda cell: (math.hypot(cell[0] - goal[0],
                                                 cell[1] - goal[1]),
                                      cell[0], cell[1]))
    skel_mask = np.zeros_like(skeleton)
    rows, cols = zip(*component)
    skel_mask[list(rows), list(cols)] = True
    ridge = _search(skel_mask, entry, goal_cell=exit_cell)
    if ridge is None:  # cannot happen inside one component, but stay safe
        ridge = [entry]

    # Stage 3: straight exit through unknown space; fall back to a search
    # when the ray would cross cells already known to be too close to
    # obstacles.
    tail = _bresenham_cells(exit_cell, goal)
    if any(grid.inflated[r, c] for r, c in tail):
        tail = _search(optimistic, exit_cell, goal_cell=goal)
        if tail is None:
            raise NoPathError("goal unreachable from the skeleton exit")

    cells = _erase_loops(list(connector) + list(ridge[1:]) + list(tail[1:]))
    return _finish(grid, cells)


def _finish(grid, cells):
    pts = np.array([grid.cell_center(r, c) for r, c in cells])
    return GridPath(tuple(cells), pts)
