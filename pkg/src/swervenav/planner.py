"""Global planning on occupancy grids and reference-path tracking queries.

Plans are shortest 8-connected grid paths (straight cost 1, diagonal sqrt(2),
no corner cutting) resampled into a dense polyline of poses.  Tracking
queries return the raw distance/heading error against the nearest waypoint;
the cost layer squares them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .kinematics import Pose2, wrap_angle
from .world import InflatedGrid

SQRT2 = math.sqrt(2.0)


class NoPathError(RuntimeError):
    """Raised when no collision-free grid path exists."""


@dataclass(frozen=True)
class ReferencePath:
    """Dense sequence of waypoints with orientations and cumulative arc length.

    ``grid_cost`` is the cost of the underlying grid path in canonical form
    (straight_steps * res + diagonal_steps * res * sqrt(2)); it is exact and
    comparable against independent shortest-path computations.
    """

    xy: np.ndarray  # (N, 2)
    theta: np.ndarray  # (N,)
    s: np.ndarray  # (N,)
    grid_cost: float = 0.0

    def __post_init__(self):
        if len(self.xy) == 0:
            raise ValueError("reference path must contain at least one waypoint")
        if len(self.xy) != len(self.theta) or len(self.xy) != len(self.s):
            raise ValueError("xy, theta and s must have equal length")
        if len(self.s) > 1 and not np.all(np.diff(self.s) > 0):
            raise ValueError("arc length must be strictly increasing")

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def end(self) -> np.ndarray:
        return self.xy[-1]


def _neighbor_edges(free: np.ndarray):
    """Vectorized 8-connected adjacency with the corner-cutting ban."""
    h, w = free.shape
    ids = np.arange(h * w).reshape(h, w)
    rows, cols, data = [], [], []

    def add(mask_from, mask_to, dr, dc, cost):
        ok = np.zeros_like(free)
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        ok[r0:r1, c0:c1] = mask_from[r0:r1, c0:c1] & mask_to[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if dr != 0 and dc != 0:
            ok[r0:r1, c0:c1] &= (
                mask_to[r0 + dr : r1 + dr, c0:c1] & mask_to[r0:r1, c0 + dc : c1 + dc]
            )
        rr, cc = np.nonzero(ok)
        rows.append(ids[rr, cc])
        cols.append(ids[rr + dr, cc + dc])
        data.append(np.full(rr.size, cost))

    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        add(free, free, dr, dc, 1.0)
    for dr, dc in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        add(free, free, dr, dc, SQRT2)

    return (
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(data),
        h * w,
    )


def _grid_path(free: np.ndarray, start: tuple[int, int], goal: tuple[int, int]):
    """Shortest-path cell sequence from start to goal, or None if unreachable."""
    if start == goal:
        return [start]
    rows, cols, data, n = _neighbor_edges(free)
    graph = csr_matrix((data, (rows, cols)), shape=(n, n))
    w = free.shape[1]
    sid = start[0] * w + start[1]
    gid = goal[0] * w + goal[1]
    dist, pred = _csgraph_dijkstra(
        graph, directed=True, indices=sid, return_predecessors=True
    )
    if not np.isfinite(dist[gid]):
        return None
    cells = []
    node = gid
    while node != sid:
        cells.append((node // w, node % w))
        node = pred[node]
        if node < 0:  # defensive; unreachable is caught above
            return None
    cells.append(start)
    cells.reverse()
    return cells


def _resample_polyline(pts: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline at roughly uniform spacing, keeping every vertex
    (so the arc length of the result equals the polyline's exactly)."""
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        seg = float(np.hypot(b[0] - a[0], b[1] - a[1]))
        if seg == 0.0:
            continue
        n = max(1, int(math.ceil(seg / spacing - 1e-12)))
        for i in range(1, n + 1):
            out.append(a + (b - a) * (i / n))
    return np.asarray(out)


def plan(
    grid: InflatedGrid, start: Pose2, goal: Pose2, spacing: float = 0.1
) -> ReferencePath:
    """Plan a reference path from start to goal through free cells.

    Waypoint orientations are path tangents (central differences); the final
    waypoint takes the goal orientation.  Raises NoPathError when either
    endpoint cell is blocked or the goal is unreachable.
    """
    sr, sc = (int(v) for v in grid.world_to_cell(start.x, start.y))
    gr, gc = (int(v) for v in grid.world_to_cell(goal.x, goal.y))
    for name, (r, c) in (("start", (sr, sc)), ("goal", (gr, gc))):
        if not bool(grid.in_bounds(r, c)):
            raise NoPathError(f"{name} cell ({r}, {c}) is outside the map")
        if grid.cells[r, c]:
            raise NoPathError(f"{name} cell ({r}, {c}) is not free")

    cells = _grid_path(~grid.cells, (sr, sc), (gr, gc))
    if cells is None:
        raise NoPathError(f"goal cell ({gr}, {gc}) is unreachable from ({sr}, {sc})")

    steps = np.diff(np.asarray(cells), axis=0) if len(cells) > 1 else np.zeros((0, 2))
    n_diag = int(np.sum(np.all(steps != 0, axis=1)))
    n_straight = len(steps) - n_diag
    grid_cost = n_straight * grid.resolution + n_diag * grid.resolution * SQRT2

    # polyline through cell centers, with the exact start/goal positions
    # substituted at the ends (they lie inside the end cells)
    pts = np.stack(grid.cell_center(*np.asarray(cells).T), axis=-1).astype(float)
    pts[0] = (start.x, start.y)
    pts[-1] = (goal.x, goal.y)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.diff(pts, axis=0) != 0.0, axis=1)
    pts = pts[keep]

    if len(pts) == 1:
        return ReferencePath(
            xy=pts,
            theta=np.array([goal.theta]),
            s=np.array([0.0]),
            grid_cost=grid_cost,
        )

    xy = _resample_polyline(pts, spacing)
    seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
    s = np.concatenate([[0.0], np.cumsum(seg)])

    # tangents by central difference over a few waypoints; the wider window
    # filters the 0/45-degree chatter of staircase grid paths
    n = len(xy)
    h = min(3, n - 1)
    lo = np.maximum(np.arange(n) - h, 0)
    hi = np.minimum(np.arange(n) + h, n - 1)
    theta = np.arctan2(xy[hi, 1] - xy[lo, 1], xy[hi, 0] - xy[lo, 0])
    theta[-1] = goal.theta
    return ReferencePath(xy=xy, theta=wrap_angle(theta), s=s, grid_cost=grid_cost)


def query_errors(path: ReferencePath, p: Pose2):
    """Raw tracking errors of a pose against the nearest waypoint.

    Returns (dist_err, angle_err, progress); ties between equidistant
    waypoints resolve toward larger arc length.
    """
    d2 = (path.xy[:, 0] - p.x) ** 2 + (path.xy[:, 1] - p.y) ** 2
    idx = len(d2) - 1 - int(np.argmin(d2[::-1]))
    dist = math.sqrt(float(d2[idx]))
    angle = abs(float(wrap_angle(p.theta - path.theta[idx])))
    return dist, angle, float(path.s[idx])


class PathIndex:
    """Constant-time nearest-waypoint lookups for rollout cost evaluation.

    Rasterizes the path onto the grid and precomputes, for every cell, the
    index of the waypoint nearest to that cell's center (later waypoints win
    ties within a cell, matching the larger-progress tie-break).  Queries
    return the exact Euclidean distance from the query point to the chosen
    waypoint; the choice itself is anchored at cell resolution, which is
    well below the tracking-cost scale.
    """

    def __init__(self, path: ReferencePath, grid: InflatedGrid):
        self.path = path
        self.grid = grid
        marker = np.full((grid.height, grid.width), -1, dtype=np.int64)
        rows, cols = grid.world_to_cell(path.xy[:, 0], path.xy[:, 1])
        inside = grid.in_bounds(rows, cols)
        marker[rows[inside], cols[inside]] = np.flatnonzero(inside)
        if not (marker >= 0).any():
            raise ValueError("no path waypoint lies inside the grid")
        ind = ndimage.distance_transform_edt(
            marker < 0, return_distances=False, return_indices=True
        )
        self.nearest = marker[ind[0], ind[1]].astype(np.int32)
        # single-precision waypoint caches for the solver hot path
        self.wx = path.xy[:, 0].astype(np.float32)
        self.wy = path.xy[:, 1].astype(np.float32)
        self.wtheta = path.theta.astype(np.float32)

    def query(self, x, y, theta):
        """Vectorized (dist_err, angle_err) against the indexed path."""
        rows, cols = self.grid.world_to_cell(x, y)
        rr = np.clip(rows, 0, self.grid.height - 1)
        cc = np.clip(cols, 0, self.grid.width - 1)
        idx = self.nearest[rr, cc]
        wx = self.path.xy[idx, 0]
        wy = self.path.xy[idx, 1]
        dist = np.hypot(np.asarray(x, dtype=float) - wx, np.asarray(y, dtype=float) - wy)
        angle = np.abs(wrap_angle(np.asarray(theta, dtype=float) - self.path.theta[idx]))
        return dist, angle


def save_path_csv(path: ReferencePath, filename: str) -> None:
    """Dump the path as CSV with columns x, y, theta, s."""
    with open(filename, "w", encoding="utf-8") as f:
        f.write("x,y,theta,s\n")
        for (x, y), th, s in zip(path.xy, path.theta, path.s):
            f.write(f"{float(x)!r},{float(y)!r},{float(th)!r},{float(s)!r}\n")
