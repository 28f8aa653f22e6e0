"""Grid worlds: procedural scenario generation, inflation and collision tests.

Grids are row-major boolean arrays (True = occupied) with row 0 at the
origin corner; cell (r, c) covers the square whose center is
origin + ((c + 0.5) * res, (r + 0.5) * res).  Collision checking reduces to
a point lookup on a grid inflated by the vehicle's circumscribed radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .kinematics import Pose2


class GenerationError(RuntimeError):
    """Raised when no valid world layout is found after repeated attempts."""


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class OccupancyGrid:
    width: int
    height: int
    resolution: float
    origin: Pose2
    cells: np.ndarray  # bool, shape (height, width), True = occupied

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")
        if self.origin.theta != 0.0:
            raise ValueError("rotated grid origins are not supported")
        if self.cells.shape != (self.height, self.width):
            raise ValueError(
                f"cells shape {self.cells.shape} does not match "
                f"(height, width)=({self.height}, {self.width})"
            )

    def world_to_cell(self, x, y):
        """World coordinates -> (row, col) integer cell indices (may be out of range)."""
        col = np.floor((np.asarray(x, dtype=float) - self.origin.x) / self.resolution)
        row = np.floor((np.asarray(y, dtype=float) - self.origin.y) / self.resolution)
        return row.astype(np.int64), col.astype(np.int64)

    def cell_center(self, row, col):
        x = self.origin.x + (np.asarray(col, dtype=float) + 0.5) * self.resolution
        y = self.origin.y + (np.asarray(row, dtype=float) + 0.5) * self.resolution
        return x, y

    def in_bounds(self, row, col):
        row = np.asarray(row)
        col = np.asarray(col)
        return (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)


@dataclass(frozen=True)
class InflatedGrid:
    """Occupancy grid dilated by a metric radius; True = lethal."""

    width: int
    height: int
    resolution: float
    origin: Pose2
    cells: np.ndarray
    radius: float

    world_to_cell = OccupancyGrid.world_to_cell
    cell_center = OccupancyGrid.cell_center
    in_bounds = OccupancyGrid.in_bounds


def inflate(grid: OccupancyGrid, radius: float) -> InflatedGrid:
    """Mark every cell within Euclidean distance ``radius`` of an obstacle.

    Distances are between cell centers (distance-transform semantics), so
    radius 0 reproduces the occupied set exactly.
    """
    if radius < 0.0:
        raise ValueError("inflation radius must be non-negative")
    occ = grid.cells
    if occ.any():
        dist = ndimage.distance_transform_edt(~occ) * grid.resolution
        lethal = occ | (dist <= radius)
    else:
        lethal = occ.copy()
    return InflatedGrid(
        grid.width, grid.height, grid.resolution, grid.origin, lethal, radius
    )


def in_collision(grid: InflatedGrid, p: Pose2) -> int:
    """1 if the vehicle-center cell is lethal or outside the map, else 0."""
    row, col = grid.world_to_cell(p.x, p.y)
    if not bool(grid.in_bounds(row, col)):
        return 1
    return int(grid.cells[row, col])


def collision_mask(grid: InflatedGrid, x, y) -> np.ndarray:
    """Vectorized collision test for arrays of world coordinates."""
    row, col = grid.world_to_cell(x, y)
    inside = grid.in_bounds(row, col)
    rr = np.clip(row, 0, grid.height - 1)
    cc = np.clip(col, 0, grid.width - 1)
    return ~inside | grid.cells[rr, cc]


# ---------------------------------------------------------------------------
# scenario generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Parameters of a procedurally generated navigation field."""

    kind: str = "cylinder_garden"  # or "maze"
    width_m: float = 20.0
    height_m: float = 20.0
    resolution: float = 0.1
    seed: int = 0
    goal_count: int = 10
    min_goal_separation: float = 2.0
    # free-space clearance used when validating connectivity and placing
    # goals; should cover the vehicle's inflation radius
    clearance: float = 0.8
    border_wall: bool = True
    # cylinder_garden parameters; min_cylinder_separation keeps corridors
    # between inflated cylinders wide enough to drive through
    cylinder_radius: float = 0.35
    cylinder_count: int = 30
    min_cylinder_separation: float = 3.2
    # maze parameters: number of dividing walls and the width of the door
    # openings cut into each wall; doors must exceed 2 * clearance or the
    # clear-space connectivity check will reject every layout
    wall_count: int = 4
    door_width: float = 2.4
    max_attempts: int = 30

    def __post_init__(self):
        if self.kind not in ("cylinder_garden", "maze"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.goal_count < 1:
            raise ValueError("goal_count must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _carve_disc(occ: np.ndarray, row: float, col: float, radius_cells: float, value: bool):
    h, w = occ.shape
    r0 = max(0, int(math.floor(row - radius_cells)) - 1)
    r1 = min(h, int(math.ceil(row + radius_cells)) + 2)
    c0 = max(0, int(math.floor(col - radius_cells)) - 1)
    c1 = min(w, int(math.ceil(col + radius_cells)) + 2)
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    inside = (rr - row) ** 2 + (cc - col) ** 2 <= radius_cells**2
    occ[r0:r1, c0:c1][inside] = value


def _cylinder_field(scn: Scenario, rng: np.random.Generator) -> np.ndarray:
    h = int(round(scn.height_m / scn.resolution))
    w = int(round(scn.width_m / scn.resolution))
    occ = np.zeros((h, w), dtype=bool)
    if scn.border_wall:
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
    rad_cells = scn.cylinder_radius / scn.resolution
    keepout = (scn.clearance + scn.cylinder_radius) / scn.resolution + 2.0
    min_sep = scn.min_cylinder_separation / scn.resolution
    center = np.array([h / 2.0, w / 2.0])
    placed = []
    attempts = 0
    while len(placed) < scn.cylinder_count and attempts < 40 * scn.cylinder_count:
        attempts += 1
        row = rng.uniform(2 + rad_cells, h - 2 - rad_cells)
        col = rng.uniform(2 + rad_cells, w - 2 - rad_cells)
        if np.hypot(row - center[0], col - center[1]) < keepout:
            continue  # keep the start region open
        if any(np.hypot(row - r, col - c) < min_sep for r, c in placed):
            continue
        placed.append((row, col))
        _carve_disc(occ, row, col, rad_cells, True)
    return occ


def _maze_field(scn: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Comb-style maze: partial walls alternating from the sides.

    Walls span 55-75% of the field so detours stay bounded (a full-width
    wall makes the goal pull fight the reference path across the wall),
    plus one door cut inside each wall segment.
    """
    h = int(round(scn.height_m / scn.resolution))
    w = int(round(scn.width_m / scn.resolution))
    occ = np.zeros((h, w), dtype=bool)
    if scn.border_wall:
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
    door_cells = max(2, int(round(scn.door_width / scn.resolution)))
    wall_thick = max(1, int(round(0.2 / scn.resolution)))
    for i in range(scn.wall_count):
        horizontal = bool(rng.integers(0, 2))
        span = rng.uniform(0.55, 0.75)
        from_low_side = bool(rng.integers(0, 2))
        if horizontal:
            r = int(rng.uniform(0.2, 0.8) * h)
            n = int(span * w)
            a, b = (0, n) if from_low_side else (w - n, w)
            occ[r : r + wall_thick, a:b] = True
            c = int(rng.uniform(a + 0.1 * n, b - 0.1 * n - door_cells))
            occ[r : r + wall_thick, c : c + door_cells] = False
        else:
            c = int(rng.uniform(0.2, 0.8) * w)
            n = int(span * h)
            a, b = (0, n) if from_low_side else (h - n, h)
            occ[a:b, c : c + wall_thick] = True
            r = int(rng.uniform(a + 0.1 * n, b - 0.1 * n - door_cells))
            occ[r : r + door_cells, c : c + wall_thick] = False
    return occ


def _clear_region(occ: np.ndarray, resolution: float, clearance: float) -> np.ndarray:
    """Cells whose distance to the nearest obstacle exceeds ``clearance``."""
    if not occ.any():
        return ~occ
    dist = ndimage.distance_transform_edt(~occ) * resolution
    return dist > clearance

def _start_cell(clear: np.ndarray) -> tuple[int, int]:
    """Clear cell nearest to the grid center (deterministic tie-break)."""
    h, w = clear.shape
    rows, cols = np.nonzero(clear)
    if rows.size == 0:
        raise GenerationError("no clear cells in generated field")
    d2 = (rows - (h - 1) / 2.0) ** 2 + (cols - (w - 1) / 2.0) ** 2
    i = int(np.argmin(d2))  # first minimum = lowest row/col among ties
    return int(rows[i]), int(cols[i])


def generate(scenario: Scenario):
    """Generate a world and its goal sequence.

    Returns (grid, goals).  Goals are sampled from the clear-space connected
    component containing the field center, pairwise separated by at least
    ``min_goal_separation``; each goal's orientation is the travel bearing
    from its predecessor.  Layouts whose clear space is too fragmented are
    rejected and regenerated with an incremented sub-seed, failing after
    ``max_attempts`` rounds.
    """
    for attempt in range(scenario.max_attempts):
        rng = np.random.default_rng(scenario.seed + 1000 * attempt)
        occ = (
            _cylinder_field(scenario, rng)
            if scenario.kind == "cylinder_garden"
            else _maze_field(scenario, rng)
        )
        grid = OccupancyGrid(
            width=occ.shape[1],
            height=occ.shape[0],
            resolution=scenario.resolution,
            origin=Pose2(0.0, 0.0, 0.0),
            cells=occ,
        )
        clear = _clear_region(occ, scenario.resolution, scenario.clearance)
        if not clear.any():
            continue
        labels, _ = ndimage.label(clear, structure=_FOUR_CONNECTED)
        start = _start_cell(clear)
        component = labels == labels[start]
        # the component must be large enough to host the goals at the
        # requested separation
        min_cells = scenario.goal_count * 4
        if component.sum() < min_cells:
            continue
        goals = _sample_goals(grid, component, start, scenario, rng)
        if goals is not None:
            return grid, goals
    raise GenerationError(
        f"no valid {scenario.kind} layout after {scenario.max_attempts} attempts; "
        "parameters are likely too dense for the field size"
    )


def _sample_goals(grid, component, start, scenario, rng):
    rows, cols = np.nonzero(component)
    xs, ys = grid.cell_center(rows, cols)
    sx, sy = grid.cell_center(*start)
    chosen = []
    min_sep2 = scenario.min_goal_separation**2
    for _ in range(400):
        i = int(rng.integers(0, rows.size))
        x, y = float(xs[i]), float(ys[i])
        ok = all((x - gx) ** 2 + (y - gy) ** 2 >= min_sep2 for gx, gy in chosen)
        if ok:
            chosen.append((x, y))
            if len(chosen) == scenario.goal_count:
                break
    if len(chosen) < scenario.goal_count:
        return None
    goals = []
    px, py, ptheta = float(sx), float(sy), 0.0
    for gx, gy in chosen:
        if gx == px and gy == py:
            theta = ptheta
        else:
            theta = math.atan2(gy - py, gx - px)
        goals.append(Pose2(gx, gy, theta))
        px, py, ptheta = gx, gy, theta
    return goals


def default_start(grid: OccupancyGrid, scenario: Scenario, goals) -> Pose2:
    """Start pose used by the episode runner: the clear cell nearest the
    field center, heading toward the first goal."""
    clear = _clear_region(grid.cells, grid.resolution, scenario.clearance)
    row, col = _start_cell(clear)
    x, y = grid.cell_center(row, col)
    x, y = float(x), float(y)
    if goals and not (goals[0].x == x and goals[0].y == y):
        theta = math.atan2(goals[0].y - y, goals[0].x - x)
    else:
        theta = 0.0
    return Pose2(x, y, theta)


def connected(free: np.ndarray, a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Flood-fill reachability between two cells of a free-space mask."""
    if not (free[a] and free[b]):
        return False
    labels, _ = ndimage.label(free, structure=_FOUR_CONNECTED)
    return bool(labels[a] == labels[b])


# ---------------------------------------------------------------------------
# map file format
# ---------------------------------------------------------------------------

def save_map(grid: OccupancyGrid, path: str) -> None:
    """Write the plain-text map format (header lines, then '.'/'#' rows)."""
    lines = [
        str(grid.width),
        str(grid.height),
        repr(grid.resolution),
        repr(grid.origin.x),
        repr(grid.origin.y),
        repr(grid.origin.theta),
    ]
    for r in range(grid.height):
        lines.append("".join("#" if v else "." for v in grid.cells[r]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_map(path: str) -> OccupancyGrid:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if len(lines) < 6:
        raise ValueError(f"map file {path} is truncated")
    width = int(lines[0])
    height = int(lines[1])
    resolution = float(lines[2])
    origin = Pose2(float(lines[3]), float(lines[4]), float(lines[5]))
    rows = lines[6 : 6 + height]
    if len(rows) != height:
        raise ValueError(f"map file {path} has {len(rows)} rows, expected {height}")
    cells = np.zeros((height, width), dtype=bool)
    for r, line in enumerate(rows):
        if len(line) != width:
            raise ValueError(f"map row {r} has length {len(line)}, expected {width}")
        cells[r] = np.frombuffer(line.encode("ascii"), dtype=np.uint8) == ord("#")
    return OccupancyGrid(width, height, resolution, origin, cells)
