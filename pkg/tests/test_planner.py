"""Global planning: shortest paths, resampling, tracking queries."""

import heapq
import math

import numpy as np
import pytest

from swervenav.kinematics import Pose2
from swervenav.planner import (
    NoPathError,
    PathIndex,
    ReferencePath,
    plan,
    query_errors,
    save_path_csv,
)
from swervenav.world import OccupancyGrid, inflate

SQRT2 = math.sqrt(2.0)


def make_world(rows, resolution=0.1, origin=Pose2(-0.05, -0.05, 0.0)):
    cells = np.array([[c == "#" for c in row] for row in rows])
    grid = OccupancyGrid(cells.shape[1], cells.shape[0], resolution, origin, cells)
    return inflate(grid, 0.0)


def empty_world(n=70, resolution=0.1):
    return make_world(["." * n for _ in range(n)], resolution)


def oracle_shortest(free, start, goal):
    """Independent Dijkstra keeping exact (straight, diagonal) step counts.

    Written against a plain dict/heap so it shares nothing with the
    implementation; corner cutting is banned the same way.
    """
    h, w = free.shape
    best = {start: (0, 0)}  # cell -> (straight, diagonal)
    pq = [(0.0, start)]
    while pq:
        d, cell = heapq.heappop(pq)
        s, dg = best[cell]
        if s * 1.0 + dg * SQRT2 < d - 1e-12:
            continue
        if cell == goal:
            return s, dg
        r, c = cell
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w and free[nr, nc]):
                    continue
                if dr != 0 and dc != 0 and not (free[r + dr, c] and free[r, c + dc]):
                    continue
                ns, ndg = (s + 1, dg) if dr == 0 or dc == 0 else (s, dg + 1)
                nd = ns * 1.0 + ndg * SQRT2
                cur = best.get((nr, nc))
                if cur is None or nd < cur[0] * 1.0 + cur[1] * SQRT2 - 1e-12:
                    best[(nr, nc)] = (ns, ndg)
                    heapq.heappush(pq, (nd, (nr, nc)))
    return None


class TestPlan:
    def test_straight_line(self):
        world = empty_world()
        path = plan(world, Pose2(0, 0, 0), Pose2(5, 0, 0))
        assert path.length == pytest.approx(5.0, abs=1e-9)
        assert np.allclose(path.xy[:, 1], 0.0, atol=1e-12)
        assert np.allclose(path.theta, 0.0, atol=1e-12)
        assert path.s[0] == 0.0
        assert np.all(np.diff(path.s) > 0)

    def test_start_equals_goal(self):
        world = empty_world()
        path = plan(world, Pose2(1, 1, 0.4), Pose2(1, 1, 0.4))
        assert len(path.xy) == 1
        assert path.length == 0.0
        assert path.theta[0] == pytest.approx(0.4)

    def test_wall_with_gap_matches_oracle_exactly(self):
        rows = ["..........."] * 11
        rows[0:11] = [r[:5] + ("#" if i != 7 else ".") + r[6:] for i, r in enumerate(rows)]
        world = make_world(rows)
        start, goal = Pose2(0.1, 0.3, 0), Pose2(0.9, 0.3, 0)
        path = plan(world, start, goal)
        (sr, sc) = (int(v) for v in world.world_to_cell(start.x, start.y))
        (gr, gc) = (int(v) for v in world.world_to_cell(goal.x, goal.y))
        s, dg = oracle_shortest(~world.cells, (sr, sc), (gr, gc))
        assert path.grid_cost == s * world.resolution + dg * world.resolution * SQRT2

    def test_unreachable_goal_raises(self):
        rows = ["....#....."] * 10
        world = make_world(rows)
        with pytest.raises(NoPathError, match="unreachable"):
            plan(world, Pose2(0.1, 0.5, 0), Pose2(0.8, 0.5, 0))

    def test_blocked_endpoint_raises(self):
        world = make_world(["...", ".#.", "..."])
        with pytest.raises(NoPathError, match="not free"):
            plan(world, Pose2(0.1, 0.1, 0), Pose2(0.1, 0.0, 0))

    def test_final_orientation_is_goal_yaw(self):
        world = empty_world()
        path = plan(world, Pose2(0, 0, 0), Pose2(3, 2, 1.1))
        assert path.theta[-1] == pytest.approx(1.1)

    def test_waypoints_free_and_spacing_bounded(self):
        rows = ["".join("#" if (r * 31 + c * 17) % 23 == 0 else "." for c in range(40)) for r in range(40)]
        rows[3] = rows[3][:3] + "." + rows[3][4:]
        world = make_world(rows)
        free = ~world.cells
        start = Pose2(0.35, 0.35, 0)
        goal = Pose2(3.45, 3.05, 0)
        sr, sc = (int(v) for v in world.world_to_cell(start.x, start.y))
        gr, gc = (int(v) for v in world.world_to_cell(goal.x, goal.y))
        if not (free[sr, sc] and free[gr, gc]):
            pytest.skip("endpoints blocked in this procedural pattern")
        path = plan(world, start, goal)
        rows_i, cols_i = world.world_to_cell(path.xy[:, 0], path.xy[:, 1])
        assert not world.cells[rows_i, cols_i].any()
        steps = np.hypot(np.diff(path.xy[:, 0]), np.diff(path.xy[:, 1]))
        assert np.all(steps <= world.resolution * SQRT2 + 1e-12)

    def test_random_grids_match_oracle(self):
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(25):
            free = rng.random((16, 16)) > 0.25
            free[0, 0] = True
            free[15, 15] = True
            grid = OccupancyGrid(16, 16, 0.1, Pose2(0, 0, 0), ~free)
            world = inflate(grid, 0.0)
            start = Pose2(*grid.cell_center(0, 0), 0.0)
            goal = Pose2(*grid.cell_center(15, 15), 0.0)
            oracle = oracle_shortest(free, (0, 0), (15, 15))
            if oracle is None:
                with pytest.raises(NoPathError):
                    plan(world, start, goal)
            else:
                s, dg = oracle
                path = plan(world, start, goal)
                assert path.grid_cost == s * 0.1 + dg * 0.1 * SQRT2
                checked += 1
        assert checked > 5


class TestQueryErrors:
    def straight_path(self):
        xy = np.stack([np.linspace(0, 5, 51), np.zeros(51)], axis=1)
        return ReferencePath(xy=xy, theta=np.zeros(51), s=np.linspace(0, 5, 51))

    def test_on_waypoint(self):
        path = self.straight_path()
        d, a, s = query_errors(path, Pose2(2.0, 0.0, 0.0))
        assert (d, a) == (0.0, 0.0)
        assert s == pytest.approx(2.0)

    def test_lateral_offset(self):
        path = self.straight_path()
        d, a, s = query_errors(path, Pose2(2.0, 1.0, 0.0))
        assert d == pytest.approx(1.0)
        assert a == 0.0

    def test_tie_breaks_toward_larger_progress(self):
        path = self.straight_path()
        d, a, s = query_errors(path, Pose2(2.05, 0.7, 0.0))
        assert s == pytest.approx(2.1)  # equidistant from s=2.0 and s=2.1

    def test_heading_error_wrapped(self):
        path = self.straight_path()
        _, a, _ = query_errors(path, Pose2(1.0, 0.0, 3.5))
        assert a == pytest.approx(2 * math.pi - 3.5)

    def test_continuity_along_trajectory(self):
        # no jumps bigger than the waypoint spacing while sliding along
        path = self.straight_path()
        prev = None
        for x in np.linspace(0.0, 5.0, 400):
            d, a, s = query_errors(path, Pose2(float(x), 0.3, 0.1))
            if prev is not None:
                assert abs(d - prev[0]) < 0.15
                assert abs(s - prev[1]) <= 0.1 + 1e-9
            prev = (d, s)


class TestPathIndex:
    def test_matches_exact_query_distances(self):
        world = empty_world()
        path = plan(world, Pose2(0.5, 0.5, 0), Pose2(4.5, 3.5, 0))
        index = PathIndex(path, world)
        rng = np.random.default_rng(3)
        pts = rng.uniform(0.2, 4.8, size=(200, 2))
        d_fast, _ = index.query(pts[:, 0], pts[:, 1], np.zeros(200))
        for (x, y), df in zip(pts, d_fast):
            de, _, _ = query_errors(path, Pose2(float(x), float(y), 0.0))
            # cell anchoring may pick a waypoint up to ~a cell farther
            assert df >= de - 1e-6
            assert df - de <= world.resolution * SQRT2 + 1e-6

    def test_exact_on_waypoints(self):
        world = empty_world()
        path = plan(world, Pose2(0.5, 0.5, 0), Pose2(4.5, 0.5, 0))
        index = PathIndex(path, world)
        d, a = index.query(path.xy[::7, 0], path.xy[::7, 1], path.theta[::7])
        assert np.allclose(d, 0.0, atol=1e-6)
        assert np.allclose(a, 0.0, atol=1e-6)


class TestValidationAndDump:
    def test_reference_path_validates_lengths(self):
        with pytest.raises(ValueError):
            ReferencePath(
                xy=np.zeros((3, 2)), theta=np.zeros(2), s=np.array([0.0, 1.0, 2.0])
            )

    def test_reference_path_requires_increasing_arc(self):
        with pytest.raises(ValueError, match="increasing"):
            ReferencePath(
                xy=np.zeros((2, 2)), theta=np.zeros(2), s=np.array([0.0, 0.0])
            )

    def test_csv_dump(self, tmp_path):
        world = empty_world()
        path = plan(world, Pose2(0, 0, 0), Pose2(1, 0, 0))
        out = tmp_path / "path.csv"
        save_path_csv(path, str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "x,y,theta,s"
        assert len(lines) == len(path.xy) + 1
        first = [float(v) for v in lines[1].split(",")]
        assert first == pytest.approx([0.0, 0.0, 0.0, 0.0])
