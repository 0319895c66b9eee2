import math

import numpy as np
import pytest

from esmap import world
from esmap.errors import (
    CollisionOnRollout,
    InvalidMaze,
    LimitExceeded,
    OutsideWorld,
    ParseError,
)
from esmap.geometry import ActionLimits, Pose

from conftest import load_maze, load_traj

SEALED_ROOM = """\
cell 0.24
###
#S#
###
"""

FULL_SENSOR = world.SensorConfig(fov=2 * math.pi, n_rays=128, max_range=3.84)


# ---------------------------------------------------------------- parsing

def test_corridor_fixture_dimensions(corridor):
    assert corridor.occupancy.shape == (10, 10)
    assert corridor.free_cell_count() == 34
    assert corridor.cell_size == 0.24
    # start is the center of the S cell
    assert corridor.start.x % corridor.cell_size == pytest.approx(0.12)
    assert corridor.start.y % corridor.cell_size == pytest.approx(0.12)


def test_parse_flips_rows_bottom_up():
    text = "cell 0.5\n#####\n#...#\n#S..#\n#####\n"
    m = world.parse_maze(text)
    # S is on the second printed row from the bottom -> grid row 1
    assert m.start.y == pytest.approx(1.5 * 0.5)
    assert m.start.x == pytest.approx(1.5 * 0.5)
    # printed top row is the highest grid row
    assert m.occupancy[3].all()


def test_parse_ignores_comments_and_blank_lines():
    text = "# a comment line\ncell 0.24\n\n###\n#S#\n# another, with text\n###\n"
    m = world.parse_maze(text)
    assert m.occupancy.shape == (3, 3)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "cells 0.24\n###\n#S#\n###\n",
        "cell abc\n###\n#S#\n###\n",
        "cell -1\n###\n#S#\n###\n",
        "cell 0.24\n###\n#S\n###\n",  # ragged
        "cell 0.24\n###\n.X#\n###\n",  # bad char on a non-comment row
        "cell 0.24\n####\n#SS#\n####\n",  # two starts
        "cell 0.24\n",  # no rows
    ],
)
def test_parse_errors(text):
    with pytest.raises(ParseError):
        world.parse_maze(text)


@pytest.mark.parametrize(
    "text",
    [
        "cell 0.24\n###\n#.#\n###\n",  # no start
        "cell 0.24\n#.#\n#S#\n###\n",  # open boundary
    ],
)
def test_invalid_maze(text):
    with pytest.raises(InvalidMaze):
        world.parse_maze(text)


# ---------------------------------------------------------------- raycast

def _range_oracle(m, x0, y0, ang, max_range, ds=1e-4):
    """Dense sampling down the ray: first sample inside a wall cell."""
    dx, dy = math.cos(ang), math.sin(ang)
    t = ds
    while t <= max_range:
        if not m.is_inside_free(x0 + t * dx, y0 + t * dy):
            return t
        t += ds
    return max_range


def test_raycast_matches_dense_sampling_oracle(corridor):
    p = corridor.start
    scan = world.raycast(corridor, p, fov=2 * math.pi, n_rays=32, max_range=3.84)
    for a, r in zip(scan.angles, scan.ranges):
        oracle = _range_oracle(corridor, p.x, p.y, p.theta + a, 3.84)
        assert abs(r - oracle) <= 2e-4, f"angle {a}: {r} vs {oracle}"


def test_raycast_axis_aligned_exact(corridor):
    # start cell (2, 2); walls at x = 0.24 behind and y = 0.24 below
    p = corridor.start
    back = world.raycast(corridor, Pose(p.x, p.y, math.pi), fov=0.01, n_rays=1, max_range=5.0)
    assert back.ranges[0] == pytest.approx(p.x - 0.24, abs=1e-12)
    down = world.raycast(corridor, Pose(p.x, p.y, -math.pi / 2), fov=0.01, n_rays=1, max_range=5.0)
    assert down.ranges[0] == pytest.approx(p.y - 0.24, abs=1e-12)


def test_raycast_respects_max_range(corridor):
    p = corridor.start
    scan = world.raycast(corridor, p, fov=2 * math.pi, n_rays=64, max_range=0.1)
    assert np.all(scan.ranges == 0.1)


def test_raycast_empty_fan(corridor):
    scan = world.raycast(corridor, corridor.start, fov=0.0, n_rays=8, max_range=1.0)
    assert len(scan.ranges) == 0


def test_raycast_outside_world(corridor):
    with pytest.raises(OutsideWorld):
        world.raycast(corridor, Pose(0.1, 0.1, 0.0), fov=1.0, n_rays=4, max_range=1.0)


# ---------------------------------------------------------------- observe_local

def test_sealed_room_marks_exactly_eight_neighbors():
    m = world.parse_maze(SEALED_ROOM)
    view = world.observe_local(m, m.start, FULL_SENSOR)
    c = FULL_SENSOR.center
    assert view[c, c] == 1.0
    neg = np.argwhere(view == -1.0)
    expected = {(c + dr, c + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)} - {(c, c)}
    assert {tuple(rc) for rc in neg} == expected
    assert (view == 1.0).sum() == 1


def test_observe_agent_cell_always_free(corridor):
    view = world.observe_local(corridor, corridor.start, world.SensorConfig(fov=0.0, n_rays=0))
    c = FULL_SENSOR.center
    assert view[c, c] == 1.0
    assert np.count_nonzero(view) == 1


def _clear_of_grid_lines(m, x, y, tol=1e-6):
    return (
        abs(x / m.cell_size - round(x / m.cell_size)) > tol
        and abs(y / m.cell_size - round(y / m.cell_size)) > tol
    )


def test_observe_free_cells_have_line_of_sight(corridor):
    """Independent check of the marking invariant: a cell is free only if
    the straight segment from the agent to the cell center stays in free
    space; occupied cells have their center inside a wall cell."""
    poses = world.rollout_poses(corridor.start, load_traj("corridor_32", corridor))
    sensor = FULL_SENSOR
    c = sensor.center
    for p in poses[::8]:
        view = world.observe_local(corridor, p, sensor)
        for r, cc in np.argwhere(view == 1.0):
            if (r, cc) == (c, c):
                continue
            wx, wy = p.from_frame((r - c) * sensor.view_cell_size,
                                  (cc - c) * sensor.view_cell_size)
            for t in np.linspace(1e-4, 1 - 1e-4, 400):
                sx, sy = p.x + t * (wx - p.x), p.y + t * (wy - p.y)
                if not _clear_of_grid_lines(corridor, sx, sy):
                    continue
                assert corridor.is_inside_free(sx, sy), (
                    f"free cell ({r},{cc}) blocked at t={t:.3f} from {p}"
                )
        for r, cc in np.argwhere(view == -1.0):
            wx, wy = p.from_frame((r - c) * sensor.view_cell_size,
                                  (cc - c) * sensor.view_cell_size)
            assert not corridor.is_inside_free(wx, wy)


def test_observe_narrow_fov_is_subset_of_full(corridor):
    p = corridor.start
    narrow = world.observe_local(corridor, p, world.SensorConfig(fov=math.pi / 2, n_rays=64))
    full = world.observe_local(corridor, p, FULL_SENSOR)
    marked = narrow != 0
    assert np.array_equal(narrow[marked], full[marked])
    assert np.count_nonzero(narrow) < np.count_nonzero(full)


def test_corrupt_view_flips_only_marked_cells(corridor):
    view = world.observe_local(corridor, corridor.start, FULL_SENSOR)
    assert world.corrupt_view(view, 0.0, np.random.default_rng(0)) is view
    out = world.corrupt_view(view, 0.5, np.random.default_rng(0))
    changed = out != view
    assert changed.any()
    assert np.all(view[changed] != 0)
    assert np.array_equal(out[changed], -view[changed])
    # deterministic under the same stream
    again = world.corrupt_view(view, 0.5, np.random.default_rng(0))
    assert np.array_equal(out, again)


# ---------------------------------------------------------------- observed regions

def test_observed_cell_sets_round_trip(corridor):
    p = corridor.start
    view = world.observe_local(corridor, p, FULL_SENSOR)
    free, wall = world.observed_cell_sets(corridor, view, p, FULL_SENSOR)
    assert free and wall
    for r, c in free:
        assert not corridor.occupancy[r, c]
    for r, c in wall:
        assert corridor.occupancy[r, c]
    # rasterizing the free region back into the same frame covers every
    # free-marked view cell (it may add cells whose centers share a maze cell)
    raster = world.region_to_local(corridor, free, p, FULL_SENSOR)
    assert np.all(raster[view == 1.0] == 1.0)


def test_gt_accumulation_is_monotone(corridor):
    poses = world.rollout_poses(corridor.start, load_traj("corridor_32", corridor))
    frame = poses[0]
    prev = np.zeros((32, 32))
    for k in (1, 8, 16, 33):
        gt = world.gt_accumulated_local(corridor, poses[:k], FULL_SENSOR, frame=frame)
        assert np.all(gt >= prev), f"ground truth shrank at prefix {k}"
        prev = gt
    mask = world.observed_mask_local(corridor, poses, FULL_SENSOR, frame=frame)
    assert np.all(mask[prev > 0])


def test_gt_requires_poses(corridor):
    with pytest.raises(ValueError):
        world.gt_accumulated_local(corridor, [], FULL_SENSOR)


# ---------------------------------------------------------------- trajectories

def test_load_trajectory_parses_and_counts(corridor):
    traj = load_traj("corridor_32", corridor)
    assert len(traj) == 32
    poses = world.rollout_poses(corridor.start, traj)
    assert len(poses) == 33


def test_trajectory_parse_error_reports_line():
    with pytest.raises(ParseError, match="line 2"):
        world.load_trajectory("# header\n0, 0\n", ActionLimits())


def test_trajectory_limit_error_reports_line():
    with pytest.raises(LimitExceeded, match="line 3"):
        world.load_trajectory("# header\n0, 0, 0.05\n0, 0, 0.2\n", ActionLimits())


def test_trajectory_collision_reports_step(corridor):
    # head south from the start until the bottom boundary wall
    text = "\n".join(["0, -90, 0.1"] * 4)
    with pytest.raises(CollisionOnRollout) as exc:
        world.load_trajectory(text, ActionLimits(), corridor)
    assert exc.value.step_index == 3


def test_trajectory_without_maze_skips_collision_check():
    text = "\n".join(["0, -90, 0.1"] * 4)
    traj = world.load_trajectory(text, ActionLimits())
    assert len(traj) == 4


def test_all_fixture_pairs_load():
    for mz, tj in [
        ("corridor", "corridor_32"), ("lshape", "lshape_32"), ("tee", "tee_32"),
        ("plus", "plus_32"), ("alcove", "alcove_32"), ("open", "open_32"),
        ("hall", "hall_32"), ("cross", "cross_32"), ("ring", "ring_32"),
        ("ring2", "square_loop"), ("figure8", "figure8"),
    ]:
        m = load_maze(mz)
        traj = load_traj(tj, m)
        assert len(traj) > 0


def test_square_loop_returns_to_start():
    m = load_maze("ring2")
    poses = world.rollout_poses(m.start, load_traj("square_loop", m))
    assert poses[-1].x == pytest.approx(poses[0].x, abs=1e-9)
    assert poses[-1].y == pytest.approx(poses[0].y, abs=1e-9)
    assert poses[-1].theta == pytest.approx(poses[0].theta, abs=1e-9)
