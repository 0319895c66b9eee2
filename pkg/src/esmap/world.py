"""Maze environments, raycast sensing, and trajectory handling.

Maze files are ASCII grids with a ``cell <meters>`` header: ``#`` wall,
``.`` free, ``S`` start.  The grid is stored with row 0 at the *bottom*
(y increases with row index), so the printed file reads like a map.
The start pose faces +x (east on the printed page) unless the trajectory
begins with turns.

Observations are 32x32 egocentric grids with the agent in cell (16, 16),
forward = increasing row, left = increasing col, 0.24 m per cell:
+1 observed free, -1 observed occupied, 0 unknown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CollisionOnRollout,
    InvalidMaze,
    LimitExceeded,
    OutsideWorld,
    ParseError,
)
from .geometry import ActionLimits, Egomotion, Pose, compose_pose, validate_egomotion

MAZE_CHARS = set("#.S")


@dataclass(frozen=True)
class MazeMap:
    occupancy: np.ndarray  # bool (rows, cols), True = wall, row 0 at y = 0
    cell_size: float
    start: Pose

    @property
    def height(self) -> float:
        return self.occupancy.shape[0] * self.cell_size

    @property
    def width(self) -> float:
        return self.occupancy.shape[1] * self.cell_size

    def free_cell_count(self) -> int:
        return int((~self.occupancy).sum())

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def is_inside_free(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        rows, cols = self.occupancy.shape
        if not (0 <= r < rows and 0 <= c < cols):
            return False
        return not self.occupancy[r, c]


def _is_comment(line: str) -> bool:
    # maze rows consist solely of '#', '.', 'S'; anything else after a '#'
    # marks the line as a comment
    stripped = line.strip()
    return stripped.startswith("#") and any(ch not in MAZE_CHARS for ch in stripped)


def parse_maze(text: str) -> MazeMap:
    """Parse maze text into a MazeMap, enforcing structural invariants."""
    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    lines = [ln for ln in lines if ln.strip() and not _is_comment(ln)]
    if not lines:
        raise ParseError("empty maze file")
    header = lines[0].split()
    if len(header) != 2 or header[0] != "cell":
        raise ParseError("first line must be 'cell <meters>'")
    try:
        cell_size = float(header[1])
    except ValueError as exc:
        raise ParseError(f"bad cell size {header[1]!r}") from exc
    if cell_size <= 0:
        raise ParseError("cell size must be positive")

    rows = lines[1:]
    if not rows:
        raise ParseError("maze has no grid rows")
    width = len(rows[0])
    starts = []
    occ = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"ragged row {i}")
        for j, ch in enumerate(row):
            if ch not in MAZE_CHARS:
                raise ParseError(f"bad character {ch!r} at row {i}, col {j}")
            if ch == "#":
                occ[i, j] = True
            elif ch == "S":
                starts.append((i, j))
    if len(starts) > 1:
        raise ParseError("multiple start cells")
    if not starts:
        raise InvalidMaze("no start cell 'S'")

    occ = occ[::-1]  # row 0 at the bottom; printed top row gets the highest y
    n_rows = occ.shape[0]
    if not (occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()):
        raise InvalidMaze("outer boundary must be fully walled")

    si, sj = starts[0]
    sr = n_rows - 1 - si
    start = Pose(x=(sj + 0.5) * cell_size, y=(sr + 0.5) * cell_size, theta=0.0)
    return MazeMap(occupancy=occ, cell_size=cell_size, start=start)


@dataclass(frozen=True)
class SensorConfig:
    """Raycast sensor and egocentric view geometry."""

    fov: float = math.pi / 2
    n_rays: int = 64
    max_range: float = 3.84
    view_cells: int = 32
    view_extent: float = 7.68
    flip_prob: float = 0.0  # optional observation corruption, off by default

    @property
    def view_cell_size(self) -> float:
        return self.view_extent / self.view_cells

    @property
    def center(self) -> int:
        return self.view_cells // 2

    def angles(self) -> np.ndarray:
        if self.fov <= 0 or self.n_rays <= 0:
            return np.empty(0)
        if self.n_rays == 1:
            return np.zeros(1)
        return np.linspace(-self.fov / 2, self.fov / 2, self.n_rays)


@dataclass(frozen=True)
class DepthScan:
    angles: np.ndarray  # egocentric radians, strictly increasing
    ranges: np.ndarray  # hit distance or max_range, meters
    max_range: float
    fov: float


def _march_ray(m: MazeMap, x0: float, y0: float, dx: float, dy: float, max_range: float) -> float:
    """Exact grid traversal; distance to the first wall boundary or max_range."""
    cs = m.cell_size
    rows, cols = m.occupancy.shape
    r, c = m.cell_of(x0, y0)

    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    # parametric distance to the next vertical / horizontal cell boundary
    if dx != 0:
        next_x = (c + (1 if dx > 0 else 0)) * cs
        t_max_x = (next_x - x0) / dx
        t_dx = cs / abs(dx)
    else:
        t_max_x, t_dx = math.inf, math.inf
    if dy != 0:
        next_y = (r + (1 if dy > 0 else 0)) * cs
        t_max_y = (next_y - y0) / dy
        t_dy = cs / abs(dy)
    else:
        t_max_y, t_dy = math.inf, math.inf

    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_dx
            c += step_c
        else:
            t = t_max_y
            t_max_y += t_dy
            r += step_r
        if t > max_range:
            return max_range
        if not (0 <= r < rows and 0 <= c < cols):
            return t  # sealed boundary makes this unreachable in valid mazes
        if m.occupancy[r, c]:
            return t


def _march_rays(m: MazeMap, x0: float, y0: float, dx, dy, max_range: float) -> np.ndarray:
    """Vectorized exact traversal of many rays sharing one origin."""
    dx = np.asarray(dx, float)
    dy = np.asarray(dy, float)
    n = len(dx)
    cs = m.cell_size
    rows, cols = m.occupancy.shape
    r0, c0 = m.cell_of(x0, y0)
    r = np.full(n, r0)
    c = np.full(n, c0)

    step_c = np.where(dx > 0, 1, -1)
    step_r = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max_x = np.where(dx != 0, ((c0 + (dx > 0)) * cs - x0) / dx, np.inf)
        t_dx = np.where(dx != 0, cs / np.abs(dx), np.inf)
        t_max_y = np.where(dy != 0, ((r0 + (dy > 0)) * cs - y0) / dy, np.inf)
        t_dy = np.where(dy != 0, cs / np.abs(dy), np.inf)

    out = np.full(n, max_range)
    active = np.ones(n, dtype=bool)
    while active.any():
        take_x = active & (t_max_x < t_max_y)
        take_y = active & ~take_x
        t = np.where(take_x, t_max_x, t_max_y)
        c = c + take_x * step_c
        r = r + take_y * step_r
        t_max_x = np.where(take_x, t_max_x + t_dx, t_max_x)
        t_max_y = np.where(take_y, t_max_y + t_dy, t_max_y)

        over = active & (t > max_range)
        active &= ~over
        inside = (r >= 0) & (r < rows) & (c >= 0) & (c < cols)
        out_of_bounds = active & ~inside
        out[out_of_bounds] = t[out_of_bounds]
        active &= inside
        hit = np.zeros(n, dtype=bool)
        hit[active] = m.occupancy[r[active], c[active]]
        out[hit] = t[hit]
        active &= ~hit
    return out


def raycast(m: MazeMap, p: Pose, fov: float, n_rays: int, max_range: float) -> DepthScan:
    """Cast rays over a symmetric field of view; exact traversal per ray."""
    if not m.is_inside_free(p.x, p.y):
        raise OutsideWorld(f"pose ({p.x:.3f}, {p.y:.3f}) is not in a free cell")
    cfg = SensorConfig(fov=fov, n_rays=n_rays, max_range=max_range)
    angles = cfg.angles()
    if len(angles) == 0:
        return DepthScan(angles=angles, ranges=np.empty(0), max_range=max_range, fov=fov)
    world_angles = p.theta + angles
    ranges = _march_rays(m, p.x, p.y, np.cos(world_angles), np.sin(world_angles), max_range)
    return DepthScan(angles=angles, ranges=ranges, max_range=max_range, fov=fov)


def observe_local(m: MazeMap, p: Pose, sensor: SensorConfig) -> np.ndarray:
    """Egocentric free-space observation from raycasting.

    Each grid cell is labeled by its sample point (the cell center): +1 when
    the center is within field of view and range, angularly covered by the
    ray fan, and in line of sight; -1 when the ray toward the center ends on
    the boundary of the wall cell containing it; 0 otherwise.  The agent's
    own cell is always free.
    """
    if not m.is_inside_free(p.x, p.y):
        raise OutsideWorld(f"pose ({p.x:.3f}, {p.y:.3f}) is not in a free cell")
    n = sensor.view_cells
    c0 = sensor.center
    dv = sensor.view_cell_size
    grid = np.zeros((n, n))
    grid[c0, c0] = 1.0
    ray_angles = sensor.angles()
    if len(ray_angles) == 0:
        return grid

    idx = np.arange(n)
    rr, cc = np.meshgrid(idx, idx, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    center = rr * n + cc == c0 * n + c0
    rr, cc = rr[~center], cc[~center]
    f = (rr - c0) * dv
    s = (cc - c0) * dv
    cos_t, sin_t = math.cos(p.theta), math.sin(p.theta)
    wx = p.x + cos_t * f - sin_t * s
    wy = p.y + sin_t * f + cos_t * s
    dxw, dyw = wx - p.x, wy - p.y
    d = np.hypot(dxw, dyw)
    ang_world = np.arctan2(dyw, dxw)
    ang_ego = np.mod(ang_world - p.theta + math.pi, 2 * math.pi) - math.pi

    in_fov = np.abs(ang_ego) <= sensor.fov / 2 + 1e-12
    # a cell counts as covered when some ray passes within the half-angle
    # the cell subtends at its distance
    gap = np.abs(np.mod(ang_ego[:, None] - ray_angles[None, :] + math.pi, 2 * math.pi) - math.pi)
    covered = (gap.min(axis=1) <= np.arctan2(dv / 2, d)) | (d < dv)
    ranges = _march_rays(m, p.x, p.y, dxw / d, dyw / d, sensor.max_range)
    candidate = in_fov & covered & (d <= sensor.max_range + 1e-12)

    free = candidate & (d <= ranges - 1e-9)

    # wall marking: the wall maze cell holding the cell center either
    # terminates the ray toward the center, or exposes a visible face
    # midpoint (keeps obliquely- and grazing-seen wall faces marked)
    eps = m.cell_size * 1e-6
    cell_r = np.floor(wy / m.cell_size).astype(int)
    cell_c = np.floor(wx / m.cell_size).astype(int)
    hit = candidate & (ranges < d - 1e-9) & (ranges < sensor.max_range - 1e-9)
    occupied = np.zeros_like(hit)
    if hit.any():
        px = p.x + (ranges[hit] + eps) * dxw[hit] / d[hit]
        py = p.y + (ranges[hit] + eps) * dyw[hit] / d[hit]
        probe_r = np.floor(py / m.cell_size).astype(int)
        probe_c = np.floor(px / m.cell_size).astype(int)
        occupied[hit] = (probe_r == cell_r[hit]) & (probe_c == cell_c[hit])
        occupied[hit] |= _wall_face_visible(
            m, p, cell_r[hit], cell_c[hit], sensor.max_range
        )

    grid[rr[free], cc[free]] = 1.0
    grid[rr[occupied], cc[occupied]] = -1.0
    return grid


def _wall_face_visible(m: MazeMap, p: Pose, cell_r, cell_c, max_range: float) -> np.ndarray:
    """Per candidate wall cell: is any free-facing face midpoint in line of
    sight from p?"""
    cs = m.cell_size
    rows, cols = m.occupancy.shape
    pts_x, pts_y, owner = [], [], []
    seen: dict = {}
    keys = list(zip(cell_r.tolist(), cell_c.tolist()))
    for k, (r, c) in enumerate(keys):
        if (r, c) in seen:
            continue
        seen[(r, c)] = len(seen)
        if not (0 <= r < rows and 0 <= c < cols) or not m.occupancy[r, c]:
            continue
        for dr, dc, fx, fy in (
            # face midpoints toward edge-adjacent free cells
            (-1, 0, (c + 0.5) * cs, r * cs),
            (1, 0, (c + 0.5) * cs, (r + 1) * cs),
            (0, -1, c * cs, (r + 0.5) * cs),
            (0, 1, (c + 1) * cs, (r + 0.5) * cs),
            # corner points toward diagonally free cells
            (-1, -1, c * cs, r * cs),
            (-1, 1, (c + 1) * cs, r * cs),
            (1, -1, c * cs, (r + 1) * cs),
            (1, 1, (c + 1) * cs, (r + 1) * cs),
        ):
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols and not m.occupancy[nr, nc]:
                pts_x.append(fx)
                pts_y.append(fy)
                owner.append(seen[(r, c)])
    visible_by_cell = np.zeros(len(seen), dtype=bool)
    if pts_x:
        dx = np.array(pts_x) - p.x
        dy = np.array(pts_y) - p.y
        dist = np.hypot(dx, dy)
        ok = (dist > 1e-12) & (dist <= max_range + 1e-12)
        if ok.any():
            reach = _march_rays(m, p.x, p.y, dx[ok] / dist[ok], dy[ok] / dist[ok], max_range)
            vis = reach >= dist[ok] - 1e-9
            for o in np.array(owner)[ok][vis]:
                visible_by_cell[o] = True
    return np.array([visible_by_cell[seen[k]] for k in keys])


def corrupt_view(view: np.ndarray, flip_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Emulate perception error by sign-flipping marked cells at random."""
    if flip_prob <= 0:
        return view
    flips = rng.random(view.shape) < flip_prob
    out = view.copy()
    out[flips & (view != 0)] *= -1.0
    return out


def free_world_points(view: np.ndarray, p: Pose, sensor: SensorConfig) -> np.ndarray:
    """World-frame centers of the observed-free cells of one view, (N, 2)."""
    return _world_points(view, p, sensor, value=1.0)


def occupied_world_points(view: np.ndarray, p: Pose, sensor: SensorConfig) -> np.ndarray:
    return _world_points(view, p, sensor, value=-1.0)


def _world_points(view, p, sensor, value):
    idx = np.argwhere(view == value)
    if len(idx) == 0:
        return np.empty((0, 2))
    dv = sensor.view_cell_size
    f = (idx[:, 0] - sensor.center) * dv
    s = (idx[:, 1] - sensor.center) * dv
    c, sn = math.cos(p.theta), math.sin(p.theta)
    x = p.x + c * f - sn * s
    y = p.y + sn * f + c * s
    return np.column_stack([x, y])


def rasterize_points(points: np.ndarray, frame: Pose, sensor: SensorConfig) -> np.ndarray:
    """Mark the egocentric cells of ``frame`` containing any of the points."""
    n = sensor.view_cells
    grid = np.zeros((n, n))
    if len(points) == 0:
        return grid
    dv = sensor.view_cell_size
    dx = points[:, 0] - frame.x
    dy = points[:, 1] - frame.y
    c, sn = math.cos(frame.theta), math.sin(frame.theta)
    f = c * dx + sn * dy
    s = -sn * dx + c * dy
    rows = np.rint(sensor.center + f / dv).astype(int)
    cols = np.rint(sensor.center + s / dv).astype(int)
    ok = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
    grid[rows[ok], cols[ok]] = 1.0
    return grid


def observed_cell_sets(
    m: MazeMap, view: np.ndarray, p: Pose, sensor: SensorConfig
) -> tuple[set, set]:
    """Maze cells containing the sample points of one view's marked cells,
    as (free, wall) sets of (row, col) indices."""
    free: set = set()
    wall: set = set()
    for value, out in ((1.0, free), (-1.0, wall)):
        pts = _world_points(view, p, sensor, value)
        rows = np.floor(pts[:, 1] / m.cell_size).astype(int)
        cols = np.floor(pts[:, 0] / m.cell_size).astype(int)
        ok = (
            (rows >= 0)
            & (rows < m.occupancy.shape[0])
            & (cols >= 0)
            & (cols < m.occupancy.shape[1])
        )
        out.update(zip(rows[ok].tolist(), cols[ok].tolist()))
    return free, wall


def region_to_local(m: MazeMap, cells: set, frame: Pose, sensor: SensorConfig) -> np.ndarray:
    """Rasterize a set of maze cells into the egocentric frame: grid cell = 1
    iff its sample point (center) lies inside one of the maze cells."""
    n = sensor.view_cells
    c0 = sensor.center
    dv = sensor.view_cell_size
    idx = np.arange(n)
    rr, cc = np.meshgrid(idx, idx, indexing="ij")
    f = (rr.ravel() - c0) * dv
    s = (cc.ravel() - c0) * dv
    cos_t, sin_t = math.cos(frame.theta), math.sin(frame.theta)
    wx = frame.x + cos_t * f - sin_t * s
    wy = frame.y + sin_t * f + cos_t * s
    rows = np.floor(wy / m.cell_size).astype(int)
    cols = np.floor(wx / m.cell_size).astype(int)
    hit = np.fromiter(
        ((r, c) in cells for r, c in zip(rows.tolist(), cols.tolist())),
        dtype=bool,
        count=n * n,
    )
    return hit.astype(float).reshape(n, n)


def _accumulate_cell_sets(m, poses, sensor, views):
    if views is None:
        views = [observe_local(m, p, sensor) for p in poses]
    free: set = set()
    wall: set = set()
    for v, p in zip(views, poses):
        f, w = observed_cell_sets(m, v, p, sensor)
        free |= f
        wall |= w
    return free, wall


def gt_accumulated_local(
    m: MazeMap,
    poses: list[Pose],
    sensor: SensorConfig,
    frame: Pose | None = None,
    views: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Binary ground truth: union of observed-free space over ``poses``,
    re-expressed in the egocentric frame of ``frame`` (default: last pose)."""
    if not poses:
        raise ValueError("need at least one pose")
    free, _ = _accumulate_cell_sets(m, poses, sensor, views)
    return region_to_local(m, free, frame or poses[-1], sensor)


def observed_mask_local(
    m: MazeMap,
    poses: list[Pose],
    sensor: SensorConfig,
    frame: Pose | None = None,
    views: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Cells observed at all (free or occupied) over the poses, in ``frame``."""
    if not poses:
        raise ValueError("need at least one pose")
    free, wall = _accumulate_cell_sets(m, poses, sensor, views)
    return region_to_local(m, free | wall, frame or poses[-1], sensor) > 0


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Egomotion, ...]
    name: str = ""
    seed: int = 0

    def __len__(self):
        return len(self.steps)


def load_trajectory(
    text: str,
    limits: ActionLimits,
    maze: MazeMap | None = None,
    name: str = "",
) -> Trajectory:
    """Parse a trajectory CSV (dtheta_deg, heading_deg, distance_m per line),
    validating limits and, when a maze is given, a collision-free rollout."""
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 3 fields, got {len(parts)}")
        try:
            dtheta_deg, heading_deg, distance = (float(p) for p in parts)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        e = Egomotion(
            dtheta=math.radians(dtheta_deg),
            heading=math.radians(heading_deg),
            distance=distance,
        )
        try:
            validate_egomotion(e, limits)
        except LimitExceeded as exc:
            raise LimitExceeded(f"line {lineno}: {exc}") from exc
        steps.append(e)

    if maze is not None:
        pose = maze.start
        for i, e in enumerate(steps):
            pose = compose_pose(pose, e)
            if not maze.is_inside_free(pose.x, pose.y):
                raise CollisionOnRollout(i)
    return Trajectory(steps=tuple(steps), name=name)


def rollout_poses(start: Pose, traj: Trajectory) -> list[Pose]:
    """Poses visited executing the trajectory, including the start."""
    poses = [start]
    for e in traj.steps:
        poses.append(compose_pose(poses[-1], e))
    return poses
