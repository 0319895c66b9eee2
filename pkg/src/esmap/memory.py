"""Spatially-indexed external memory: global belief plane plus place ledger.

Two interchangeable backends:

* ``egocentric`` — the faithful formulation: the whole belief plane is
  bilinearly re-warped every step so the agent stays at the center cell.
  Place-ledger coordinates are transformed exactly (no resampling), so
  embeddings never degrade.
* ``world`` — an anchored oracle: the belief plane lives in the frame of
  the origin pose and only the tracked pose advances; reads and writes warp
  on demand.  On whole-cell translation-only motion the two backends agree
  exactly; under rotation the egocentric backend pays a measurable
  resampling-blur cost.

The dense per-cell feature memory of size F x H x W is split here into a
1-channel belief plane plus a sparse ledger of (coordinate, embedding,
step) records; read/write semantics at the head locations are unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bvu import bilinear_sample, warp_map
from .errors import MissingHistory, NonMonotonicTime
from .geometry import (
    Egomotion,
    Pose,
    compose_pose,
    egomotion_between,
    egomotion_to_affine,
    wrap_angle,
)
from .place import embedding_distance

DEFAULT_MEMORY_SIZE = 500
DEFAULT_WINDOW = 32
BACKENDS = ("egocentric", "world")


@dataclass
class PlaceRecord:
    coord: np.ndarray  # continuous (row, col) grid cells; frame per backend
    embedding: np.ndarray
    t: int


@dataclass(frozen=True)
class LoopClosureEvent:
    t_now: int
    t_matched: int
    embed_dist: float
    cell_dist: float


@dataclass
class GlobalMemory:
    """Belief plane + place ledger; single writer per episode."""

    size: int = DEFAULT_MEMORY_SIZE
    window: int = DEFAULT_WINDOW
    cell_size: float = 0.24
    backend: str = "egocentric"
    origin: Pose = field(default_factory=Pose)
    belief: np.ndarray = None
    places: list[PlaceRecord] = field(default_factory=list)
    pose: Pose = None  # tracked pose (world backend); mirrors warps otherwise

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.belief is None:
            self.belief = np.zeros((self.size, self.size))
        if self.pose is None:
            self.pose = self.origin

    @property
    def center(self) -> int:
        return self.size // 2

    def window_slice(self) -> tuple[slice, slice]:
        lo = self.center - self.window // 2
        hi = lo + self.window
        return slice(lo, hi), slice(lo, hi)

    def attention_mask(self) -> np.ndarray:
        mask = np.zeros((self.size, self.size))
        sl = self.window_slice()
        mask[sl] = 1.0
        return mask

    def pose_grid_coord(self) -> np.ndarray:
        """Grid coordinate of the tracked pose (world backend)."""
        f, s = self.origin.to_frame(self.pose.x, self.pose.y)
        return np.array([self.center + f / self.cell_size, self.center + s / self.cell_size])


def memory_warp(m: GlobalMemory, e: Egomotion) -> GlobalMemory:
    """Advance the memory by one egomotion (in place)."""
    if m.backend == "egocentric":
        aff = egomotion_to_affine(e, m.cell_size)
        m.belief = warp_map(m.belief, aff, fill=0.0)
        c = m.center
        for rec in m.places:
            rec.coord = aff.apply(rec.coord - c)[0] + c
        m.pose = compose_pose(m.pose, e)
    else:
        m.pose = compose_pose(m.pose, e)
    return m


def write_local(m: GlobalMemory, local: np.ndarray) -> GlobalMemory:
    """Replace the window under the write head with ``local``."""
    n = m.window
    if local.shape != (n, n):
        raise ValueError(f"local map must be {n}x{n}, got {local.shape}")
    if m.backend == "egocentric":
        m.belief[m.window_slice()] = local
        return m

    # world backend: replace every world cell whose center falls inside the
    # agent's egocentric window
    half = n // 2
    corners = np.array(
        [[-half, -half], [-half, half - 1], [half - 1, -half], [half - 1, half - 1]],
        dtype=float,
    )
    cos_t = math.cos(m.pose.theta - m.origin.theta)
    sin_t = math.sin(m.pose.theta - m.origin.theta)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    pc = m.pose_grid_coord()
    world_corners = corners @ rot.T + pc
    r_lo = max(0, int(np.floor(world_corners[:, 0].min())))
    r_hi = min(m.size - 1, int(np.ceil(world_corners[:, 0].max())))
    c_lo = max(0, int(np.floor(world_corners[:, 1].min())))
    c_hi = min(m.size - 1, int(np.ceil(world_corners[:, 1].max())))
    if r_lo > r_hi or c_lo > c_hi:
        return m
    rows, cols = np.meshgrid(np.arange(r_lo, r_hi + 1), np.arange(c_lo, c_hi + 1), indexing="ij")
    rel = np.column_stack([rows.ravel() - pc[0], cols.ravel() - pc[1]]).astype(float)
    local_pts = rel @ rot  # inverse rotation
    lr = local_pts[:, 0] + half
    lc = local_pts[:, 1] + half
    inside = (lr >= 0) & (lr <= n - 1) & (lc >= 0) & (lc <= n - 1)
    if inside.any():
        vals = bilinear_sample(local, lr[inside], lc[inside], fill=0.0)
        m.belief[rows.ravel()[inside], cols.ravel()[inside]] = vals
    return m


def read_local(m: GlobalMemory) -> np.ndarray:
    """Copy of the centered window under the read head."""
    if m.backend == "egocentric":
        return m.belief[m.window_slice()].copy()
    n = m.window
    half = n // 2
    offs_r, offs_c = np.meshgrid(np.arange(n) - half, np.arange(n) - half, indexing="ij")
    cos_t = math.cos(m.pose.theta - m.origin.theta)
    sin_t = math.sin(m.pose.theta - m.origin.theta)
    pc = m.pose_grid_coord()
    gr = pc[0] + cos_t * offs_r.ravel() - sin_t * offs_c.ravel()
    gc = pc[1] + sin_t * offs_r.ravel() + cos_t * offs_c.ravel()
    return bilinear_sample(m.belief, gr, gc, fill=0.0).reshape(n, n)


def write_place(m: GlobalMemory, emb: np.ndarray, t: int) -> GlobalMemory:
    """Append a ledger record at the current location."""
    if m.places and t <= m.places[-1].t:
        raise NonMonotonicTime(f"t={t} not after t={m.places[-1].t}")
    if m.backend == "egocentric":
        coord = np.array([float(m.center), float(m.center)])
    else:
        coord = m.pose_grid_coord()
    m.places.append(PlaceRecord(coord=coord, embedding=np.asarray(emb, float), t=t))
    return m


def detect_loop_closure(
    m: GlobalMemory,
    emb_now: np.ndarray,
    t_now: int,
    alpha: float | None,
    close_radius: float = 16.0,
    recency_window: int = 64,
) -> LoopClosureEvent | None:
    """Best ledger match satisfying the closeness and recency criteria.

    ``alpha=None`` skips the embedding threshold, returning the best
    candidate regardless of distance (used for PR sweeps).
    """
    here = (
        np.array([float(m.center), float(m.center)])
        if m.backend == "egocentric"
        else m.pose_grid_coord()
    )
    best = None
    for rec in m.places:
        if t_now - rec.t <= recency_window:
            continue
        cell_dist = float(np.linalg.norm(rec.coord - here))
        if cell_dist > close_radius:
            continue
        d = embedding_distance(emb_now, rec.embedding)
        if best is None or d < best.embed_dist:
            best = LoopClosureEvent(
                t_now=t_now, t_matched=rec.t, embed_dist=d, cell_dist=cell_dist
            )
    if best is None:
        return None
    if alpha is not None and best.embed_dist > alpha:
        return None
    return best


def correct_poses(pose_log: list[Pose], event: LoopClosureEvent) -> list[Pose]:
    """Distribute the loop-closure residual linearly over the loop steps.

    The poses at the matched and current steps should coincide; their rigid
    discrepancy is interpolated per step across the interval, and poses
    after the current step (if any) receive the full residual.
    """
    tm, tn = event.t_matched, event.t_now
    if tm < 0 or tn >= len(pose_log) or tm >= tn:
        raise MissingHistory(f"pose log does not cover [{tm}, {tn}]")
    pm, pn = pose_log[tm], pose_log[tn]
    res = np.array([pm.x - pn.x, pm.y - pn.y])
    res_theta = wrap_angle(pm.theta - pn.theta)
    out = []
    span = tn - tm
    for k, p in enumerate(pose_log):
        if k <= tm:
            out.append(p)
            continue
        f = min(1.0, (k - tm) / span)
        out.append(Pose(p.x + f * res[0], p.y + f * res[1], p.theta + f * res_theta))
    return out


def rebuild_memory(
    corrected_poses: list[Pose],
    local_maps: list[np.ndarray],
    template: GlobalMemory,
    embeddings: list[np.ndarray] | None = None,
) -> GlobalMemory:
    """Replay stored local maps under corrected poses into a fresh memory."""
    if len(local_maps) > len(corrected_poses):
        raise MissingHistory("fewer poses than local maps")
    m = GlobalMemory(
        size=template.size,
        window=template.window,
        cell_size=template.cell_size,
        backend=template.backend,
        origin=corrected_poses[0],
    )
    for k, local in enumerate(local_maps):
        if k > 0:
            memory_warp(m, egomotion_between(corrected_poses[k - 1], corrected_poses[k]))
        write_local(m, local)
        if embeddings is not None and embeddings[k] is not None:
            write_place(m, embeddings[k], k)
    return m


def correct_drift(
    pose_log: list[Pose],
    event: LoopClosureEvent,
    local_maps: list[np.ndarray],
    template: GlobalMemory,
    embeddings: list[np.ndarray] | None = None,
) -> tuple[list[Pose], GlobalMemory]:
    """Corrected trajectory plus the memory rebuilt by replay."""
    corrected = correct_poses(pose_log, event)
    rebuilt = rebuild_memory(corrected, local_maps, template, embeddings)
    return corrected, rebuilt


def render_global(m: GlobalMemory, pose_log: list[Pose] | None = None) -> tuple[np.ndarray, dict]:
    """Belief plane resampled into the origin ("world") frame, plus metadata."""
    meta = {
        "origin": {"x": m.origin.x, "y": m.origin.y, "theta": m.origin.theta},
        "cell_size": m.cell_size,
        "size": m.size,
        "backend": m.backend,
    }
    if m.backend == "world":
        return m.belief.copy(), meta
    # egocentric: place the window contents at the current pose in the
    # origin frame
    pose = pose_log[-1] if pose_log else m.pose
    c = m.center
    rows, cols = np.meshgrid(np.arange(m.size) - c, np.arange(m.size) - c, indexing="ij")
    # origin-frame offsets (cells) -> world -> current-pose ego offsets
    f0 = rows.ravel() * m.cell_size
    s0 = cols.ravel() * m.cell_size
    cos0, sin0 = math.cos(m.origin.theta), math.sin(m.origin.theta)
    wx = m.origin.x + cos0 * f0 - sin0 * s0
    wy = m.origin.y + sin0 * f0 + cos0 * s0
    cos_p, sin_p = math.cos(pose.theta), math.sin(pose.theta)
    dx, dy = wx - pose.x, wy - pose.y
    fr = (cos_p * dx + sin_p * dy) / m.cell_size + c
    sc = (-sin_p * dx + cos_p * dy) / m.cell_size + c
    img = bilinear_sample(m.belief, fr, sc, fill=0.0).reshape(m.size, m.size)
    return img, meta
