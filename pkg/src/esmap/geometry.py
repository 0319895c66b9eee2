"""Continuous 2D poses, per-step egomotions, and grid-frame rigid transforms.

Conventions
-----------
World frame: x/y in meters, theta counterclockwise from +x, wrapped to
[-pi, pi).  An egomotion rotates first, then translates along the
post-rotation heading direction.

Egocentric grid frame: the first axis ("row") points forward along the
agent's heading, the second axis ("col") points to the agent's left.
``Affine2`` matrices act on (row, col) offsets measured in grid cells
from the agent-centered cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LimitExceeded

_TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % _TWO_PI - math.pi


@dataclass(frozen=True)
class Pose:
    """Agent state in the world frame. theta is stored wrapped."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError("pose fields must be finite")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_frame(self, x: float, y: float) -> tuple[float, float]:
        """World point -> (forward, left) offsets in this pose's frame, meters."""
        dx, dy = x - self.x, y - self.y
        c, s = math.cos(self.theta), math.sin(self.theta)
        return c * dx + s * dy, -s * dx + c * dy

    def from_frame(self, forward: float, left: float) -> tuple[float, float]:
        """(forward, left) offsets in this pose's frame -> world point."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * forward - s * left, self.y + s * forward + c * left


@dataclass(frozen=True)
class Egomotion:
    """One step of rigid motion: rotate by dtheta, then move `distance`
    meters along direction `heading` relative to the post-rotation pose."""

    dtheta: float = 0.0
    heading: float = 0.0
    distance: float = 0.0

    def __post_init__(self):
        if self.distance < 0:
            raise ValueError("distance must be >= 0")


@dataclass(frozen=True)
class ActionLimits:
    rot_limit: float = math.radians(10.0)
    trans_limit: float = 0.1
    step_period: float = 0.25

    def __post_init__(self):
        if self.rot_limit <= 0 or self.trans_limit <= 0 or self.step_period <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean multiplicative uniform noise on dtheta and distance."""

    relative_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.relative_level < 0:
            raise ValueError("relative_level must be >= 0")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


# small slack so limit-exactly motions survive degree/radian round trips
_LIMIT_EPS = 1e-9


def validate_egomotion(e: Egomotion, lim: ActionLimits) -> Egomotion:
    """Return ``e`` unchanged if it respects the per-step limits."""
    if abs(e.dtheta) > lim.rot_limit + _LIMIT_EPS:
        raise LimitExceeded(f"|dtheta|={abs(e.dtheta):.6f} > {lim.rot_limit:.6f}")
    if e.distance > lim.trans_limit + _LIMIT_EPS:
        raise LimitExceeded(f"distance={e.distance:.6f} > {lim.trans_limit:.6f}")
    return e


def compose_pose(p: Pose, e: Egomotion) -> Pose:
    """Advance a pose by one egomotion (rotate, then translate)."""
    theta = wrap_angle(p.theta + e.dtheta)
    direction = theta + e.heading
    return Pose(
        x=p.x + e.distance * math.cos(direction),
        y=p.y + e.distance * math.sin(direction),
        theta=theta,
    )


def inverse_egomotion(e: Egomotion) -> Egomotion:
    """Egomotion that undoes ``e`` (translate back, then rotate back)."""
    # moving back along the same world direction, expressed in the new frame
    return Egomotion(
        dtheta=-e.dtheta,
        heading=wrap_angle(e.heading + e.dtheta + math.pi),
        distance=e.distance,
    )


def egomotion_between(p_from: Pose, p_to: Pose) -> Egomotion:
    """Net egomotion carrying ``p_from`` to ``p_to``."""
    dx, dy = p_to.x - p_from.x, p_to.y - p_from.y
    d = math.hypot(dx, dy)
    dtheta = wrap_angle(p_to.theta - p_from.theta)
    heading = wrap_angle(math.atan2(dy, dx) - p_to.theta) if d > 0 else 0.0
    return Egomotion(dtheta=dtheta, heading=heading, distance=d)


def perturb_egomotion(
    e: Egomotion,
    nm: NoiseModel,
    rng: np.random.Generator,
    lim: ActionLimits | None = None,
) -> Egomotion:
    """Multiply dtheta and distance by independent (1 + level*U[-1,1]) factors.

    Two uniforms are always drawn so the rng stream does not depend on the
    noise level.  If ``lim`` is given the result is clamped back into the
    per-step limits.
    """
    u = rng.uniform(-1.0, 1.0, size=2)
    dtheta = e.dtheta * (1.0 + nm.relative_level * u[0])
    distance = e.distance * (1.0 + nm.relative_level * u[1])
    if lim is not None:
        dtheta = max(-lim.rot_limit, min(lim.rot_limit, dtheta))
        distance = max(0.0, min(lim.trans_limit, distance))
    return Egomotion(dtheta=dtheta, heading=e.heading, distance=max(0.0, distance))


@dataclass(frozen=True)
class Affine2:
    """Rigid 2x3 transform on egocentric (row, col) grid offsets.

    ``matrix`` maps previous-egocentric offsets (in cells, relative to the
    agent-centered cell) to current-egocentric offsets.  The linear part is
    always a proper rotation.
    """

    matrix: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(2), np.zeros((2, 1))]))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 3):
            raise ValueError("Affine2 matrix must be 2x3")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Affine2":
        return cls()

    @classmethod
    def from_parts(cls, linear: np.ndarray, translation: np.ndarray) -> "Affine2":
        return cls(np.hstack([np.asarray(linear, float), np.asarray(translation, float).reshape(2, 1)]))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 2]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 2) array of (row, col) offsets."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.linear.T + self.translation

    def compose(self, first: "Affine2") -> "Affine2":
        """Transform equal to applying ``first``, then ``self``."""
        lin = self.linear @ first.linear
        tr = self.linear @ first.translation + self.translation
        return Affine2.from_parts(lin, tr)

    def inverse(self) -> "Affine2":
        # rigid: inverse of the rotation part is its transpose
        rt = self.linear.T
        return Affine2.from_parts(rt, -rt @ self.translation)

    def is_rigid(self, tol: float = 1e-9) -> bool:
        r = self.linear
        return (
            np.allclose(r.T @ r, np.eye(2), atol=tol)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )


def egomotion_to_affine(e: Egomotion, cell_size: float) -> Affine2:
    """Grid-frame transform induced by an egomotion.

    A world-fixed feature at previous-egocentric offset q (cells) appears at
    ``affine.apply(q)`` in the current egocentric frame: the scene moves
    opposite to the agent.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be > 0")
    # new origin expressed in the old frame, (forward, left), meters
    ang = e.dtheta + e.heading
    t = np.array([e.distance * math.cos(ang), e.distance * math.sin(ang)]) / cell_size
    c, s = math.cos(e.dtheta), math.sin(e.dtheta)
    rot_back = np.array([[c, s], [-s, c]])  # rotation by -dtheta
    return Affine2.from_parts(rot_back, -rot_back @ t)
