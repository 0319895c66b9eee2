"""Accumulative egocentric local mapping: warp the previous map by the
egomotion, then merge the new observation through a weighted tanh.

Local maps are square numpy arrays with values in (-1, 1): positive means
believed free, negative believed occupied, 0 unknown.  The warp resamples
with bilinear interpolation about the agent-centered cell; samples falling
outside the grid take the ``fill`` value (0 = unknown), so information that
scrolls out of the window decays to neutral.
"""

from __future__ import annotations

import numpy as np

from .geometry import Affine2, Egomotion, egomotion_to_affine

DEFAULT_LAMBDA = 0.5
DEFAULT_CELL_SIZE = 0.24


def bilinear_sample(grid: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Sample ``grid`` at continuous (row, col) positions; outside -> fill."""
    h, w = grid.shape
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr = rows - r0
    fc = cols - c0

    def gather(ri, ci):
        inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        v = grid[np.clip(ri, 0, h - 1), np.clip(ci, 0, w - 1)]
        return np.where(inside, v, fill)

    return (
        (1 - fr) * (1 - fc) * gather(r0, c0)
        + (1 - fr) * fc * gather(r0, c0 + 1)
        + fr * (1 - fc) * gather(r0 + 1, c0)
        + fr * fc * gather(r0 + 1, c0 + 1)
    )


def warp_map(grid: np.ndarray, affine: Affine2, fill: float = 0.0) -> np.ndarray:
    """Resample ``grid`` so that a feature at offset q lands at affine(q).

    Offsets are measured in cells from the center cell (h//2, w//2).
    """
    h, w = grid.shape
    cr, cc = h // 2, w // 2
    inv = affine.inverse()
    rows, cols = np.meshgrid(np.arange(h) - cr, np.arange(w) - cc, indexing="ij")
    pts = np.column_stack([rows.ravel(), cols.ravel()]).astype(float)
    src = inv.apply(pts)
    sampled = bilinear_sample(grid, src[:, 0] + cr, src[:, 1] + cc, fill=fill)
    return sampled.reshape(h, w)


def merge_maps(warped: np.ndarray, obs: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Elementwise tanh of the lambda-weighted sum, written out explicitly."""
    if warped.shape != obs.shape:
        raise ValueError(f"shape mismatch: {warped.shape} vs {obs.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    z = lam * obs + (1.0 - lam) * warped
    e = np.exp(2.0 * z)
    return (e - 1.0) / (e + 1.0)


def bvu_step(
    prev: np.ndarray,
    e: Egomotion,
    obs: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    cell_size: float = DEFAULT_CELL_SIZE,
) -> np.ndarray:
    """One recurrent update: warp the previous map, merge the observation."""
    warped = warp_map(prev, egomotion_to_affine(e, cell_size))
    return merge_maps(warped, obs, lam)


def map_to_pgm_bytes(grid: np.ndarray) -> bytes:
    """Encode a (-1, 1)-valued map as a binary 8-bit PGM (P5)."""
    h, w = grid.shape
    pixels = np.rint(255.0 * (np.clip(grid, -1.0, 1.0) + 1.0) / 2.0).astype(np.uint8)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def map_to_csv(grid: np.ndarray) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in grid) + "\n"
