"""Map-similarity metrics, chance/pixelwise baselines, and PR evaluation.

Metrics operate on maps normalized to [0, 1]; belief maps in (-1, 1) are
shifted with ``normalize_belief`` first.  Ground truth is binary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, EmptyGroundTruth, ShapeMismatch


def normalize_belief(grid: np.ndarray) -> np.ndarray:
    """Map (-1, 1) belief values onto [0, 1]."""
    return (np.asarray(grid, float) + 1.0) / 2.0


def _check_shapes(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def map_mse(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_shapes(pred, gt)
    return float(np.mean((pred - gt) ** 2))


def map_correlation(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pearson coefficient over flattened cells."""
    pred, gt = _check_shapes(pred, gt)
    p = pred.ravel()
    g = gt.ravel()
    sp, sg = p.std(), g.std()
    if sp == 0 or sg == 0:
        raise DegenerateInput("constant map has no defined correlation")
    return float(np.mean((p - p.mean()) * (g - g.mean())) / (sp * sg))


def map_mutual_information(pred: np.ndarray, gt: np.ndarray, bins: int = 16) -> float:
    """MI of the joint cell-value histogram, in bits."""
    pred, gt = _check_shapes(pred, gt)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    joint, _, _ = np.histogram2d(
        pred.ravel(), gt.ravel(), bins=bins, range=[[0.0, 1.0], [0.0, 1.0]]
    )
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = joint * np.log2(joint / (px * py))
    return float(np.nansum(terms))


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    correlation: float
    mutual_information: float
    t: int = 0
    area_tag: str = ""
    degenerate: bool = False


def metrics_report(
    pred01: np.ndarray,
    gt01: np.ndarray,
    t: int = 0,
    area_tag: str = "",
    mask: np.ndarray | None = None,
    bins: int = 16,
) -> MetricsReport:
    """Compute all three metrics; a constant input downgrades correlation
    to 0 with the degenerate flag set."""
    if mask is not None:
        pred01 = pred01[mask]
        gt01 = gt01[mask]
    degenerate = False
    try:
        cor = map_correlation(pred01, gt01)
    except DegenerateInput:
        cor, degenerate = 0.0, True
    return MetricsReport(
        mse=map_mse(pred01, gt01),
        correlation=cor,
        mutual_information=map_mutual_information(pred01, gt01, bins=bins),
        t=t,
        area_tag=area_tag,
        degenerate=degenerate,
    )


def baseline_chance(shape, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform [0, 1] occupancy belief."""
    return rng.uniform(0.0, 1.0, size=shape)


def baseline_pixelwise_matcher(view_a: np.ndarray, view_b: np.ndarray) -> float:
    """Negative mean squared cell difference (higher = more similar)."""
    a, b = _check_shapes(view_a, view_b)
    return -float(np.mean((a - b) ** 2))


@dataclass(frozen=True)
class PRCurve:
    points: list  # (alpha, precision, recall), alpha strictly increasing
    auc: float
    no_detections: bool = False


def gt_loop_pairs(
    positions: np.ndarray, eps_pos: float, recency_window: int
) -> list[tuple[int, int]]:
    """Ground-truth closure pairs (t, t') from true positions: world distance
    <= eps_pos and t - t' > recency_window."""
    positions = np.asarray(positions, float)
    n = len(positions)
    pairs = []
    for t in range(n):
        lim = t - recency_window
        if lim <= 0:
            continue
        d = np.linalg.norm(positions[:lim] - positions[t], axis=1)
        for tp in np.flatnonzero(d <= eps_pos):
            pairs.append((t, int(tp)))
    return pairs


def pr_curve(
    detections: list[tuple[int, int, float]],
    gt_pairs: list[tuple[int, int]],
    match_slack: int = 2,
    alphas: np.ndarray | None = None,
) -> PRCurve:
    """Precision-recall sweep over the classification threshold.

    ``detections`` holds (t_now, t_matched, distance) candidates, at most
    one per step; a detection counts as a true positive when both its step
    indices fall within ``match_slack`` of a ground-truth pair.  Recall is
    the fraction of ground-truth anchor steps covered by a true positive.
    Zero detections at a threshold report precision 1 with a flag.
    """
    if not gt_pairs:
        raise EmptyGroundTruth("trajectory has no revisits")
    anchors: dict[int, set[int]] = {}
    for t, tp in gt_pairs:
        anchors.setdefault(t, set()).add(tp)
    anchor_keys = sorted(anchors)

    def is_tp(t_now, t_matched):
        for a in anchor_keys:
            if abs(t_now - a) <= match_slack:
                if any(abs(t_matched - tp) <= match_slack for tp in anchors[a]):
                    return a
        return None

    tp_anchor = [is_tp(t, tm) for t, tm, _ in detections]
    dists = np.array([d for _, _, d in detections]) if detections else np.empty(0)
    if alphas is None:
        uniq = np.unique(dists) if len(dists) else np.array([0.0])
        alphas = np.concatenate([uniq, [uniq[-1] + 1.0]])

    points = []
    any_empty = False
    for a in alphas:
        sel = dists <= a
        n_det = int(sel.sum())
        covered = {anc for anc, s in zip(tp_anchor, sel) if s and anc is not None}
        n_tp = sum(1 for anc, s in zip(tp_anchor, sel) if s and anc is not None)
        recall = len(covered) / len(anchor_keys)
        if n_det == 0:
            precision = 1.0
            any_empty = True
        else:
            precision = n_tp / n_det
        points.append((float(a), precision, recall))

    recalls = np.array([p[2] for p in points])
    precisions = np.array([p[1] for p in points])
    order = np.argsort(recalls, kind="stable")
    r_sorted = recalls[order]
    p_sorted = precisions[order]
    if len(r_sorted) == 0 or r_sorted[0] > 0:
        r_sorted = np.concatenate([[0.0], r_sorted])
        p_sorted = np.concatenate([[p_sorted[0] if len(p_sorted) else 1.0], p_sorted])
    auc = float(np.trapezoid(p_sorted, r_sorted))
    return PRCurve(points=points, auc=auc, no_detections=any_empty)
