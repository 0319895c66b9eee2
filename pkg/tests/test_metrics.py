import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esmap import metrics
from esmap.errors import DegenerateInput, EmptyGroundTruth, ShapeMismatch


def test_normalize_belief_endpoints():
    g = np.array([-1.0, 0.0, 1.0])
    assert np.allclose(metrics.normalize_belief(g), [0.0, 0.5, 1.0])


def test_map_mse_hand_value():
    pred = np.array([[0.0, 1.0], [0.5, 0.5]])
    gt = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert metrics.map_mse(pred, gt) == pytest.approx((0 + 1 + 0.25 + 0.25) / 4)
    with pytest.raises(ShapeMismatch):
        metrics.map_mse(np.zeros(3), np.zeros(4))


def test_map_correlation_extremes():
    g = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert metrics.map_correlation(g, g) == pytest.approx(1.0)
    assert metrics.map_correlation(1.0 - g, g) == pytest.approx(-1.0)
    with pytest.raises(DegenerateInput):
        metrics.map_correlation(np.full((2, 2), 0.5), g)


def test_mutual_information_hand_values():
    # identical balanced binary maps: MI equals the 1-bit entropy
    g = np.array([0.0, 0.0, 1.0, 1.0])
    assert metrics.map_mutual_information(g, g) == pytest.approx(1.0)
    # exactly independent joint: MI is zero
    pred = np.array([0.0, 0.0, 1.0, 1.0])
    gt = np.array([0.0, 1.0, 0.0, 1.0])
    assert metrics.map_mutual_information(pred, gt) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        metrics.map_mutual_information(g, g, bins=1)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20)
def test_mutual_information_nonnegative(seed):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0, 1, 64)
    gt = (rng.uniform(0, 1, 64) > 0.5).astype(float)
    assert metrics.map_mutual_information(pred, gt) >= -1e-12


def test_metrics_report_mask_and_degenerate_flag():
    pred = np.array([[0.2, 0.8], [0.5, 0.5]])
    gt = np.array([[0.0, 1.0], [1.0, 1.0]])
    mask = np.array([[True, True], [False, False]])
    rep = metrics.metrics_report(pred, gt, t=7, area_tag="local", mask=mask)
    assert rep.t == 7 and rep.area_tag == "local"
    assert rep.mse == pytest.approx((0.04 + 0.04) / 2)
    assert not rep.degenerate
    flat = metrics.metrics_report(np.full((2, 2), 0.5), gt)
    assert flat.degenerate and flat.correlation == 0.0


def test_baseline_chance():
    out = metrics.baseline_chance((5, 5), np.random.default_rng(0))
    assert out.shape == (5, 5)
    assert np.all((out >= 0) & (out <= 1))


def test_baseline_pixelwise_matcher():
    a = np.zeros((4, 4))
    assert metrics.baseline_pixelwise_matcher(a, a) == 0.0
    assert metrics.baseline_pixelwise_matcher(a, np.ones((4, 4))) == -1.0


# ---------------------------------------------------------------- loop-closure PR

def test_gt_loop_pairs_hand_example():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.05, 0.0], [5.0, 0.0]])
    pairs = metrics.gt_loop_pairs(pos, eps_pos=0.1, recency_window=2)
    assert pairs == [(3, 0)]


def test_pr_curve_perfect_detector():
    gt = [(10, 0), (11, 0)]
    detections = [(10, 0, 0.1), (11, 0, 0.2)]
    curve = metrics.pr_curve(detections, gt, match_slack=0)
    assert curve.auc == pytest.approx(1.0)
    final_alpha, precision, recall = curve.points[-1]
    assert precision == 1.0 and recall == 1.0


def test_pr_curve_all_false_positives():
    gt = [(50, 0)]
    detections = [(20, 5, 0.1), (30, 9, 0.2)]
    curve = metrics.pr_curve(detections, gt, match_slack=2)
    # recall never leaves zero, so the area is zero
    assert curve.auc == pytest.approx(0.0)
    assert all(r == 0.0 for _, _, r in curve.points)


def test_pr_curve_match_slack():
    gt = [(50, 10)]
    near_miss = [(51, 11, 0.1)]
    assert metrics.pr_curve(near_miss, gt, match_slack=2).auc == pytest.approx(1.0)
    assert metrics.pr_curve(near_miss, gt, match_slack=0).auc == pytest.approx(0.0)


def test_pr_curve_empty_threshold_flag():
    gt = [(50, 0)]
    curve = metrics.pr_curve([], gt)
    assert curve.no_detections
    assert curve.points[0][1] == 1.0  # precision defaults to 1 with the flag


def test_pr_curve_requires_ground_truth():
    with pytest.raises(EmptyGroundTruth):
        metrics.pr_curve([(1, 0, 0.5)], [])


def test_pr_curve_recall_monotone_in_threshold():
    rng = np.random.default_rng(0)
    gt = [(t, t - 40) for t in range(40, 60)]
    detections = [(t, t - 40 if rng.random() < 0.5 else 5, float(rng.random()))
                  for t in range(40, 60)]
    curve = metrics.pr_curve(detections, gt, match_slack=1)
    alphas = [p[0] for p in curve.points]
    recalls = [p[2] for p in curve.points]
    assert alphas == sorted(alphas)
    assert all(b >= a for a, b in zip(recalls, recalls[1:]))
