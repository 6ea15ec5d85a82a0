import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codmtl.errors import DataError
from codmtl.metrics import (CalibrationCurve, auprc, auroc, calibration_curve,
                            calibration_slope_intercept, cv_aggregate, pr_points, roc_points,
                            trapezoid_area)
from oracles import auroc_pairs, average_precision


def test_auroc_hand_example():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_separated_and_ties():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_needs_both_classes():
    with pytest.raises(DataError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(DataError):
        auroc([0.1, 0.2], [0, 0])


def test_auprc_hand_examples():
    assert auprc([0.9, 0.1], [1, 0]) == 1.0
    assert auprc([0.9, 0.1], [0, 1]) == 0.5
    # thresholds 0.8 (1/1), 0.6 (1/2), 0.4 (2/3): 1*0.5 + 0.5*(2/3)
    assert auprc([0.8, 0.6, 0.4], [1, 0, 1]) == pytest.approx(0.5 + 1.0 / 3.0, abs=1e-15)


scored = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@settings(max_examples=150, deadline=None)
@given(scored)
def test_auroc_matches_pair_count(data):
    s, y = data
    assert auroc(s, y) == auroc_pairs(s, y)


@settings(max_examples=150, deadline=None)
@given(scored)
def test_auprc_matches_definition(data):
    s, y = data
    assert abs(auprc(s, y) - average_precision(s, y)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(scored)
def test_roc_area_equals_auroc(data):
    s, y = data
    pts = roc_points(s, y)
    assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)
    assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)
    assert trapezoid_area(pts) == pytest.approx(auroc(s, y), abs=1e-12)


def test_roc_perfect_contains_corner():
    pts = roc_points([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert any((p == [0.0, 1.0]).all() for p in pts)


def test_pr_points_end_at_full_recall():
    pts = pr_points([0.9, 0.5, 0.5, 0.1], [1, 0, 1, 0])
    assert pts[-1, 0] == 1.0
    assert pts[-1, 1] == 0.5


def test_calibration_single_bin():
    c = calibration_curve([0.05] * 7, [0] * 7)
    (m, o, n), = c.bins
    assert m == pytest.approx(0.05, abs=1e-15) and o == 0.0 and n == 7


def test_calibration_constructed_identity():
    s = np.repeat([0.05, 0.25, 0.55, 0.85], 20)
    y = np.concatenate([np.r_[np.ones(k), np.zeros(20 - k)] for k in (1, 5, 11, 17)])
    c = calibration_curve(s, y)
    np.testing.assert_allclose(c.observed_fraction, c.mean_predicted, atol=1e-12)


def test_calibration_score_one_goes_to_last_bin():
    c = calibration_curve([1.0, 0.95], [1, 1])
    assert len(c) == 1 and c.count[0] == 2


def test_slope_intercept_examples():
    x = np.linspace(0.05, 0.95, 10)
    s, i = calibration_slope_intercept(CalibrationCurve(x, x.copy(), np.full(10, 3)))
    assert abs(s - 1) <= 1e-9 and abs(i) <= 1e-9
    s, i = calibration_slope_intercept(CalibrationCurve(x, np.full(10, 0.3), np.ones(10)))
    assert abs(s) <= 1e-12 and abs(i - 0.3) <= 1e-12
    s, i = calibration_slope_intercept(CalibrationCurve(np.r_[0.2, 0.8], np.r_[0.1, 0.7], np.r_[5, 5]))
    assert s == pytest.approx(1.0, abs=1e-12) and i == pytest.approx(-0.1, abs=1e-12)


def test_slope_needs_two_bins():
    with pytest.raises(DataError):
        calibration_slope_intercept(CalibrationCurve(np.r_[0.3], np.r_[0.2], np.r_[4]))


def test_cv_aggregate_population_std():
    r = cv_aggregate([0.6] * 4)
    assert r.mean == pytest.approx(0.6) and r.std == 0.0
    r = cv_aggregate([0.5, 0.7])
    assert r.mean == pytest.approx(0.6) and r.std == pytest.approx(0.1)
    assert cv_aggregate([0.42]).std == 0.0
    with pytest.raises(DataError):
        cv_aggregate([])
