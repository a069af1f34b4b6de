import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asymstereo.imagecore import DegenerateInputError, DisparityMap
from asymstereo.metrics import end_point_error, three_pixel_error


def bad_count_oracle(pred, gt, valid):
    bad = n = 0
    for p, g, v in zip(pred.ravel(), gt.ravel(), valid.ravel()):
        if not v:
            continue
        n += 1
        e = abs(p - g)
        if e > 3 and e > 0.05 * abs(g):
            bad += 1
    return 100.0 * bad / n


def epe_oracle(pred, gt, valid):
    total = n = 0.0
    for p, g, v in zip(pred.ravel(), gt.ravel(), valid.ravel()):
        if v:
            total += abs(p - g)
            n += 1
    return total / n


def test_perfect_prediction():
    gt = DisparityMap(np.random.default_rng(0).uniform(0, 50, (8, 8)))
    assert three_pixel_error(gt.data, gt) == 0.0
    assert end_point_error(gt.data, gt) == 0.0


def test_and_semantics_boundary():
    gt = DisparityMap(np.full((4, 4), 100.0))
    assert three_pixel_error(np.full((4, 4), 104.0), gt) == 0.0
    assert three_pixel_error(np.full((4, 4), 106.0), gt) == 100.0


def test_constant_offset_epe():
    gt = DisparityMap(np.random.default_rng(1).uniform(0, 50, (8, 8)))
    assert abs(end_point_error(gt.data + 1, gt) - 1.0) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_metrics_match_oracles(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 80, (8, 8))
    pred = gt + rng.normal(0, 5, (8, 8))
    valid = rng.random((8, 8)) > 0.2
    valid[0, 0] = True
    d = DisparityMap(gt, valid)
    pe = three_pixel_error(pred, d)
    assert pe == bad_count_oracle(pred, gt, valid)
    assert 0 <= pe <= 100
    assert abs(end_point_error(pred, d) - epe_oracle(pred, gt, valid)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_3pe_invariant_to_small_perturbations(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 120, (8, 8))
    pred = gt + rng.normal(0, 6, (8, 8))
    bound = np.minimum(3.0, 0.05 * np.abs(gt))
    # perturbations that cannot push a pixel across either threshold
    err = np.abs(pred - gt)
    slack = np.minimum(np.abs(err - 3.0), np.abs(err - 0.05 * np.abs(gt)))
    delta = rng.uniform(-1, 1, (8, 8)) * np.minimum(bound, slack) * 0.99
    d = DisparityMap(gt)
    assert three_pixel_error(pred + delta, d) == three_pixel_error(pred, d)


def test_invalid_pixels_ignored():
    rng = np.random.default_rng(5)
    gt = rng.uniform(0, 30, (6, 6))
    valid = np.zeros((6, 6), bool)
    valid[:3] = True
    pred = gt.copy()
    pred[3:] = 1e6
    d = DisparityMap(gt, valid)
    assert three_pixel_error(pred, d) == 0.0 and end_point_error(pred, d) == 0.0


def test_no_valid_pixels():
    d = DisparityMap(np.zeros((4, 4)), np.zeros((4, 4), bool))
    with pytest.raises(DegenerateInputError):
        three_pixel_error(np.zeros((4, 4)), d)
    with pytest.raises(DegenerateInputError):
        end_point_error(np.zeros((4, 4)), d)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        end_point_error(np.zeros((4, 5)), DisparityMap(np.zeros((4, 4))))
