"""3-pixel error and end-point error."""

import numpy as np

from .imagecore import DegenerateInputError, DisparityMap


def _prepare(pred, gt):
    pred_data = pred.data if isinstance(pred, DisparityMap) else np.asarray(pred, dtype=np.float64)
    if not isinstance(gt, DisparityMap):
        gt = DisparityMap(gt)
    if pred_data.shape != gt.data.shape:
        raise ValueError(f"shape mismatch {pred_data.shape} vs {gt.data.shape}")
    valid = gt.valid_mask
    if not valid.any():
        raise DegenerateInputError("ground truth has no valid pixels")
    return pred_data[valid], gt.data[valid]


def three_pixel_error(pred, gt):
    """Percentage of valid pixels with error > 3 px and > 5% of |gt| (KITTI rule)."""
    p, g = _prepare(pred, gt)
    err = np.abs(p - g)
    bad = (err > 3.0) & (err > 0.05 * np.abs(g))
    return 100.0 * int(bad.sum()) / bad.size


def end_point_error(pred, gt):
    p, g = _prepare(pred, gt)
    return float(np.abs(p - g).mean())
