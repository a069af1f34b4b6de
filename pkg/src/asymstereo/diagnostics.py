"""Feature-space diagnostics: degradation-agnostic and matching-specific scores.

The degradation-agnostic score is the PSNR between the features of the HR
right view and of its degraded, upsampled version; the matching-specific
score is the 3PE of winner-takes-all matching between left and upsampled
right features (5x5 SSD patches in image space).
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .imagecore import DisparityMap
from .metrics import three_pixel_error

INF_PSNR = math.inf


@dataclass
class SpaceReport:
    space_label: str
    psnr_db: float
    wta_3pe_percent: float
    scene_id: str = ""

    def row(self):
        return f"{self.space_label}\t{self.scene_id}\t{self.psnr_db:.4f}\t{self.wta_3pe_percent:.4f}"


def feature_psnr(a, b):
    """PSNR after jointly min-max normalizing both maps to [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    lo = min(a.min(), b.min())
    rng = max(a.max(), b.max()) - lo
    if rng == 0:
        return INF_PSNR
    mse = np.mean(((a - lo) / rng - (b - lo) / rng) ** 2)
    if mse == 0:
        return INF_PSNR
    return float(10.0 * np.log10(1.0 / mse))


def _wta(cost):
    """cost: (D, H, W) with inf for excluded hypotheses; ties -> smallest d."""
    return np.argmin(cost, axis=0).astype(np.float64)


def wta_cost(feat_l, feat_r, levels):
    """Euclidean feature distance per hypothesis, inf where x - d < 0."""
    h, w, _ = feat_l.shape
    cost = np.full((levels, h, w), np.inf)
    for d in range(min(levels, w)):
        diff = feat_l[:, d:] - feat_r[:, :w - d]
        cost[d, :, d:] = np.sqrt(np.sum(diff * diff, axis=2))
    return cost


def wta_match(feat_l, feat_r, d_max_f, stride=1):
    """Winner-takes-all disparity on (h, w, C) feature maps.

    The result at feature resolution is scaled by ``stride`` and
    nearest-upsampled so it can be compared with full-resolution ground truth.
    """
    feat_l = np.asarray(feat_l, dtype=np.float64)
    feat_r = np.asarray(feat_r, dtype=np.float64)
    if feat_l.shape != feat_r.shape:
        raise ValueError(f"shape mismatch {feat_l.shape} vs {feat_r.shape}")
    if d_max_f < 1:
        raise ValueError("d_max_f must be >= 1")
    d = _wta(wta_cost(feat_l, feat_r, d_max_f))
    if stride > 1:
        d = np.repeat(np.repeat(d, stride, axis=0), stride, axis=1) * stride
    return DisparityMap(d)


def patch_match_image(img_l, img_r, patch=5, d_max=64):
    """WTA over sum of squared differences of reflect-padded patches."""
    img_l = np.asarray(img_l, dtype=np.float64)
    img_r = np.asarray(img_r, dtype=np.float64)
    if img_l.ndim == 2:
        img_l, img_r = img_l[:, :, None], img_r[:, :, None]
    if patch % 2 == 0:
        raise ValueError("patch size must be odd")
    r = patch // 2
    pad = ((r, r), (r, r), (0, 0))
    pl = np.pad(img_l, pad, mode="reflect")
    pr = np.pad(img_r, pad, mode="reflect")
    h, w = img_l.shape[:2]
    cost = np.full((d_max, h, w), np.inf)
    for d in range(min(d_max, w)):
        sq = np.zeros(pl.shape[:2])
        sq[:, d:] = np.sum((pl[:, d:] - pr[:, :pl.shape[1] - d]) ** 2, axis=2)
        # box sum over the patch, keeping windows fully inside the padded grid
        # (a plain sum, so integer-valued inputs give exact costs and exact ties)
        ones = np.ones(patch)
        box = ndimage.correlate1d(ndimage.correlate1d(sq, ones, axis=0, mode="constant"), ones, axis=1,
                                  mode="constant")
        cost[d, :, d:] = box[r:r + h, r:r + w][:, d:]
    return DisparityMap(_wta(cost))


def torch_extractor(module, dtype=torch.float32):
    """Wrap a feature-extractor module as an (H, W, C) -> (h, w, C) numpy callable."""

    @torch.no_grad()
    def run(img):
        module.eval()
        t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].to(dtype)
        return module(t)[0].double().numpy().transpose(1, 2, 0)

    run.stride = module.stride
    return run


def hypothesis_levels(d_max, stride):
    """Fewest levels whose largest hypothesis, (levels - 1) * stride, reaches d_max."""
    return -(-d_max // stride) + 1


def evaluate_space(extractor, sample, d_max, label=None, patch=5):
    """Score one feature space on one scene.

    ``extractor`` is None for the raw image space (pixel PSNR and patch
    matching) or a callable with a ``stride`` attribute.
    """
    if sample.I_R is None or sample.gt_disparity is None:
        raise ValueError(f"{sample.scene_id}: needs the HR right view and ground-truth disparity")
    if extractor is None:
        psnr = feature_psnr(sample.I_R, sample.I_r_up)
        disp = patch_match_image(sample.I_L, sample.I_r_up, patch, d_max + 1)
        label = label or "image"
    else:
        stride = getattr(extractor, "stride", 1)
        f_hr, f_up, f_l = extractor(sample.I_R), extractor(sample.I_r_up), extractor(sample.I_L)
        psnr = feature_psnr(f_hr, f_up)
        disp = wta_match(f_l, f_up, hypothesis_levels(d_max, stride), stride)
        label = label or "features"
    return SpaceReport(label, psnr, three_pixel_error(disp, sample.gt_disparity), sample.scene_id)


def summarize(reports):
    """Mean PSNR (finite values only) and mean 3PE per space label."""
    out = {}
    for label in dict.fromkeys(r.space_label for r in reports):
        rs = [r for r in reports if r.space_label == label]
        finite = [r.psnr_db for r in rs if math.isfinite(r.psnr_db)]
        out[label] = SpaceReport(label, float(np.mean(finite)) if finite else INF_PSNR,
                                 float(np.mean([r.wta_3pe_percent for r in rs])), "mean")
    return out
