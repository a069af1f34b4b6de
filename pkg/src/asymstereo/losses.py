"""Training objectives: SSIM, photometric, feature-metric, smoothness, total."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .imagecore import DegenerateInputError

C1 = 0.01 ** 2
C2 = 0.03 ** 2


@dataclass
class LossConfig:
    alpha: float = 3.0
    lam: float = 0.1
    ssim_window: int = 3
    use_warp_mask: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be non-negative")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")


def ssim(a, b, window=3):
    """Per-pixel SSIM map (N, H, W): mean-pooled local statistics, reflect
    padded, computed per channel and averaged over channels."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if window % 2 == 0:
        raise ValueError("window must be odd")
    r = window // 2
    if r:
        a = F.pad(a, (r, r, r, r), mode="reflect")
        b = F.pad(b, (r, r, r, r), mode="reflect")

    def pool(t):
        return F.avg_pool2d(t, window, stride=1)

    mu_a, mu_b = pool(a), pool(b)
    var_a = pool(a * a) - mu_a ** 2
    var_b = pool(b * b) - mu_b ** 2
    cov = pool(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return (num / den).mean(dim=1)


def _masked_mean(err, mask):
    if mask is None:
        return err.mean()
    mask = mask.to(err.dtype)
    count = mask.sum()
    if count.item() == 0:
        raise DegenerateInputError("warp mask selects no pixels")
    return (err * mask).sum() / count


def reconstruction_loss(target, recon, mask, cfg):
    """mean |target - recon| over channels + alpha * (1 - SSIM), averaged over mask."""
    l1 = (target - recon).abs().mean(dim=1)
    err = l1 + cfg.alpha * (1 - ssim(target, recon, cfg.ssim_window))
    return _masked_mean(err, mask if cfg.use_warp_mask else None)


def photometric_loss(left, warp, cfg=LossConfig()):
    return reconstruction_loss(left, warp.warped, warp.in_bounds_mask, cfg)


def pool_mask(mask, stride):
    """A feature cell is valid only if every pixel it covers is valid."""
    if stride == 1:
        return mask
    m = mask.to(torch.float32).unsqueeze(1)
    return (-F.max_pool2d(-m, stride, stride))[:, 0] > 0.5


def feature_metric_loss(feat_left, feat_warp, cfg=LossConfig()):
    """``feat_warp.warped`` holds the extractor applied to the warped image;
    its mask is at full resolution and gets pooled to the feature stride."""
    mask = feat_warp.in_bounds_mask
    if mask is not None and mask.shape[-1] != feat_left.shape[-1]:
        mask = pool_mask(mask, mask.shape[-1] // feat_left.shape[-1])
    return reconstruction_loss(feat_left, feat_warp.warped, mask, cfg)


def smoothness_loss(disp, image):
    """Edge-aware first-order smoothness with forward differences."""
    if disp.dim() == 3:
        disp = disp.unsqueeze(1)
    if disp.shape[-2:] != image.shape[-2:]:
        raise ValueError("disparity and image must share spatial size")
    dx_d = (disp[..., :, 1:] - disp[..., :, :-1]).abs()
    dy_d = (disp[..., 1:, :] - disp[..., :-1, :]).abs()
    dx_i = (image[..., :, 1:] - image[..., :, :-1]).abs().mean(dim=1, keepdim=True)
    dy_i = (image[..., 1:, :] - image[..., :-1, :]).abs().mean(dim=1, keepdim=True)
    return (dx_d * torch.exp(-dx_i)).mean() + (dy_d * torch.exp(-dy_i)).mean()


def total_loss(data_term, smooth_term, cfg=LossConfig()):
    return data_term + cfg.lam * smooth_term
