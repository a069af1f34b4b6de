"""Differentiable horizontal warping of the right view into the left view."""

from typing import NamedTuple

import torch


class WarpResult(NamedTuple):
    warped: torch.Tensor
    in_bounds_mask: torch.Tensor


def warp_right_to_left(src, disp):
    """Sample ``src`` at (y, x - d[y, x]) with linear interpolation along x.

    src: (N, C, H, W); disp: (N, 1, H, W) or (N, H, W).
    Source coordinates outside [0, W-1] are clamped to the border and
    reported as False in ``in_bounds_mask`` (N, H, W).
    """
    if disp.dim() == 4:
        if disp.shape[1] != 1:
            raise ValueError("disparity must have a single channel")
        disp = disp[:, 0]
    n, c, h, w = src.shape
    if disp.shape != (n, h, w):
        raise ValueError(f"disparity shape {tuple(disp.shape)} does not match source {tuple(src.shape)}")
    xs = torch.arange(w, dtype=src.dtype, device=src.device).view(1, 1, w)
    x_src = xs - disp.to(src.dtype)
    in_bounds = (x_src >= 0) & (x_src <= w - 1)
    x_src = x_src.clamp(0, w - 1)
    # NaN disparities yield NaN samples (index 0 is a placeholder) so the loss reports them
    x0 = torch.nan_to_num(x_src.detach(), nan=0.0).floor()
    x0 = x0.clamp(max=w - 2) if w > 1 else x0
    frac = (x_src - x0).unsqueeze(1)
    i0 = x0.long().unsqueeze(1).expand(n, c, h, w)
    i1 = (i0 + 1).clamp(max=w - 1)
    v0 = src.gather(3, i0)
    v1 = src.gather(3, i1)
    return WarpResult((1 - frac) * v0 + frac * v1, in_bounds)
