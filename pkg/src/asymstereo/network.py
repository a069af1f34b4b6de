"""Desk-scale stereo matching network: feature extractor + matching module.

The extractor maps an image to a feature map at ``feature_stride``; the
matching module regularizes a concatenation cost volume and regresses
disparity by soft-argmin.
"""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_VERSION = 1


@dataclass
class NetworkConfig:
    d_max: int = 64
    feature_channels: int = 16
    feature_stride: int = 4
    num_extractor_blocks: int = 4
    matcher_channels: int = 16
    in_channels: int = 3
    norm: str = "group"
    seed: int = 0

    def __post_init__(self):
        if self.feature_stride not in (1, 2, 4):
            raise ValueError("feature_stride must be 1, 2 or 4")
        if self.d_max <= 0 or self.d_max % self.feature_stride:
            raise ValueError("d_max must be a positive multiple of feature_stride")
        if self.norm not in ("none", "group"):
            raise ValueError("norm must be 'none' or 'group'")

    @property
    def cost_levels(self):
        return self.d_max // self.feature_stride


def covering_d_max(d_max, stride=4):
    """Smallest network d_max whose largest regressible disparity reaches ``d_max``.

    Soft-argmin over ``d_max / stride`` levels tops out at ``d_max - stride``,
    so a network meant for data up to ``d_max`` needs one extra level.
    """
    return (-(-int(d_max) // stride) + 1) * stride


def _norm(kind, channels):
    if kind == "group":
        return nn.GroupNorm(min(4, channels), channels)
    return nn.Identity()


class ResBlock(nn.Module):
    def __init__(self, channels, norm="none"):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = _norm(norm, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = _norm(norm, channels)

    def forward(self, x):
        y = F.leaky_relu(self.norm1(self.conv1(x)), 0.1)
        y = self.norm2(self.conv2(y))
        return F.leaky_relu(x + y, 0.1)


class FeatureExtractor(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c = cfg.feature_channels
        self.stride = cfg.feature_stride
        layers = []
        cin = cfg.in_channels
        for s in ((2, 2) if self.stride == 4 else (2,) if self.stride == 2 else (1,)):
            layers += [nn.Conv2d(cin, c, 3, stride=s, padding=1), _norm(cfg.norm, c), nn.LeakyReLU(0.1)]
            cin = c
        self.stem = nn.Sequential(*layers)
        self.blocks = nn.Sequential(*[ResBlock(c, cfg.norm) for _ in range(cfg.num_extractor_blocks)])
        self.head = nn.Conv2d(c, c, 3, padding=1)

    def forward(self, img):
        h, w = img.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValueError(f"image size {h}x{w} not divisible by feature stride {self.stride}")
        return self.head(self.blocks(self.stem(img)))


class MatchingModule(nn.Module):
    """3-D convolutions over (disparity, y, x) producing one cost per hypothesis.

    The first layer is a per-hypothesis linear map of the concatenated
    features followed by |.|; its right-view half starts as the negated
    left-view half, so at initialization it measures a projected feature
    distance.
    """

    def __init__(self, cfg):
        super().__init__()
        m = cfg.matcher_channels
        c = cfg.feature_channels
        self.proj = nn.Conv3d(2 * c, m, 1)
        with torch.no_grad():
            self.proj.weight[:, c:] = -self.proj.weight[:, :c]
            self.proj.bias.zero_()
        self.conv_mid = nn.Conv3d(m, m, 3, padding=1)
        self.conv_out = nn.Conv3d(m, 1, 3, padding=1)

    def forward(self, cv):
        x = self.proj(cv).abs()
        x = F.leaky_relu(x + self.conv_mid(x), 0.1)
        return self.conv_out(x)[:, 0]


def build_cost_volume(feat_l, feat_r, levels):
    """(N, 2C, D, h, w); slice d stacks F_L[y, x] with F_R[y, x - d] (border clamped)."""
    if feat_l.shape != feat_r.shape:
        raise ValueError(f"feature shape mismatch {tuple(feat_l.shape)} vs {tuple(feat_r.shape)}")
    n, c, h, w = feat_l.shape
    xs = torch.arange(w, device=feat_l.device)
    slices = []
    for d in range(levels):
        idx = (xs - d).clamp(min=0)
        slices.append(torch.cat([feat_l, feat_r[..., idx]], dim=1))
    return torch.stack(slices, dim=2)


def soft_argmin(scores):
    """Expected hypothesis index under softmax(-scores) along dim 1."""
    prob = F.softmax(-scores, dim=1)
    idx = torch.arange(scores.shape[1], dtype=scores.dtype, device=scores.device).view(1, -1, 1, 1)
    return (prob * idx).sum(dim=1)


def regress_disparity(cv, matcher, stride, out_size):
    """Matching scores -> soft-argmin in pixels -> bilinear upsampling to ``out_size``."""
    disp = soft_argmin(matcher(cv)) * stride
    if tuple(disp.shape[-2:]) != tuple(out_size):
        disp = F.interpolate(disp.unsqueeze(1), size=out_size, mode="bilinear", align_corners=False)[:, 0]
    return disp


class StereoNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(cfg.seed)
        try:
            self.extractor = FeatureExtractor(cfg)
            self.matcher = MatchingModule(cfg)
        finally:
            torch.random.set_rng_state(gen_state)

    def forward(self, left, right):
        """Returns (disparity (N, H, W), F_L, F_R)."""
        if left.shape != right.shape:
            raise ValueError("left and right inputs must have the same shape")
        feat_l = self.extractor(left)
        feat_r = self.extractor(right)
        cv = build_cost_volume(feat_l, feat_r, self.cfg.cost_levels)
        disp = regress_disparity(cv, self.matcher, self.cfg.feature_stride, left.shape[-2:])
        return disp, feat_l, feat_r


def save_checkpoint(path, net, **extra):
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": asdict(net.cfg),
        "theta_F": net.extractor.state_dict(),
        "theta_M": net.matcher.state_dict(),
        "extra": extra,
    }, path)


def load_checkpoint(path):
    """Returns (net, extra)."""
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    if "version" not in ckpt:
        raise ValueError(f"{path}: checkpoint has no version field")
    if ckpt["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {ckpt['version']}")
    net = StereoNet(NetworkConfig(**ckpt["config"]))
    dtype = next(iter(ckpt["theta_F"].values())).dtype
    net.to(dtype)
    net.extractor.load_state_dict(ckpt["theta_F"])
    net.matcher.load_state_dict(ckpt["theta_M"])
    return net, ckpt.get("extra", {})


def parameters_equal(a, b):
    """Bitwise equality of two modules' parameters."""
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)
