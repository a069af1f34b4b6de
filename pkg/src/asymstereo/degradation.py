"""Synthesis of the low-resolution right view.

Five degradation modes are supported: bicubic downsampling (BIC),
isotropic/anisotropic Gaussian blur + subsampling (IG/AG), and the latter
two followed by JPEG compression (IG_JPEG/AG_JPEG).
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import cv2
import numpy as np
from scipy import ndimage

from .imagecore import as_image

MODES = ("BIC", "IG", "AG", "IG_JPEG", "AG_JPEG")
SCALES = (2, 3, 4, 6, 8)

# Sampling ranges used when drawing a per-scene degradation from a seed.
IG_SIGMA_RANGE = (0.6, 2.4)
AG_SIGMA_RANGE = (0.6, 3.0)
JPEG_QUALITY_RANGE = (30, 90)


def default_kernel_size(sigma_x, sigma_y):
    return 2 * math.ceil(3 * max(sigma_x, sigma_y)) + 1


@dataclass
class GaussianKernelSpec:
    sigma_x: float
    sigma_y: float
    theta: float = 0.0
    size: Optional[int] = None

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("kernel sigmas must be positive")
        if self.size is None:
            self.size = default_kernel_size(self.sigma_x, self.sigma_y)
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 3, got {self.size}")

    @property
    def isotropic(self):
        return self.sigma_x == self.sigma_y and self.theta == 0


@dataclass
class DegradationSpec:
    scale: int
    mode: str = "BIC"
    kernel: Optional[GaussianKernelSpec] = None
    jpeg_quality: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown degradation mode {self.mode!r}")
        if self.scale not in SCALES:
            raise ValueError(f"asymmetric factor must be one of {SCALES}, got {self.scale}")
        if self.mode == "BIC" and self.kernel is not None:
            raise ValueError("BIC degradation takes no blur kernel")
        if self.mode != "BIC" and self.kernel is None:
            raise ValueError(f"{self.mode} degradation requires a blur kernel")
        if self.mode.endswith("_JPEG"):
            if self.jpeg_quality is None or not 5 <= self.jpeg_quality <= 100:
                raise ValueError("JPEG modes need jpeg_quality in [5, 100]")
        elif self.jpeg_quality is not None:
            raise ValueError(f"{self.mode} degradation takes no jpeg_quality")

    def to_dict(self):
        out = {"scale": self.scale, "mode": self.mode, "rng_seed": self.rng_seed}
        if self.kernel is not None:
            out.update(sigma_x=repr(self.kernel.sigma_x), sigma_y=repr(self.kernel.sigma_y),
                       theta=repr(self.kernel.theta), kernel_size=self.kernel.size)
        if self.jpeg_quality is not None:
            out["jpeg_quality"] = self.jpeg_quality
        return out

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_dict(cls, d):
        kernel = None
        if "sigma_x" in d:
            kernel = GaussianKernelSpec(float(d["sigma_x"]), float(d["sigma_y"]),
                                        float(d.get("theta", 0.0)), int(d["kernel_size"]))
        jq = d.get("jpeg_quality")
        return cls(scale=int(d["scale"]), mode=str(d["mode"]), kernel=kernel,
                   jpeg_quality=None if jq is None else int(jq),
                   rng_seed=int(d.get("rng_seed", 0)))

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_key_values(text))


def parse_key_values(text):
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def sample_spec(mode, scale, seed):
    """Draw a per-scene degradation (kernel and JPEG quality) from ``seed``."""
    rng = np.random.default_rng(seed)
    kernel = None
    quality = None
    if mode in ("IG", "IG_JPEG"):
        sigma = float(rng.uniform(*IG_SIGMA_RANGE))
        kernel = GaussianKernelSpec(sigma, sigma, 0.0)
    elif mode in ("AG", "AG_JPEG"):
        sx, sy = (float(v) for v in rng.uniform(*AG_SIGMA_RANGE, size=2))
        kernel = GaussianKernelSpec(sx, sy, float(rng.uniform(0.0, math.pi)))
    if mode.endswith("_JPEG"):
        quality = int(rng.integers(JPEG_QUALITY_RANGE[0], JPEG_QUALITY_RANGE[1] + 1))
    return DegradationSpec(scale=scale, mode=mode, kernel=kernel, jpeg_quality=quality, rng_seed=seed)


def make_gaussian_kernel(spec):
    """Rotated bivariate Gaussian sampled at integer offsets, normalized to sum 1."""
    if spec.size % 2 == 0:
        raise ValueError("kernel size must be odd")
    r = spec.size // 2
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    c, s = math.cos(spec.theta), math.sin(spec.theta)
    # coordinates in the kernel's principal frame
    u = c * xx + s * yy
    v = -s * xx + c * yy
    k = np.exp(-0.5 * ((u / spec.sigma_x) ** 2 + (v / spec.sigma_y) ** 2))
    return k / k.sum()


def _cubic(x, a=-0.5):
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(x <= 1, (a + 2) * x3 - (a + 3) * x2 + 1,
                    np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0))


def bicubic_weights(in_size, out_size, antialias=True):
    """Dense (out_size, in_size) resampling matrix.

    Half-pixel-centered grid, a = -0.5, edge clamping; when shrinking with
    ``antialias`` the kernel is stretched by the scale factor.
    """
    scale = out_size / in_size
    stretch = 1.0 / scale if (antialias and scale < 1) else 1.0
    centers = (np.arange(out_size) + 0.5) / scale - 0.5
    support = 2.0 * stretch
    left = np.floor(centers - support).astype(int) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    w = _cubic((centers[:, None] - idx) / stretch)
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_size, in_size))
    np.add.at(mat, (np.repeat(np.arange(out_size), taps), np.clip(idx, 0, in_size - 1).ravel()), w.ravel())
    return mat


def resize_bicubic(img, out_h, out_w, antialias=True):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    wy = bicubic_weights(img.shape[0], out_h, antialias)
    wx = bicubic_weights(img.shape[1], out_w, antialias)
    tmp = np.tensordot(wy, img, axes=(1, 0))
    return np.tensordot(wx, tmp, axes=(1, 1)).transpose(1, 0, 2)


def blur(img, kernel):
    """Per-channel 2-D convolution with reflect padding (edge pixel not repeated)."""
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.convolve(img[:, :, c], kernel, mode="mirror")
    return out


def jpeg_roundtrip(img, quality):
    raw = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    if raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    ok, buf = cv2.imencode(".jpg", np.ascontiguousarray(raw), [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise RuntimeError("JPEG encoding failed")
    dec = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if dec.ndim == 2:
        dec = dec[:, :, None]
    else:
        dec = dec[:, :, ::-1]
    return dec.astype(np.float64) / 255.0


def degrade(hr, spec):
    """HR image (H, W, C) -> LR image (H/s, W/s, C)."""
    hr = as_image(hr)
    s = spec.scale
    h, w = hr.shape[:2]
    if h % s or w % s:
        raise ValueError(f"image size {h}x{w} not divisible by scale {s}")
    if spec.mode == "BIC":
        lr = resize_bicubic(hr, h // s, w // s, antialias=True)
    else:
        k = make_gaussian_kernel(spec.kernel)
        off = (s - 1) // 2
        lr = blur(hr, k)[off::s, off::s]
    lr = np.clip(lr, 0.0, 1.0)
    if spec.mode.endswith("_JPEG"):
        lr = jpeg_roundtrip(lr, spec.jpeg_quality)
    return lr


def upsample_bicubic(lr, s):
    lr = np.asarray(lr, dtype=np.float64)
    if lr.ndim == 2:
        lr = lr[:, :, None]
    if s == 1:
        return lr.copy()
    up = resize_bicubic(lr, lr.shape[0] * s, lr.shape[1] * s, antialias=False)
    return np.clip(up, 0.0, 1.0)
