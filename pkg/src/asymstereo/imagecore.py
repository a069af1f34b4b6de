"""Raster types and file I/O.

Images are float64 arrays of shape (H, W, C) with values in [0, 1]; the
conversion to integers happens only when reading or writing files.
"""

import os
import re
from dataclasses import dataclass, field

import cv2
import numpy as np

MIN_SIZE = 8
BT601 = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    pass


class DegenerateInputError(ValueError):
    """Raised when an operation has no valid pixels to work on."""


@dataclass
class DisparityMap:
    data: np.ndarray
    valid_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"disparity must be 2-D, got shape {self.data.shape}")
        if self.valid_mask is None:
            self.valid_mask = np.isfinite(self.data)
        else:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
            if self.valid_mask.shape != self.data.shape:
                raise ValueError("valid_mask shape does not match data")

    @property
    def shape(self):
        return self.data.shape

    def crop(self, y, x, h, w):
        return DisparityMap(self.data[y:y + h, x:x + w].copy(),
                            self.valid_mask[y:y + h, x:x + w].copy())


def as_image(data):
    """Coerce an array to the (H, W, C) float64 convention and validate it."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected HxW, HxWx1 or HxWx3 array, got {img.shape}")
    if img.shape[0] < MIN_SIZE or img.shape[1] < MIN_SIZE:
        raise ValueError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {img.shape[:2]}")
    return img


def color_space(img):
    return "grayscale" if img.shape[2] == 1 else "RGB"


def to_gray(img):
    img = as_image(img)
    if img.shape[2] == 1:
        return img
    return (img @ BT601)[:, :, None]


def load_image(path, gray=False):
    """Read a PNG/PPM/PGM file into [0, 1] floats (8- or 16-bit)."""
    if not os.path.isfile(path):
        raise OSError(f"no such image file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"could not decode image: {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        raise ImageFormatError(f"unsupported bit depth {raw.dtype} in {path}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[:, :, :3]
        img = img[:, :, ::-1]
    img = as_image(img)
    return to_gray(img) if gray else img


def quantize(img, bit_depth=16):
    """Round to the grid representable by an integer file of the given depth."""
    maxval = (1 << bit_depth) - 1
    return np.round(np.clip(img, 0.0, 1.0) * maxval) / maxval


def save_image(path, img, bit_depth=8):
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    img = as_image(img)
    maxval = (1 << bit_depth) - 1
    raw = np.round(np.clip(img, 0.0, 1.0) * maxval).astype(np.uint8 if bit_depth == 8 else np.uint16)
    if raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    else:
        raw = raw[:, :, 0]
    if not cv2.imwrite(str(path), np.ascontiguousarray(raw)):
        raise OSError(f"could not write image: {path}")


# ---------------------------------------------------------------------------
# PFM

def read_pfm(path):
    """Returns (data, scale). Rows are returned top-down."""
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ImageFormatError(f"not a PFM file: {path}")
        dims = f.readline()
        while dims.startswith(b"#"):
            dims = f.readline()
        m = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
        if m is None:
            raise ImageFormatError(f"malformed PFM dimensions in {path}")
        width, height = int(m.group(1)), int(m.group(2))
        try:
            scale = float(f.readline().strip())
        except ValueError as e:
            raise ImageFormatError(f"malformed PFM scale in {path}") from e
        if scale == 0:
            raise ImageFormatError(f"PFM scale must be nonzero in {path}")
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        data = np.fromfile(f, dtype=endian + "f4", count=count)
    if data.size != count:
        raise ImageFormatError(f"truncated PFM raster in {path}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    data = np.flipud(data.reshape(shape))
    return data.astype(np.float32), scale


def write_pfm(path, data, scale=-1.0):
    """Little-endian (negative scale) by default, rows bottom-up."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    elif data.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"cannot write array of shape {data.shape} as PFM")
    endian = "<" if scale < 0 else ">"
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(f"{scale}\n".encode())
        np.flipud(data).astype(endian + "f4").tofile(f)


def load_disparity(path, format="pfm"):
    if format == "pfm":
        data, _ = read_pfm(path)
        if data.ndim == 3:
            data = data[:, :, 0]
        data = data.astype(np.float64)
        valid = np.isfinite(data)
        return DisparityMap(np.where(valid, data, 0.0), valid)
    if format == "kitti_png16":
        if not os.path.isfile(path):
            raise OSError(f"no such disparity file: {path}")
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise OSError(f"could not decode disparity PNG: {path}")
        if raw.dtype != np.uint16 or raw.ndim != 2:
            raise ImageFormatError(f"KITTI disparity must be single-channel uint16: {path}")
        return DisparityMap(raw.astype(np.float64) / 256.0, raw > 0)
    raise ValueError(f"unknown disparity format {format!r}")


def save_disparity(d, path, format="pfm"):
    if format == "pfm":
        data = np.where(d.valid_mask, d.data, np.inf).astype(np.float32)
        write_pfm(path, data)
    elif format == "kitti_png16":
        raw = np.clip(np.round(d.data * 256.0), 1, 65535)
        raw = np.where(d.valid_mask, raw, 0).astype(np.uint16)
        if not cv2.imwrite(str(path), raw):
            raise OSError(f"could not write disparity PNG: {path}")
    else:
        raise ValueError(f"unknown disparity format {format!r}")


def colorize_disparity(d, d_max, colormap="viridis"):
    import matplotlib

    cmap = matplotlib.colormaps[colormap]
    norm = np.clip(np.where(d.valid_mask, d.data, 0.0) / float(d_max), 0.0, 1.0)
    rgb = cmap(norm)[:, :, :3]
    rgb[~d.valid_mask] = 0.0
    return rgb


def render_disparity(d, path, d_max=None, colormap="viridis"):
    """Write a color-coded 8-bit PNG; [0, d_max] spans the colormap, invalid pixels are black."""
    if d_max is None:
        d_max = float(d.data[d.valid_mask].max()) if d.valid_mask.any() else 1.0
        d_max = d_max or 1.0
    save_image(path, colorize_disparity(d, d_max, colormap), bit_depth=8)
