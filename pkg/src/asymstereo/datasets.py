"""Scene containers, synthetic benchmark generation, manifests and batching."""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from . import degradation as deg
from .imagecore import (DisparityMap, as_image, load_disparity, load_image, quantize,
                        save_disparity, save_image)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
COLUMNS = ("scene_id", "left", "right_hr", "right_lr", "right_up", "disp_gt", "spec")
D_MAX_DEFAULTS = {"synthetic": 64, "middlebury": 64, "kitti": 192}
# random-dot benchmark defaults
SMOOTH_FRACTION = 0.0
NOISE_SIGMA = 0.0


class IngestionError(RuntimeError):
    pass


@dataclass
class StereoSample:
    I_L: np.ndarray
    I_r: np.ndarray
    I_r_up: np.ndarray
    spec: deg.DegradationSpec
    scene_id: str = ""
    I_R: Optional[np.ndarray] = None
    gt_disparity: Optional[DisparityMap] = None

    def __post_init__(self):
        s = self.spec.scale
        h, w = self.I_L.shape[:2]
        if self.I_r_up.shape != self.I_L.shape:
            raise ValueError(f"{self.scene_id}: upsampled right view does not match left view size")
        if self.I_r.shape[:2] != (h // s, w // s):
            raise ValueError(f"{self.scene_id}: LR view is not 1/{s} of the left view")
        if self.I_R is not None and self.I_R.shape != self.I_L.shape:
            raise ValueError(f"{self.scene_id}: HR right view does not match left view size")
        if self.gt_disparity is not None and self.gt_disparity.shape != (h, w):
            raise ValueError(f"{self.scene_id}: disparity does not match left view size")


def synthesize_right(hr_right, spec):
    """HR right view -> (LR view, upsampled view), both on the 16-bit file grid."""
    lr = quantize(deg.degrade(hr_right, spec))
    up = quantize(deg.upsample_bicubic(lr, spec.scale))
    return lr, up


def make_sample(I_L, I_R, spec, scene_id="", gt=None):
    I_L = quantize(as_image(I_L))
    I_R = quantize(as_image(I_R))
    lr, up = synthesize_right(I_R, spec)
    return StereoSample(I_L=I_L, I_r=lr, I_r_up=up, spec=spec, scene_id=scene_id, I_R=I_R, gt_disparity=gt)


# ---------------------------------------------------------------------------
# random-dot benchmark

class DotTexture:
    """Gaussian dots on jittered lattices, evaluated at arbitrary real coordinates.

    Each octave is (cell size, sigma range, amplitude); coarse octaves give
    the photometric loss a wide basin, fine ones carry the detail that the
    LR view loses.
    """

    OCTAVES = ((3.0, (1.0, 2.2), 1.5), (9.0, (2.5, 5.0), 1.2))
    # low-frequency blobs only: little signal inside a small matching window
    SMOOTH = ((20.0, (5.0, 9.0), 1.5),)

    def __init__(self, rng, x_range, y_range, octaves=OCTAVES, channels=3):
        self.layers = []
        for cell, sigma, amp in octaves:
            x0 = math.floor(x_range[0] / cell) - 3
            y0 = math.floor(y_range[0] / cell) - 3
            nx = math.ceil(x_range[1] / cell) - x0 + 4
            ny = math.ceil(y_range[1] / cell) - y0 + 4
            self.layers.append((cell, x0, y0,
                                rng.uniform(0, cell, size=(2, ny, nx)),
                                rng.uniform(*sigma, size=(ny, nx)),
                                rng.uniform(-amp, amp, size=(ny, nx, channels))))
        self.base = rng.uniform(-0.8, 0.8, size=channels)

    def __call__(self, u, y):
        u = np.asarray(u, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        acc = np.zeros(u.shape + (self.base.shape[0],)) + self.base
        for cell, x0, y0, jitter, sigma, amp in self.layers:
            cu = np.floor(u / cell).astype(int) - x0
            cy = np.floor(y / cell).astype(int) - y0
            for dy in range(-2, 3):
                for dx in range(-2, 3):
                    iy, ix = cy + dy, cu + dx
                    px = (ix + x0) * cell + jitter[0, iy, ix]
                    py = (iy + y0) * cell + jitter[1, iy, ix]
                    sig = sigma[iy, ix]
                    g = np.exp(-((u - px) ** 2 + (y - py) ** 2) / (2 * sig ** 2))
                    acc += g[..., None] * amp[iy, ix]
        return 0.5 + 0.45 * np.tanh(acc)


@dataclass
class Surface:
    texture: DotTexture
    disparity: float = 0.0
    slope_x: float = 0.0
    slope_y: float = 0.0
    # rectangle extent in left-image coordinates; None for the background
    box: Optional[tuple] = None

    def disp_at_left(self, x, y):
        return self.disparity + self.slope_x * x + self.slope_y * y

    def left_coord_from_right(self, xr, y):
        # solve u = xr + d(u, y) for u
        return (xr + self.disparity + self.slope_y * y) / (1.0 - self.slope_x)

    def covers(self, u, y):
        if self.box is None:
            return np.ones(np.broadcast(u, y).shape, dtype=bool)
        x0, y0, x1, y1 = self.box
        return (u >= x0) & (u < x1) & (y >= y0) & (y < y1)


def _random_scene(rng, h, w, d_max, smooth_fraction=0.0):
    """Slanted background plus fronto-parallel rectangles, nearest drawn last.

    Each surface independently gets the smooth texture style with
    probability ``smooth_fraction``.
    """
    tex_range = ((-8.0, w + d_max + 8.0), (-8.0, h + 8.0))

    def texture():
        octaves = DotTexture.SMOOTH if rng.random() < smooth_fraction else DotTexture.OCTAVES
        return DotTexture(rng, *tex_range, octaves=octaves)

    lo = rng.uniform(0.0, 0.25 * d_max)
    hi = rng.uniform(lo, 0.5 * d_max)
    # background disparity spans [lo, hi] across the image, in a random direction
    ang = rng.uniform(0, 2 * math.pi)
    gx, gy = math.cos(ang) * (hi - lo) / w, math.sin(ang) * (hi - lo) / h
    corners = [gx * cx + gy * cy for cx in (0, w - 1) for cy in (0, h - 1)]
    bg = Surface(texture(), disparity=lo - min(corners), slope_x=gx, slope_y=gy)
    rects = []
    for _ in range(int(rng.integers(2, 5))):
        rw = rng.uniform(0.15, 0.4) * w
        rh = rng.uniform(0.2, 0.5) * h
        x0 = rng.uniform(0, w - rw)
        y0 = rng.uniform(0, h - rh)
        d = rng.uniform(hi, d_max)
        rects.append(Surface(texture(), disparity=d, box=(x0, y0, x0 + rw, y0 + rh)))
    rects.sort(key=lambda s: s.disparity)
    return [bg] + rects


def _render(surfaces, h, w, view):
    """Render the front-most surface per pixel in the left or right view.

    Returns (image, disparity of the visible surface, visible surface index).
    """
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    image = np.zeros((h, w, 3))
    disp = np.zeros((h, w))
    owner = np.zeros((h, w), dtype=int)
    for i, s in enumerate(surfaces):
        u = xx if view == "left" else s.left_coord_from_right(xx, yy)
        m = s.covers(u, yy)
        image[m] = s.texture(u[m], yy[m])
        disp[m] = s.disp_at_left(u[m], yy[m])
        owner[m] = i
    return image, disp, owner


def _visible_owner(surfaces, xr, y):
    owner = np.zeros(xr.shape, dtype=int)
    for i, s in enumerate(surfaces):
        owner[s.covers(s.left_coord_from_right(xr, y), y)] = i
    return owner


def random_dot_scene(h, w, d_max, rng, smooth_fraction=0.0):
    """Noise-free views: returns (I_L, I_R, gt DisparityMap, non-occluded mask)."""
    surfaces = _random_scene(rng, h, w, d_max, smooth_fraction)
    left, disp, owner = _render(surfaces, h, w, "left")
    right, _, _ = _render(surfaces, h, w, "right")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xr = xx - disp
    # both interpolation taps of the right view must see the same surface
    x0 = np.floor(xr)
    visible = ((_visible_owner(surfaces, x0, yy) == owner) & (_visible_owner(surfaces, x0 + 1, yy) == owner)
               & (xr >= 0) & (xr <= w - 1))
    disp = np.clip(disp, 0.0, d_max)
    # occluded and out-of-view pixels carry no matchable signal; they are
    # excluded from the ground truth like a non-occluded evaluation map
    return left, right, DisparityMap(disp, visible), visible


def random_dot_samples(n_scenes, size=(128, 256), d_max=32, seed=0, mode="BIC", scale=4, prefix="scene",
                       smooth_fraction=SMOOTH_FRACTION, noise_sigma=NOISE_SIGMA):
    """In-memory random-dot scenes, each degraded with a per-scene seeded spec.

    Both HR views receive independent Gaussian capture noise of std
    ``noise_sigma`` before the right view is degraded.
    """
    if min(size) < 64:
        raise ValueError("random-dot scenes must be at least 64x64")
    h, w = size
    ss = np.random.SeedSequence(seed)
    samples = []
    for i, child in enumerate(ss.spawn(n_scenes)):
        rng = np.random.default_rng(child)
        left, right, gt, _ = random_dot_scene(h, w, d_max, rng, smooth_fraction)
        spec = deg.sample_spec(mode, scale, int(rng.integers(2 ** 31)))
        if noise_sigma > 0:
            left = np.clip(left + rng.normal(0.0, noise_sigma, left.shape), 0.0, 1.0)
            right = np.clip(right + rng.normal(0.0, noise_sigma, right.shape), 0.0, 1.0)
        samples.append(make_sample(left, right, spec, f"{prefix}_{i:04d}", gt))
    return samples


# ---------------------------------------------------------------------------
# manifests

@dataclass
class Manifest:
    root: str
    name: str = "dataset"
    split: str = "train"
    d_max: int = 64
    entries: list = field(default_factory=list)

    @property
    def path(self):
        return os.path.join(self.root, MANIFEST_NAME)

    def __len__(self):
        return len(self.entries)


def _spec_inline(spec):
    return ";".join(f"{k}={v}" for k, v in spec.to_dict().items())


def _spec_from_inline(text):
    return deg.DegradationSpec.from_dict(dict(kv.split("=", 1) for kv in text.split(";") if kv))


def write_sample(sample, scene_dir):
    os.makedirs(scene_dir, exist_ok=True)
    save_image(os.path.join(scene_dir, "left.png"), sample.I_L, 16)
    save_image(os.path.join(scene_dir, "right_lr.png"), sample.I_r, 16)
    save_image(os.path.join(scene_dir, "right_up.png"), sample.I_r_up, 16)
    if sample.I_R is not None:
        save_image(os.path.join(scene_dir, "right_hr.png"), sample.I_R, 16)
    if sample.gt_disparity is not None:
        save_disparity(sample.gt_disparity, os.path.join(scene_dir, "disp_gt.pfm"))
    with open(os.path.join(scene_dir, "spec.txt"), "w") as f:
        f.write(sample.spec.to_text())


def write_manifest(manifest):
    os.makedirs(manifest.root, exist_ok=True)
    with open(manifest.path, "w") as f:
        f.write(f"# name={manifest.name}\n# split={manifest.split}\n# d_max={manifest.d_max}\n")
        f.write("\t".join(COLUMNS) + "\n")
        for e in manifest.entries:
            f.write("\t".join(str(e.get(c) or "-") for c in COLUMNS) + "\n")
    return manifest


def save_samples(samples, out_dir, name="dataset", split="train", d_max=64):
    entries = []
    for s in samples:
        write_sample(s, os.path.join(out_dir, s.scene_id))
        rel = lambda f: f"{s.scene_id}/{f}"  # noqa: E731
        entries.append({
            "scene_id": s.scene_id, "left": rel("left.png"),
            "right_hr": rel("right_hr.png") if s.I_R is not None else None,
            "right_lr": rel("right_lr.png"), "right_up": rel("right_up.png"),
            "disp_gt": rel("disp_gt.pfm") if s.gt_disparity is not None else None,
            "spec": _spec_inline(s.spec),
        })
    return write_manifest(Manifest(out_dir, name, split, d_max, entries))


def make_random_dot_benchmark(out_dir, n_scenes, size=(128, 256), d_max=32, seed=0,
                              mode="BIC", scale=4, split="train", name="random_dot",
                              smooth_fraction=SMOOTH_FRACTION, noise_sigma=NOISE_SIGMA):
    samples = random_dot_samples(n_scenes, size, d_max, seed, mode, scale, prefix=split,
                                 smooth_fraction=smooth_fraction, noise_sigma=noise_sigma)
    return save_samples(samples, out_dir, name=name, split=split, d_max=d_max)


def load_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    meta = {}
    entries = []
    header = None
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            elif header is None:
                header = line.split("\t")
                if tuple(header) != COLUMNS:
                    raise IngestionError(f"{path}: unexpected manifest columns {header}")
            else:
                vals = line.split("\t")
                if len(vals) != len(COLUMNS):
                    raise IngestionError(f"{path}: malformed row {line!r}")
                entries.append({c: (None if v == "-" else v) for c, v in zip(COLUMNS, vals)})
    root = os.path.dirname(os.path.abspath(path))
    m = Manifest(root, meta.get("name", "dataset"), meta.get("split", "train"),
                 int(meta.get("d_max", 64)), entries)
    missing = [os.path.join(root, e[c]) for e in entries for c in COLUMNS[1:6]
               if e[c] is not None and not os.path.isfile(os.path.join(root, e[c]))]
    if missing:
        raise IngestionError("manifest references missing files:\n  " + "\n  ".join(missing))
    return m


def _load_entry(root, e, verify):
    p = lambda key: os.path.join(root, e[key]) if e[key] else None  # noqa: E731
    spec = _spec_from_inline(e["spec"])
    I_R = load_image(p("right_hr")) if e["right_hr"] else None
    I_r = load_image(p("right_lr"))
    if verify and I_R is not None:
        expect, _ = synthesize_right(I_R, spec)
        if not np.array_equal(expect, I_r):
            raise IngestionError(f"{e['scene_id']}: LR view is not reproduced by its degradation spec")
    gt = load_disparity(p("disp_gt"), "pfm") if e["disp_gt"] else None
    return StereoSample(I_L=load_image(p("left")), I_r=I_r, I_r_up=load_image(p("right_up")),
                        spec=spec, scene_id=e["scene_id"], I_R=I_R, gt_disparity=gt)


def load_samples(manifest, verify=True, strict=True):
    """Load every scene; corrupt entries raise when ``strict`` else are skipped with a warning."""
    if isinstance(manifest, (str, os.PathLike)):
        manifest = load_manifest(manifest)
    out = []
    for e in manifest.entries:
        try:
            out.append(_load_entry(manifest.root, e, verify))
        except (OSError, ValueError, IngestionError) as exc:
            if strict:
                raise
            log.warning("skipping scene %s: %s", e.get("scene_id"), exc)
    return out


def simulate_dataset(src_dir, out_dir, mode="BIC", scale=4, seed=0, name=None, split="train", d_max=None):
    """Degrade every ``src_dir/<scene>/{left,right}.png`` (+ optional ``disp.pfm``)."""
    scenes = sorted(d for d in os.listdir(src_dir) if os.path.isdir(os.path.join(src_dir, d)))
    offenders = []
    pairs = []
    for sid in scenes:
        sd = os.path.join(src_dir, sid)
        left, right = os.path.join(sd, "left.png"), os.path.join(sd, "right.png")
        if not (os.path.isfile(left) and os.path.isfile(right)):
            offenders.append(f"{sid}: missing left.png or right.png")
            continue
        I_L, I_R = load_image(left), load_image(right)
        if I_L.shape != I_R.shape:
            offenders.append(f"{sid}: left {I_L.shape} and right {I_R.shape} differ (not a rectified pair)")
            continue
        disp_path = next((os.path.join(sd, f) for f in ("disp.pfm", "disp_gt.pfm") if os.path.isfile(os.path.join(sd, f))), None)
        pairs.append((sid, I_L, I_R, disp_path))
    if offenders or not pairs:
        raise IngestionError("cannot ingest source scenes:\n  " + "\n  ".join(offenders or ["no scenes found"]))
    rng = np.random.default_rng(seed)
    samples = []
    for sid, I_L, I_R, disp_path in pairs:
        h = I_L.shape[0] - I_L.shape[0] % scale
        w = I_L.shape[1] - I_L.shape[1] % scale
        gt = load_disparity(disp_path).crop(0, 0, h, w) if disp_path else None
        spec = deg.sample_spec(mode, scale, int(rng.integers(2 ** 31)))
        samples.append(make_sample(I_L[:h, :w], I_R[:h, :w], spec, sid, gt))
    if d_max is None:
        d_max = D_MAX_DEFAULTS["synthetic"]
    return save_samples(samples, out_dir, name=name or os.path.basename(os.path.normpath(src_dir)),
                        split=split, d_max=d_max)


# ---------------------------------------------------------------------------
# batching

def _to_tensor(img):
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


def crop_sample(sample, y, x, h, w):
    """Crop every view consistently; y and x must be multiples of the scale."""
    s = sample.spec.scale
    if y % s or x % s or h % s or w % s:
        raise ValueError("crop offsets and size must be multiples of the asymmetric factor")
    c = lambda img: img[y:y + h, x:x + w]  # noqa: E731
    return StereoSample(
        I_L=c(sample.I_L), I_r=sample.I_r[y // s:(y + h) // s, x // s:(x + w) // s],
        I_r_up=c(sample.I_r_up), spec=sample.spec, scene_id=sample.scene_id,
        I_R=None if sample.I_R is None else c(sample.I_R),
        gt_disparity=None if sample.gt_disparity is None else sample.gt_disparity.crop(y, x, h, w))


def collate(samples, dtype=torch.float32):
    batch = {
        "left": torch.stack([_to_tensor(s.I_L) for s in samples]).to(dtype),
        "right_up": torch.stack([_to_tensor(s.I_r_up) for s in samples]).to(dtype),
        "scene_id": [s.scene_id for s in samples],
    }
    if all(s.I_R is not None for s in samples):
        batch["right_hr"] = torch.stack([_to_tensor(s.I_R) for s in samples]).to(dtype)
    if all(s.gt_disparity is not None for s in samples):
        batch["disp"] = torch.stack([torch.from_numpy(s.gt_disparity.data) for s in samples]).to(dtype)
        batch["valid"] = torch.stack([torch.from_numpy(s.gt_disparity.valid_mask) for s in samples])
    return batch


def iterate_batches(samples, batch_size, crop=None, rng=None, shuffle=True, dtype=torch.float32):
    """Yield dict batches with seeded shuffling and aligned random crops."""
    if not samples:
        raise ValueError("no samples to iterate")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    order = rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = []
        for i in order[start:start + batch_size]:
            s = samples[i]
            if crop is not None:
                h, w = s.I_L.shape[:2]
                step = s.spec.scale
                ch, cw = min(crop[0], h), min(crop[1], w)
                y = int(rng.integers(0, (h - ch) // step + 1)) * step
                x = int(rng.integers(0, (w - cw) // step + 1)) * step
                s = crop_sample(s, y, x, ch, cw)
            chunk.append(s)
        yield collate(chunk, dtype)
