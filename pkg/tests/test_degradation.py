import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asymstereo.degradation import (DegradationSpec, GaussianKernelSpec, degrade,
                                    make_gaussian_kernel, sample_spec, upsample_bicubic)


def brute_conv_subsample(img, kernel, s):
    """Direct convolution with numpy-style reflect padding, then every s-th pixel."""
    r = kernel.shape[0] // 2
    pad = np.pad(img, ((r, r), (r, r), (0, 0)), mode="reflect")
    h, w, c = img.shape
    flipped = kernel[::-1, ::-1]
    out = np.zeros((h, w, c))
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                out[y, x, ch] = np.sum(pad[y:y + 2 * r + 1, x:x + 2 * r + 1, ch] * flipped)
    off = (s - 1) // 2
    return out[off::s, off::s]


def laplacian_energy(img):
    g = img[..., 0]
    lap = g[1:-1, :-2] + g[1:-1, 2:] + g[:-2, 1:-1] + g[2:, 1:-1] - 4 * g[1:-1, 1:-1]
    return np.mean(lap ** 2)


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.2, math.pi / 2, 2.9])
def test_isotropic_kernel_rotation_invariant(theta):
    a = make_gaussian_kernel(GaussianKernelSpec(1.3, 1.3, theta))
    b = make_gaussian_kernel(GaussianKernelSpec(1.3, 1.3, 0.0))
    assert np.allclose(a, b, atol=1e-15)


@pytest.mark.parametrize("sx,sy,theta", [(0.6, 0.6, 0.0), (2.0, 0.5, 1.0), (3.0, 0.7, 2.5)])
def test_kernel_normalized_and_peaked(sx, sy, theta):
    k = make_gaussian_kernel(GaussianKernelSpec(sx, sy, theta))
    assert abs(k.sum() - 1) < 1e-12
    r = k.shape[0] // 2
    assert k[r, r] == k.max()
    assert k.shape[0] == 2 * math.ceil(3 * max(sx, sy)) + 1


def test_kernel_quarter_turn_swaps_sigmas():
    a = make_gaussian_kernel(GaussianKernelSpec(2.0, 0.5, math.pi / 2, size=13))
    b = make_gaussian_kernel(GaussianKernelSpec(0.5, 2.0, 0.0, size=13))
    assert np.max(np.abs(a - b)) < 1e-12


def test_even_kernel_size_rejected():
    with pytest.raises(ValueError):
        GaussianKernelSpec(1.0, 1.0, 0.0, size=4)
    spec = GaussianKernelSpec(1.0, 1.0, 0.0, size=5)
    spec.size = 6
    with pytest.raises(ValueError):
        make_gaussian_kernel(spec)


def test_spec_invariants():
    with pytest.raises(ValueError):
        DegradationSpec(scale=5)
    with pytest.raises(ValueError):
        DegradationSpec(scale=4, mode="IG")
    with pytest.raises(ValueError):
        DegradationSpec(scale=4, mode="BIC", kernel=GaussianKernelSpec(1, 1))
    with pytest.raises(ValueError):
        DegradationSpec(scale=4, mode="IG_JPEG", kernel=GaussianKernelSpec(1, 1))
    with pytest.raises(ValueError):
        DegradationSpec(scale=4, mode="IG_JPEG", kernel=GaussianKernelSpec(1, 1), jpeg_quality=4)


@pytest.mark.parametrize("mode", ["BIC", "IG", "AG", "IG_JPEG", "AG_JPEG"])
def test_spec_text_round_trip(mode):
    spec = sample_spec(mode, 4, 123)
    assert DegradationSpec.from_text(spec.to_text()) == spec


def test_sampled_ranges():
    for seed in range(50):
        ig = sample_spec("IG_JPEG", 2, seed)
        assert 0.6 <= ig.kernel.sigma_x <= 2.4 and ig.kernel.isotropic
        assert 30 <= ig.jpeg_quality <= 90
        ag = sample_spec("AG", 2, seed)
        assert 0.6 <= ag.kernel.sigma_x <= 3.0 and 0.6 <= ag.kernel.sigma_y <= 3.0
        assert 0 <= ag.kernel.theta < math.pi


@pytest.mark.parametrize("mode", ["BIC", "IG", "AG"])
@pytest.mark.parametrize("s", [2, 3, 4, 8])
def test_dc_preservation(mode, s):
    img = np.full((24, 48, 3), 0.37)
    lr = degrade(img, sample_spec(mode, s, 7))
    assert lr.shape == (24 // s, 48 // s, 3)
    assert np.max(np.abs(lr - 0.37)) < 1e-6
    assert np.max(np.abs(upsample_bicubic(lr, s) - 0.37)) < 1e-6


def test_shape_s2():
    assert degrade(np.random.default_rng(0).random((8, 8, 1)), DegradationSpec(2)).shape == (4, 4, 1)


def test_indivisible_rejected():
    with pytest.raises(ValueError):
        degrade(np.zeros((10, 12, 1)), DegradationSpec(4))


def test_ig_matches_brute_force():
    img = np.random.default_rng(11).random((32, 32, 1))
    spec = DegradationSpec(4, "IG", GaussianKernelSpec(0.8, 0.8))
    expect = brute_conv_subsample(img, make_gaussian_kernel(spec.kernel), 4)
    assert np.max(np.abs(degrade(img, spec) - expect)) < 1e-10


def test_ag_matches_brute_force_rgb():
    img = np.random.default_rng(12).random((16, 24, 3))
    spec = DegradationSpec(2, "AG", GaussianKernelSpec(1.7, 0.6, 0.4))
    expect = np.clip(brute_conv_subsample(img, make_gaussian_kernel(spec.kernel), 2), 0, 1)
    assert np.max(np.abs(degrade(img, spec) - expect)) < 1e-10


def test_jpeg_output_on_8bit_grid():
    img = np.random.default_rng(3).random((32, 32, 3))
    lr = degrade(img, sample_spec("AG_JPEG", 2, 5))
    assert np.array_equal(lr, np.round(lr * 255) / 255)
    assert lr.min() >= 0 and lr.max() <= 1


@pytest.mark.parametrize("mode", ["BIC", "IG_JPEG", "AG_JPEG"])
def test_determinism(mode):
    img = np.random.default_rng(4).random((32, 32, 3))
    spec = sample_spec(mode, 4, 99)
    assert np.array_equal(degrade(img, spec), degrade(img, sample_spec(mode, 4, 99)))


def test_upsample_identity():
    lr = np.random.default_rng(5).random((9, 13, 3))
    assert np.array_equal(upsample_bicubic(lr, 1), lr)


def test_upsample_reproduces_linear_ramp():
    h, w = 12, 16
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    a, b, c = 0.013, 0.021, 0.2
    ramp = (a * xx + b * yy + c)[:, :, None]
    up = upsample_bicubic(ramp, 2)
    # output pixel centres map to input coordinate (i + 0.5) / 2 - 0.5
    Y, X = np.mgrid[0:2 * h, 0:2 * w].astype(float)
    expect = a * ((X + 0.5) / 2 - 0.5) + b * ((Y + 0.5) / 2 - 0.5) + c
    inner = (slice(4, -4), slice(4, -4))
    assert np.max(np.abs(up[..., 0][inner] - expect[inner])) < 1e-6
    # and on the input sample positions themselves, between pixels 2i and 2i+1
    assert np.allclose(0.5 * (up[0::2, 0::2] + up[1::2, 1::2])[2:-2, 2:-2], ramp[2:-2, 2:-2], atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(["BIC", "IG", "AG", "IG_JPEG", "AG_JPEG"]),
       st.sampled_from([2, 4]))
def test_outputs_in_unit_range(seed, mode, s):
    img = np.random.default_rng(seed).random((16, 16, 3))
    lr = degrade(img, sample_spec(mode, s, seed))
    up = upsample_bicubic(lr, s)
    for arr in (lr, up):
        assert arr.min() >= 0.0 and arr.max() <= 1.0


def test_larger_sigma_removes_high_frequencies():
    rng = np.random.default_rng(6)
    sigmas = [0.6, 1.0, 1.6, 2.4]
    for _ in range(5):
        img = rng.random((64, 64, 1))
        e = [laplacian_energy(degrade(img, DegradationSpec(2, "IG", GaussianKernelSpec(s, s)))) for s in sigmas]
        assert all(x > y for x, y in zip(e, e[1:]))
