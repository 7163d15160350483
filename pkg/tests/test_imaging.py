import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from poserefine.field import TemplateFrame
from poserefine.geometry import DegenerateGeometryError
from poserefine.imaging import (
    BlurSpec,
    bilinear_sample,
    build_blurred_template,
    draw_segments,
    gaussian_blur,
    gaussian_kernel,
    gaussian_sigma,
    read_png,
    threshold_mask,
    warp_to_topview,
    write_png,
)

# world meters == template pixels, world origin at pixel (0, 0)
UNIT = TemplateFrame(1.0, (0.0, 0.0), 40, 30)


def dense_blur(img, size):
    """Oracle: explicit 2D kernel, replicate padding, direct summation."""
    sigma = 0.3 * ((size - 1) * 0.5 - 1) + 0.8
    r = size // 2
    x = np.arange(-r, r + 1)
    k2 = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sigma**2))
    k2 /= k2.sum()
    pad = np.pad(img, r, mode="edge")
    out = np.zeros_like(img)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            out[i, j] = (pad[i : i + size, j : j + size] * k2).sum()
    return out


def test_sigma_convention():
    assert gaussian_sigma(3) == pytest.approx(0.8)
    assert gaussian_sigma(5) == pytest.approx(1.1)
    assert gaussian_sigma(25) == pytest.approx(4.1)
    k = gaussian_kernel(7)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(k, k[::-1])


def test_blur_identity_sizes():
    img = np.random.default_rng(0).random((9, 11))
    for size in (0, 1):
        out = gaussian_blur(img, size)
        np.testing.assert_array_equal(out, img)
        assert out is not img


@pytest.mark.parametrize("size", [2, 4, -1])
def test_blur_rejects_bad_sizes(size):
    with pytest.raises(ValueError):
        gaussian_blur(np.zeros((5, 5)), size)


def test_blur_single_pixel_against_dense_oracle():
    img = np.zeros((15, 15))
    img[7, 7] = 1.0
    out = gaussian_blur(img, 5)
    assert out.sum() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(out, out[::-1, :], atol=1e-15)
    np.testing.assert_allclose(out, out[:, ::-1], atol=1e-15)
    np.testing.assert_allclose(out, out.T, atol=1e-15)
    np.testing.assert_allclose(out, dense_blur(img, 5), atol=1e-12)


@pytest.mark.parametrize("size", [3, 9, 25])
def test_blur_random_against_dense_oracle_with_edges(size):
    img = np.random.default_rng(size).random((17, 13))
    np.testing.assert_allclose(gaussian_blur(img, size), dense_blur(img, size), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.sampled_from([3, 5, 9, 17]))
def test_blur_preserves_constants(c, size):
    np.testing.assert_allclose(gaussian_blur(np.full((12, 10), c), size), c, atol=1e-9)


def test_blur_preserves_interior_mass():
    img = np.zeros((60, 60))
    img[20:40, 25:35] = np.random.default_rng(1).random((20, 10))
    assert gaussian_blur(img, 13).sum() == pytest.approx(img.sum(), abs=1e-6)


def test_blur_spec_sizes():
    assert BlurSpec(0).sizes == ()
    assert BlurSpec(1, 7).sizes == (7,)
    assert BlurSpec(2, 5).sizes == (0, 5)
    assert BlurSpec(3, 5).sizes == (0, 5, 9)
    assert BlurSpec(7, 5).sizes == (0, 5, 9, 13, 17, 21, 25)
    assert all(s % 2 == 1 for s in BlurSpec(15, 7).sizes if s)
    with pytest.raises(ValueError):
        BlurSpec(3, 4)
    with pytest.raises(ValueError):
        BlurSpec(-1)


def test_template_n0_unchanged_and_clipped():
    raster = np.zeros((40, 40))
    raster[20, 5:35] = 1.0
    np.testing.assert_array_equal(build_blurred_template(raster, BlurSpec(0)), raster)
    t = build_blurred_template(raster, BlurSpec(7, 5))
    assert t.max() <= 1.0 and t.min() >= 0.0
    # the size-0 term is the raster itself, so line pixels saturate
    assert np.all(t[20, 8:32] == 1.0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 12), elements=st.floats(0, 1)), st.integers(0, 6), st.sampled_from([3, 5, 7]))
def test_template_range_and_monotone(raster, n, base):
    t = build_blurred_template(raster, BlurSpec(n, base))
    assert t.min() >= 0.0 and t.max() <= 1.0
    if n >= 2:
        # sum of non-negative terms that includes the raw raster
        assert np.all(t >= np.minimum(raster, 1.0) - 1e-9)


def test_threshold_strict():
    np.testing.assert_array_equal(threshold_mask(np.array([[0.4, 0.6], [0.5, 1.0]])), [[0, 1], [0, 1]])
    np.testing.assert_array_equal(threshold_mask(np.zeros((3, 3))), np.zeros((3, 3)))


def test_bilinear_sample_exact_on_grid_and_zero_outside():
    src = np.arange(12, dtype=float).reshape(3, 4)
    v, u = np.mgrid[0:3, 0:4].astype(float)
    np.testing.assert_array_equal(bilinear_sample(src, u, v), src)
    assert bilinear_sample(src, np.array([1.5]), np.array([0.5]))[0] == pytest.approx((1 + 2 + 5 + 6) / 4)
    out = bilinear_sample(src, np.array([-0.01, 3.01, 1.0, 3.0]), np.array([1.0, 1.0, 2.01, 2.0]))
    np.testing.assert_array_equal(out, [0, 0, 0, 11])


def test_warp_identity_chain():
    src = np.random.default_rng(2).random((30, 40))
    out = warp_to_topview(src, np.eye(3), UNIT, 40, 30)
    np.testing.assert_allclose(out, src, atol=1e-6)


@pytest.mark.parametrize("dx,dy", [(3, 0), (0, -2), (5, 4), (-7, 1)])
def test_warp_integer_translation(dx, dy):
    src = np.random.default_rng(3).random((30, 40))
    h = np.array([[1, 0, dx], [0, 1, dy], [0, 0, 1.0]])
    out = warp_to_topview(src, h, UNIT, 40, 30)
    # nearest-pixel oracle: output(u, v) = src(u + dx, v + dy)
    for v in range(30):
        for u in range(40):
            su, sv = u + dx, v + dy
            expected = src[sv, su] if 0 <= su < 40 and 0 <= sv < 30 else 0.0
            assert out[v, u] == expected


def test_warp_round_trip():
    rng = np.random.default_rng(4)
    yy, xx = np.mgrid[0:80, 0:100]
    src = 0.5 + 0.25 * np.sin(xx / 7.0) * np.cos(yy / 5.0) + 0.05 * rng.random((80, 100))
    h = np.array([[1.05, 0.08, -3.0], [-0.04, 0.97, 2.0], [2e-4, -1e-4, 1.0]])
    frame = TemplateFrame(1.0, (0.0, 0.0), 100, 80)
    once = warp_to_topview(src, h, frame, 100, 80)
    back = warp_to_topview(once, np.linalg.inv(h), frame, 100, 80)
    interior = (slice(15, 65), slice(15, 85))
    assert np.abs(back[interior] - src[interior]).mean() < 0.05


def test_warp_behind_camera_reads_zero():
    src = np.ones((10, 10))
    # homogeneous scale w = 1 - x: non-positive for x >= 1
    h = np.array([[0, 0, 5.0], [0, 0, 5.0], [-1.0, 0, 1.0]])
    h = h + np.diag([1e-3, 1e-3, 0])
    out = warp_to_topview(src, h, TemplateFrame(1.0, (0.0, 0.0), 4, 2), 4, 2)
    assert np.all(out[:, 1:] == 0)


def test_warp_rejects_singular():
    with pytest.raises(DegenerateGeometryError):
        warp_to_topview(np.ones((5, 5)), np.zeros((3, 3)), UNIT, 4, 4)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (8, 9), elements=st.floats(0.2, 0.9)), st.floats(-0.3, 0.3), st.floats(0.7, 1.3))
def test_warp_values_within_source_range(src, shear, zoom):
    h = np.array([[zoom, shear, 0.5], [0.1, zoom, -0.5], [0.0, 0.0, 1.0]])
    out = warp_to_topview(src, h, TemplateFrame(1.0, (0.0, 0.0), 12, 12), 12, 12)
    inside = out != 0
    assert np.all(out[inside] >= src.min() - 1e-12)
    assert np.all(out[inside] <= src.max() + 1e-12)


def test_draw_segments_brute_force():
    canvas = np.zeros((20, 30))
    a, b, r = np.array([[3.2, 4.1]]), np.array([[25.7, 14.6]]), 1.3
    draw_segments(canvas, a, b, r)
    for v in range(20):
        for u in range(30):
            p = np.array([u, v], float)
            d = b[0] - a[0]
            s = np.clip((p - a[0]) @ d / (d @ d), 0, 1)
            inside = np.linalg.norm(p - (a[0] + s * d)) <= r
            assert canvas[v, u] == float(inside)


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(5).random((7, 9))
    write_png(tmp_path / "a.png", img, bits=16)
    np.testing.assert_allclose(read_png(tmp_path / "a.png"), img, atol=0.5 / 65535 + 1e-12)
    write_png(tmp_path / "b.png", img)
    back = read_png(tmp_path / "b.png")
    np.testing.assert_array_equal(back, np.floor(img * 255 + 0.5) / 255)
    # half-up rounding: 0.5/255 lands on 1
    write_png(tmp_path / "c.png", np.array([[0.5 / 255, 1.0]]))
    np.testing.assert_array_equal(read_png(tmp_path / "c.png") * 255, [[1, 255]])
