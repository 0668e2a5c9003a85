import numpy as np
import pytest

from unwarp.core.flow import (CropRect, EmptyCropError, FlowShapeError,
                              WarpFlow, compose_crop_flow,
                              crop_consistency_error, flow_l1, flow_to_color,
                              identity_flow, max_neighbor_jump, resize_flow,
                              sentinel_flow, validity_mask, warp)
from unwarp.core.raster import ImageRaster
from unwarp.synth.distortion import (DistortionRejectedError,
                                     generate_distortion,
                                     sample_distortion_params)
from tests.helpers import textured_raster


def test_identity_flow():
    flow = identity_flow(2, 2)
    np.testing.assert_array_equal(flow.u, [[0, 1], [0, 1]])
    np.testing.assert_array_equal(flow.v, [[0, 0], [1, 1]])


def test_flow_maps_must_agree():
    with pytest.raises(FlowShapeError):
        WarpFlow(np.zeros((2, 3)), np.zeros((3, 2)))


def test_identity_warp_is_exact(rng):
    image = ImageRaster(rng.uniform(size=(9, 13, 3)))
    out, valid = warp(image, identity_flow(9, 13))
    np.testing.assert_array_equal(out.pixels, image.pixels)
    assert valid.all()


def test_warp_shifted_ramp():
    w = 10
    ramp = np.tile(np.arange(w) / (w - 1), (4, 1))[:, :, None]
    flow = identity_flow(4, w)
    shifted = WarpFlow(flow.u + 1.0, flow.v)
    out, valid = warp(ImageRaster(ramp), shifted)
    expected = (np.arange(w - 1) + 1) / (w - 1)
    np.testing.assert_allclose(out.pixels[:, :w - 1, 0],
                               np.tile(expected, (4, 1)),
                               atol=1e-12)
    assert valid[:, :w - 1].all()


def test_warp_far_outside_is_fill(rng):
    image = ImageRaster(rng.uniform(0.1, 1.0, size=(6, 6, 3)))
    flow = WarpFlow(np.full((6, 6), -100.0), identity_flow(6, 6).v)
    out, valid = warp(image, flow, fill=0.0)
    np.testing.assert_array_equal(out.pixels, 0.0)
    assert not valid.any()
    assert not validity_mask(flow, 6, 6).any()


def test_validity_needs_half_the_support():
    flow = WarpFlow(np.array([[-0.4, -0.6]]), np.zeros((1, 2)))
    np.testing.assert_array_equal(validity_mask(flow, 4, 4), [[True, False]])


def test_resize_identity_flow_stays_identity():
    flow = resize_flow(identity_flow(288, 288), 576, 576, 576, 576)
    expected = identity_flow(576, 576)
    assert np.abs(flow.u - expected.u).max() < 1e-6
    assert np.abs(flow.v - expected.v).max() < 1e-6


def test_resize_constant_shift_scales_with_source():
    identity = identity_flow(64, 64)
    shifted = WarpFlow(identity.u + 2.0, identity.v + 2.0)
    flow = resize_flow(shifted, 128, 128, 128, 128)
    target = identity_flow(128, 128)
    np.testing.assert_allclose(flow.u - target.u, 4.0, atol=1e-9)
    np.testing.assert_allclose(flow.v - target.v, 4.0, atol=1e-9)


def test_resize_to_same_extents_is_a_copy(rng):
    flow = WarpFlow(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
    out = resize_flow(flow, 8, 8, 8, 8)
    np.testing.assert_array_equal(out.u, flow.u)
    np.testing.assert_array_equal(out.v, flow.v)
    assert out.u is not flow.u


def test_full_crop_composes_to_the_full_flow():
    full = identity_flow(40, 48)
    composed = compose_crop_flow(full, CropRect(0, 0, 48, 40))
    np.testing.assert_array_equal(composed.u, full.u)
    np.testing.assert_array_equal(composed.v, full.v)


def test_compose_shifts_into_the_crop_frame():
    full = identity_flow(64, 64)
    composed = compose_crop_flow(full, CropRect(8, 16, 40, 32))
    assert (composed.height, composed.width) == (32, 40)
    np.testing.assert_array_equal(composed.u, identity_flow(32, 40).u)
    np.testing.assert_array_equal(composed.v, identity_flow(32, 40).v)


def test_crop_without_content_is_rejected():
    flow = WarpFlow(np.full((40, 40), -5.0), np.full((40, 40), -5.0))
    with pytest.raises(EmptyCropError):
        compose_crop_flow(flow, CropRect(0, 0, 32, 32))


def test_crop_rect_bounds():
    with pytest.raises(ValueError):
        CropRect(0, 0, 31, 40)
    with pytest.raises(ValueError):
        CropRect(-1, 0, 32, 32)
    with pytest.raises(ValueError):
        CropRect(10, 0, 32, 32).check_inside(32, 32)


def test_crop_consistency_of_an_identity_pair(rng):
    image = ImageRaster(rng.uniform(size=(64, 64, 3)))
    full = identity_flow(64, 64)
    crop = CropRect(8, 8, 40, 40)
    composed = compose_crop_flow(full, crop)
    assert crop_consistency_error(image, full, crop, composed) == 0.0
    with pytest.raises(FlowShapeError):
        crop_consistency_error(image, full, crop, identity_flow(20, 20))


def test_flow_l1():
    gt = identity_flow(5, 6)
    assert flow_l1(gt, gt) == 0.0
    assert flow_l1(WarpFlow(gt.u + 1.0, gt.v), gt) == pytest.approx(0.5)
    with pytest.raises(FlowShapeError):
        flow_l1(identity_flow(5, 5), gt)


def test_sentinel_flow_marks_outside_sources():
    identity = identity_flow(4, 4)
    flow = WarpFlow(identity.u - 2.0, identity.v)
    marked = sentinel_flow(flow, 4, 4)
    assert (marked.u[:, :2] == -1.0).all() and (marked.v[:, :2] == -1.0).all()
    np.testing.assert_array_equal(marked.u[:, 2:], flow.u[:, 2:])


def test_max_neighbor_jump():
    assert max_neighbor_jump(identity_flow(5, 5)) == 1.0
    flow = identity_flow(5, 5)
    flow.u[2, 2] += 20.0
    assert max_neighbor_jump(flow) == pytest.approx(21.0)


def test_flow_color_of_identity_is_black():
    colors = flow_to_color(identity_flow(6, 6))
    np.testing.assert_array_equal(colors.pixels, 0.0)


def test_flow_color_scales_by_the_largest_displacement():
    flow = identity_flow(4, 4)
    flow.u[0, 0] += 4.0
    flow.u[1, 1] += 2.0
    flow.v[2, 2] += 1e-9
    colors = flow_to_color(flow).pixels
    # Rightward displacement is red at full and half brightness.
    np.testing.assert_allclose(colors[0, 0], [1.0, 0.0, 0.0], atol=1e-6)
    np.testing.assert_allclose(colors[1, 1], [0.5, 0.0, 0.0], atol=1e-6)
    assert colors[2, 2].max() < 1e-6


def test_warp_stays_within_the_input_and_fill_range(rng):
    image = ImageRaster(rng.uniform(0.2, 0.8, size=(12, 15, 3)))
    flow = WarpFlow(rng.uniform(-3.0, 17.0, size=(20, 20)),
                    rng.uniform(-3.0, 14.0, size=(20, 20)))
    for fill in (0.0, 0.5, 1.0):
        out, _ = warp(image, flow, fill=fill)
        low = min(image.pixels.min(), fill)
        high = max(image.pixels.max(), fill)
        assert out.pixels.min() >= low - 1e-12
        assert out.pixels.max() <= high + 1e-12

    # Fully supported samples never leave their four corner pixels' range.
    inside = WarpFlow(rng.uniform(0.0, 14.0, size=(20, 20)),
                      rng.uniform(0.0, 11.0, size=(20, 20)))
    out, valid = warp(image, inside)
    assert valid.all()
    x0 = np.floor(inside.u).astype(int)
    y0 = np.floor(inside.v).astype(int)
    corners = np.stack([
        image.pixels[y0, x0], image.pixels[y0, x0 + 1],
        image.pixels[y0 + 1, x0], image.pixels[y0 + 1, x0 + 1]
    ])
    assert (out.pixels >= corners.min(axis=0) - 1e-12).all()
    assert (out.pixels <= corners.max(axis=0) + 1e-12).all()


def test_composed_crop_flows_agree_with_the_full_rectification(rng):
    checked = 0
    for seed in range(200):
        flat = textured_raster(rng, 64, 64)
        try:
            distorted, full, _ = generate_distortion(
                flat, sample_distortion_params(seed, 64, 64))
        except DistortionRejectedError:
            continue
        width, height = rng.integers(32, 65, size=2)
        crop = CropRect(int(rng.integers(0, 65 - width)),
                        int(rng.integers(0, 65 - height)), int(width),
                        int(height))
        composed = compose_crop_flow(full, crop)
        error = crop_consistency_error(distorted, full, crop, composed)
        assert error < 2e-2, f"seed {seed}, crop {crop}"
        checked += 1
        if checked == 100:
            break
    assert checked == 100
