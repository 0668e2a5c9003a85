import numpy as np
import pytest

from unwarp.core.raster import ImageRaster
from unwarp.metrics.ssim import (ImageTooSmallError, black_region_mask,
                                 msssim, msssim_masked, protocol_resize, ssim)
from tests.helpers import textured_gray, textured_raster


@pytest.mark.parametrize("extents, expected", [
    ((748, 800), (748, 800)),
    ((1496, 1600), (748, 800)),
    ((100, 100), (773, 773)),
])
def test_protocol_resize(extents, expected):
    img = ImageRaster(np.zeros(extents + (3,)))
    resized = protocol_resize(img)
    assert (resized.height, resized.width) == expected
    assert resized.height * resized.width <= 598_400


def test_identical_images_score_one(rng):
    gray = textured_gray(rng, 200, 200)
    assert ssim(gray, gray).ssim == pytest.approx(1.0)
    assert msssim(gray, gray) == pytest.approx(1.0)


def test_unrelated_noise_scores_low(rng):
    a = rng.uniform(size=(200, 200))
    b = rng.uniform(size=(200, 200))
    assert msssim(a, b) < 0.2


def test_msssim_is_symmetric(rng):
    for _ in range(3):
        a = textured_gray(rng, 180, 190)
        b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0.0, 1.0)
        assert msssim(a, b) == pytest.approx(msssim(b, a), abs=1e-9)
        first, second = rng.uniform(size=(2,) + a.shape)
        assert 0.0 <= msssim(first, second) < 0.2
        assert msssim(first, second) == pytest.approx(msssim(second, first),
                                                      abs=1e-9)


def test_too_small_for_five_scales():
    with pytest.raises(ImageTooSmallError, match="176"):
        msssim(np.zeros((100, 300)), np.zeros((100, 300)))
    with pytest.raises(ImageTooSmallError):
        ssim(np.zeros((5, 30)), np.zeros((5, 30)))
    with pytest.raises(ValueError):
        ssim(np.zeros((20, 20)), np.zeros((20, 21)))


def test_black_region_from_validity(rng):
    rectified = textured_raster(rng, 20, 30)
    validity = np.ones((20, 30), dtype=bool)
    validity[:, :4] = False
    np.testing.assert_array_equal(black_region_mask(rectified, validity),
                                  ~validity)
    with pytest.raises(ValueError):
        black_region_mask(rectified, validity[:, 1:])


def test_black_region_only_counts_border_connected_fill(rng):
    pixels = textured_raster(rng, 20, 30).pixels.copy()
    pixels[:, 25:] = 0.0
    pixels[8:12, 8:12] = 0.0
    mask = black_region_mask(ImageRaster(pixels))
    expected = np.zeros((20, 30), dtype=bool)
    expected[:, 25:] = True
    np.testing.assert_array_equal(mask, expected)


def test_masked_score_ignores_the_black_region(rng):
    gt = textured_raster(rng, 200, 200)
    pixels = gt.pixels.copy()
    pixels[:, :40] = rng.uniform(size=(200, 40, 3))
    rectified = ImageRaster(pixels)
    mask = np.zeros((200, 200), dtype=bool)
    mask[:, :40] = True

    assert msssim_masked(rectified, gt, mask, area=40_000) == pytest.approx(1.0)
    assert msssim_masked(rectified, gt, None, area=40_000) < 0.99
    assert msssim_masked(rectified, gt, np.zeros_like(mask), area=40_000) == \
        msssim_masked(rectified, gt, None, area=40_000)
