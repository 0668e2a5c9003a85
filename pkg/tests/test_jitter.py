import numpy as np

from unwarp.core.raster import ImageRaster
from unwarp.synth.jitter import hsv_jitter, shift_hsv


def _solid(rgb: tuple[float, float, float]) -> ImageRaster:
    return ImageRaster(np.broadcast_to(np.array(rgb), (4, 4, 3)).copy())


def test_zero_magnitudes_keep_the_image(rng):
    image = ImageRaster(rng.uniform(size=(6, 6, 3)))
    out = hsv_jitter(image, 0.0, 0.0, 0.0, seed=3)
    np.testing.assert_allclose(out.pixels, image.pixels, atol=1e-6)


def test_value_shift_on_gray():
    out = shift_hsv(_solid((0.5, 0.5, 0.5)), 0.0, 0.0, 0.1)
    np.testing.assert_allclose(out.pixels, 0.6, atol=1e-6)


def test_hue_shift_turns_red_into_green():
    out = shift_hsv(_solid((1.0, 0.0, 0.0)), 1 / 3, 0.0, 0.0)
    np.testing.assert_allclose(out.pixels[0, 0], [0.0, 1.0, 0.0], atol=1e-6)


def test_saturation_and_value_are_clamped():
    out = shift_hsv(_solid((0.9, 0.2, 0.2)), 0.0, 0.5, 0.5)
    np.testing.assert_allclose(out.pixels[0, 0], [1.0, 0.0, 0.0], atol=1e-6)


def test_jitter_is_seeded_and_bounded(rng):
    image = ImageRaster(rng.uniform(0.2, 0.8, size=(6, 6, 3)))
    first = hsv_jitter(image, seed=7)
    np.testing.assert_array_equal(first.pixels,
                                  hsv_jitter(image, seed=7).pixels)
    assert not np.array_equal(first.pixels, hsv_jitter(image, seed=8).pixels)
    assert first.pixels.min() >= 0.0 and first.pixels.max() <= 1.0
