'''HSV color jitter for illumination and paper-color variation.'''
import numpy as np

from unwarp.core.raster import ImageRaster, hsv_to_rgb, rgb_to_hsv

DEFAULT_MAX_DH = 0.02
DEFAULT_MAX_DS = 0.1
DEFAULT_MAX_DV = 0.1


def shift_hsv(img: ImageRaster, dh: float, ds: float,
              dv: float) -> ImageRaster:
    '''
    Adds fixed offsets in HSV space. Hue is in turns and wraps around;
    saturation and value are clamped to [0, 1].
    '''
    assert img.channels == "rgb", "HSV jitter needs an RGB raster"
    hsv = rgb_to_hsv(img.pixels)
    hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] + ds, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] + dv, 0.0, 1.0)
    return ImageRaster(hsv_to_rgb(hsv))


def hsv_jitter(img: ImageRaster,
               max_dh: float = DEFAULT_MAX_DH,
               max_ds: float = DEFAULT_MAX_DS,
               max_dv: float = DEFAULT_MAX_DV,
               seed: int | np.random.Generator = 0) -> ImageRaster:
    '''Shifts hue, saturation and value by uniform offsets within ±max.'''
    for magnitude in (max_dh, max_ds, max_dv):
        assert 0.0 <= magnitude <= 1.0, f"Bad jitter magnitude {magnitude}"
    rng = np.random.default_rng(seed)
    dh, ds, dv = rng.uniform(-1.0, 1.0, size=3) * (max_dh, max_ds, max_dv)
    return shift_hsv(img, float(dh), float(ds), float(dv))
