import numpy as np
from scipy import ndimage

from unwarp.core.raster import ImageRaster


def textured_gray(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    '''Smooth noise in [0.2, 0.9]: no flat areas and no black pixels.'''
    noise = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=1.5)
    noise = (noise - noise.min()) / np.ptp(noise)
    return 0.2 + 0.7 * noise


def textured_raster(rng: np.random.Generator, h: int, w: int) -> ImageRaster:
    gray = textured_gray(rng, h, w)
    return ImageRaster(
        np.stack([gray, gray[::-1].copy(), gray[:, ::-1].copy()], axis=-1))
