'''
SSIM, multi-scale SSIM and their masked variant.

Images are compared in gray after being resized to a fixed pixel area, so
scores from rectifications of different resolutions stay comparable.
'''
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from unwarp.core.raster import ImageRaster, resize_raster, to_gray

PROTOCOL_AREA = 598_400

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 1.0

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_MIN_SIDE = WINDOW_SIZE * 2**(len(MSSSIM_WEIGHTS) - 1)


class ImageTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class SsimResult:
    ssim: float
    luminance: float
    contrast_structure: float


def protocol_resize(img: ImageRaster, area: int = PROTOCOL_AREA) -> ImageRaster:
    '''
    Bilinear resize to (floor(s·H), floor(s·W)) with s = sqrt(area/(H·W)),
    which keeps the aspect ratio and lands on (just under) `area` pixels.
    '''
    assert img.height > 0 and img.width > 0
    scale = math.sqrt(area / (img.height * img.width))
    out_h = max(1, math.floor(scale * img.height + 1e-9))
    out_w = max(1, math.floor(scale * img.width + 1e-9))
    return resize_raster(img, out_h, out_w)


def gaussian_window() -> np.ndarray:
    offsets = np.arange(WINDOW_SIZE) - WINDOW_SIZE // 2
    window = np.exp(-offsets**2 / (2 * WINDOW_SIGMA**2))
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> SsimResult:
    '''
    Mean SSIM of two gray maps over the positions where the 11×11 Gaussian
    window fits entirely ("valid" region), along with the mean luminance
    and contrast-structure terms.
    '''
    if a.shape != b.shape:
        raise ValueError(f"SSIM needs equal extents, got {a.shape} and "
                         f"{b.shape}")
    if min(a.shape) < WINDOW_SIZE:
        raise ImageTooSmallError(
            f"SSIM needs extents >= {WINDOW_SIZE}, got {a.shape}")
    a = a.astype(np.float64)
    b = b.astype(np.float64)

    mu_a = _filter(a)
    mu_b = _filter(b)
    var_a = _filter(a * a) - mu_a * mu_a
    var_b = _filter(b * b) - mu_b * mu_b
    cov = _filter(a * b) - mu_a * mu_b

    c1 = (K1 * DYNAMIC_RANGE)**2
    c2 = (K2 * DYNAMIC_RANGE)**2
    luminance = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    contrast_structure = (2 * cov + c2) / (var_a + var_b + c2)
    return SsimResult(ssim=float((luminance * contrast_structure).mean()),
                      luminance=float(luminance.mean()),
                      contrast_structure=float(contrast_structure.mean()))


def msssim(a: np.ndarray, b: np.ndarray) -> float:
    '''
    Five-scale SSIM: contrast-structure at every scale and luminance at the
    coarsest, combined as a weighted product. The weights are renormalized
    by their sum (1.0001). Negative contrast-structure terms count as zero.
    '''
    if a.shape != b.shape:
        raise ValueError(f"MS-SSIM needs equal extents, got {a.shape} and "
                         f"{b.shape}")
    if min(a.shape) < MSSSIM_MIN_SIDE:
        raise ImageTooSmallError(
            f"MS-SSIM needs a short side of at least {MSSSIM_MIN_SIDE} px "
            f"for {len(MSSSIM_WEIGHTS)} scales, got {a.shape}")

    weights = np.array(MSSSIM_WEIGHTS) / sum(MSSSIM_WEIGHTS)
    score = 1.0
    for level, weight in enumerate(weights):
        result = ssim(a, b)
        score *= max(result.contrast_structure, 0.0)**weight
        if level == len(weights) - 1:
            score *= max(result.luminance, 0.0)**weight
        else:
            a, b = _halve(a), _halve(b)
    return float(score)


def black_region_mask(rectified: ImageRaster,
                      validity: np.ndarray | None = None) -> np.ndarray:
    '''
    The rectified image's black (redundant) region: the complement of the
    validity mask when there is one, otherwise the fill-valued pixels
    (every channel <= 1/255) that connect to the image border.
    '''
    if validity is not None:
        if validity.shape != (rectified.height, rectified.width):
            raise ValueError(f"Validity mask {validity.shape} does not match "
                             f"a {rectified.height}×{rectified.width} image")
        return ~validity

    dark = (rectified.pixels <= 1.0 / 255.0).all(axis=-1)
    labels, _ = ndimage.label(dark)
    border = np.concatenate(
        [labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    border_labels = np.unique(border[border > 0])
    return np.isin(labels, border_labels)


def prepare_pair(rectified: ImageRaster,
                 gt: ImageRaster,
                 mask: np.ndarray | None = None,
                 area: int = PROTOCOL_AREA) -> tuple[np.ndarray, np.ndarray]:
    '''
    Aligns the ground truth to the rectified extents, zeroes both images
    under `mask`, resizes both to the protocol area and converts to gray.
    '''
    gt = resize_raster(gt, rectified.height, rectified.width)
    if mask is not None:
        keep = ~mask[:, :, None]
        rectified = ImageRaster(np.where(keep, rectified.pixels, 0.0))
        gt = ImageRaster(np.where(keep, gt.pixels, 0.0))
    return (to_gray(protocol_resize(rectified, area).pixels),
            to_gray(protocol_resize(gt, area).pixels))


def msssim_masked(rectified: ImageRaster,
                  gt: ImageRaster,
                  mask: np.ndarray | None,
                  area: int = PROTOCOL_AREA) -> float:
    return msssim(*prepare_pair(rectified, gt, mask, area))


#
# Private helpers.
#


def _filter(image: np.ndarray) -> np.ndarray:
    window = gaussian_window()
    out = ndimage.correlate1d(image, window, axis=0, mode="constant")
    out = ndimage.correlate1d(out, window, axis=1, mode="constant")
    radius = WINDOW_SIZE // 2
    return out[radius:-radius, radius:-radius]


def _halve(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[0] // 2, image.shape[1] // 2
    return image[:2 * h, :2 * w].reshape(h, 2, w, 2).mean(axis=(1, 3))
