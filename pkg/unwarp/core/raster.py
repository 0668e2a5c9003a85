import io
import typing as t
from dataclasses import dataclass

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

# ITU-R BT.601 luma weights.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ImageRaster:
    '''
    An H×W×C raster of unit-interval intensities. Three channels are RGB,
    one channel is gray.
    '''
    pixels: np.ndarray

    def __post_init__(self) -> None:
        assert self.pixels.ndim == 3 and self.pixels.shape[2] in (1, 3), \
            f"Expected an H×W×1 or H×W×3 raster, got {self.pixels.shape}"

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> str:
        return "rgb" if self.pixels.shape[2] == 3 else "gray"

    def to_gray(self) -> np.ndarray:
        '''Returns an H×W gray map.'''
        return to_gray(self.pixels)

    @staticmethod
    def from_gray(gray: np.ndarray) -> "ImageRaster":
        return ImageRaster(np.asarray(gray, dtype=np.float64)[:, :, None])


def to_gray(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim == 2:
        return pixels
    if pixels.shape[2] == 1:
        return pixels[:, :, 0]
    r, g, b = GRAY_WEIGHTS
    return r * pixels[:, :, 0] + g * pixels[:, :, 1] + b * pixels[:, :, 2]


#
# Resampling.
#


def sample_bilinear(pixels: np.ndarray,
                    x: np.ndarray,
                    y: np.ndarray,
                    fill: float | None = None) -> np.ndarray:
    '''
    Bilinear samples of the two leading axes of `pixels` at the points
    (x, y). With `fill`, support outside the raster contributes `fill`;
    without it the raster is extended by its edge values.
    '''
    coords = np.stack([np.asarray(y, dtype=np.float64),
                       np.asarray(x, dtype=np.float64)])
    planes = np.asarray(pixels, dtype=np.float64).reshape(pixels.shape[:2] +
                                                          (-1,))
    mode = "nearest" if fill is None else "grid-constant"
    sampled = [
        ndimage.map_coordinates(planes[:, :, k],
                                coords,
                                order=1,
                                mode=mode,
                                cval=0.0 if fill is None else fill)
        for k in range(planes.shape[2])
    ]
    return np.stack(sampled, axis=-1).reshape(coords.shape[1:] +
                                              pixels.shape[2:])


def source_positions(n_in: int, n_out: int) -> np.ndarray:
    '''Pixel-center aligned input coordinates of `n_out` output samples.'''
    assert n_in >= 1 and n_out >= 1
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def interpolation_matrix(n_in: int,
                         n_out: int,
                         extrapolate: bool = False) -> np.ndarray:
    '''
    Dense (n_out, n_in) linear interpolation at `source_positions`, for the
    differentiable ops. Positions beyond the outermost input centers are
    clamped, or linearly extrapolated from the two outermost samples.
    '''
    if n_in == n_out:
        return np.eye(n_in)
    matrix = np.zeros((n_out, n_in))
    if n_in == 1:
        matrix[:, 0] = 1.0
        return matrix

    s = source_positions(n_in, n_out)
    if not extrapolate:
        s = np.clip(s, 0.0, n_in - 1.0)
    i0 = np.clip(np.floor(s).astype(np.int64), 0, n_in - 2)
    w1 = s - i0
    rows = np.arange(n_out)
    matrix[rows, i0] += 1.0 - w1
    matrix[rows, i0 + 1] += w1
    return matrix


def resample(array: np.ndarray,
             out_h: int,
             out_w: int,
             extrapolate: bool = False) -> np.ndarray:
    '''
    Linear resampling of the two leading axes of a map (flow coordinates,
    displacement fields). Outside the outermost input centers values are
    clamped or, with `extrapolate`, continued linearly. Equal extents return
    an exact copy.
    '''
    in_h, in_w = array.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return array.copy()

    rows = source_positions(in_h, out_h)
    cols = source_positions(in_w, out_w)
    if extrapolate:
        # Upsampling reaches at most half a pixel past the outermost centers.
        array = _pad_linear(_pad_linear(array, axis=0), axis=1)
        rows, cols = rows + 1.0, cols + 1.0
    y, x = np.meshgrid(rows, cols, indexing="ij")
    return sample_bilinear(array, x, y)


def resize_raster(raster: ImageRaster, out_h: int, out_w: int) -> ImageRaster:
    if (raster.height, raster.width) == (out_h, out_w):
        return ImageRaster(raster.pixels.copy())
    resized = cv2.resize(np.ascontiguousarray(raster.pixels),
                         (out_w, out_h),
                         interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[:, :, None]
    return ImageRaster(resized)


def resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    '''Boolean masks are resampled as coverage and thresholded at one half.'''
    if mask.shape == (out_h, out_w):
        return mask.copy()
    coverage = resize_raster(ImageRaster.from_gray(mask.astype(np.float64)),
                             out_h, out_w)
    return coverage.pixels[:, :, 0] >= 0.5


#
# Netpbm I/O.
#


def encode_ppm(raster: ImageRaster) -> bytes:
    '''8-bit binary PPM (P6) for RGB rasters, PGM (P5) for gray ones.'''
    quantized = np.round(np.clip(raster.pixels, 0.0, 1.0) * 255.0).astype(
        np.uint8)
    if raster.channels == "rgb":
        image = Image.fromarray(quantized)
    else:
        image = Image.fromarray(quantized[:, :, 0])
    buffer = io.BytesIO()
    image.save(buffer, format="PPM")
    return buffer.getvalue()


def encode_mask(mask: np.ndarray) -> bytes:
    return encode_ppm(ImageRaster.from_gray(mask.astype(np.float64)))


def load_raster(path: str, mode: t.Literal["RGB", "L"] = "RGB") -> ImageRaster:
    with Image.open(path) as image:
        pixels = np.asarray(image.convert(mode), dtype=np.float64) / 255.0
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return ImageRaster(pixels)


def load_mask(path: str) -> np.ndarray:
    return load_raster(path, mode="L").pixels[:, :, 0] >= 0.5


#
# Color space conversions.
#


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    '''
    RGB→HSV on the last axis, computed in float32. Hue is in turns
    ([0, 1)), saturation and value in [0, 1].
    '''
    hsv = cv2.cvtColor(np.ascontiguousarray(rgb, dtype=np.float32),
                       cv2.COLOR_RGB2HSV).astype(np.float64)
    hsv[..., 0] /= 360.0
    return hsv


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    '''Inverse of `rgb_to_hsv`; hue wraps around.'''
    degrees = np.array(hsv, dtype=np.float32)
    degrees[..., 0] = (degrees[..., 0] % 1.0) * 360.0
    return cv2.cvtColor(degrees, cv2.COLOR_HSV2RGB).astype(np.float64)


#
# Private helpers.
#


def _pad_linear(array: np.ndarray, axis: int) -> np.ndarray:
    '''Adds one sample at both ends of `axis`, continuing the outer slopes.'''
    first = np.take(array, [0], axis=axis)
    last = np.take(array, [-1], axis=axis)
    if array.shape[axis] > 1:
        first = 2 * first - np.take(array, [1], axis=axis)
        last = 2 * last - np.take(array, [-2], axis=axis)
    return np.concatenate([first, array, last], axis=axis)
