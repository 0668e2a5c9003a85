'''
Backward warping flows.

A `WarpFlow` stores, for every pixel of the rectified output, the absolute
source coordinate in the input image. Coordinates are pixel-center aligned
with the origin at the center of pixel (0, 0), so the identity flow holds
u = x and v = y.
'''
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from unwarp.core.raster import (ImageRaster, hsv_to_rgb, resample,
                                sample_bilinear)

LOG = logging.getLogger(__name__)

MIN_CROP_SIDE = 32
SENTINEL = -1.0


class EmptyCropError(ValueError):
    pass


class FlowShapeError(ValueError):
    pass


@dataclass(frozen=True)
class WarpFlow:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise FlowShapeError(
                f"u/v maps must be equal 2D extents, got {self.u.shape} and {self.v.shape}"
            )

    @property
    def height(self) -> int:
        return int(self.u.shape[0])

    @property
    def width(self) -> int:
        return int(self.u.shape[1])

    def stacked(self) -> np.ndarray:
        '''H×W×2 array with u in channel 0 and v in channel 1.'''
        return np.stack([self.u, self.v], axis=-1)

    @staticmethod
    def from_stacked(array: np.ndarray) -> "WarpFlow":
        return WarpFlow(np.array(array[:, :, 0], dtype=np.float64),
                        np.array(array[:, :, 1], dtype=np.float64))


@dataclass(frozen=True)
class PixelBox:
    '''An axis-aligned integer pixel rectangle.'''
    x0: int
    y0: int
    width: int
    height: int

    @property
    def x1(self) -> int:
        return self.x0 + self.width

    @property
    def y1(self) -> int:
        return self.y0 + self.height

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


@dataclass(frozen=True)
class CropRect(PixelBox):
    '''A crop of the full distorted image. Sides are at least 32 pixels.'''

    def __post_init__(self) -> None:
        if self.width < MIN_CROP_SIDE or self.height < MIN_CROP_SIDE:
            raise ValueError(f"Crop sides must be >= {MIN_CROP_SIDE}, got "
                             f"{self.width}×{self.height}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(
                f"Crop origin must be non-negative, got ({self.x0}, {self.y0})")

    def check_inside(self, image_h: int, image_w: int) -> None:
        if self.x1 > image_w or self.y1 > image_h:
            raise ValueError(
                f"Crop {self} does not fit inside a {image_h}×{image_w} image")


def identity_flow(height: int, width: int) -> WarpFlow:
    assert height >= 1 and width >= 1
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return WarpFlow(u, v)


def validity_mask(flow: WarpFlow, in_h: int, in_w: int) -> np.ndarray:
    '''
    True where at least half of the bilinear support of a sample lies inside
    an in_h×in_w input.
    '''
    return _inside_weight(flow, in_h, in_w) >= 0.5


def warp(image: ImageRaster,
         flow: WarpFlow,
         fill: float = 0.0) -> tuple[ImageRaster, np.ndarray]:
    '''
    Bilinearly samples `image` at the flow's source coordinates. Corners that
    fall outside the input contribute `fill`. Returns the warped raster and
    its validity mask.
    '''
    out = sample_bilinear(image.pixels, flow.u, flow.v, fill=fill)
    valid = _inside_weight(flow, image.height, image.width) >= 0.5
    return ImageRaster(out), valid


def scale_coordinates(flow: WarpFlow, from_h: int, from_w: int, to_h: int,
                      to_w: int) -> WarpFlow:
    '''
    Re-expresses source coordinates measured on a from_h×from_w raster in
    the pixel frame of a to_h×to_w raster, keeping pixel centers aligned.
    '''
    if (from_h, from_w) == (to_h, to_w):
        return WarpFlow(flow.u.copy(), flow.v.copy())
    u = (flow.u + 0.5) * (to_w / from_w) - 0.5
    v = (flow.v + 0.5) * (to_h / from_h) - 0.5
    return WarpFlow(u, v)


def resample_flow(flow: WarpFlow, out_h: int, out_w: int) -> WarpFlow:
    '''Resamples the coordinate maps only, leaving their units untouched.'''
    return WarpFlow(resample(flow.u, out_h, out_w, extrapolate=True),
                    resample(flow.v, out_h, out_w, extrapolate=True))


def resize_flow(flow: WarpFlow, out_h: int, out_w: int, src_h: int,
                src_w: int) -> WarpFlow:
    '''
    Takes a flow predicted at network resolution (whose coordinates live in
    the network input frame) to an out_h×out_w flow pointing into a
    src_h×src_w image.
    '''
    assert out_h >= 1 and out_w >= 1
    resampled = resample_flow(flow, out_h, out_w)
    return scale_coordinates(resampled, flow.height, flow.width, src_h, src_w)


def crop_support(full_flow: WarpFlow,
                 crop: CropRect) -> tuple[np.ndarray, PixelBox]:
    '''
    Returns the rectified pixels whose source lands inside `crop` and their
    bounding box. Raises `EmptyCropError` when no rectified pixel does.
    '''
    inside = (full_flow.u >= crop.x0) & (full_flow.u <= crop.x1 - 1) \
        & (full_flow.v >= crop.y0) & (full_flow.v <= crop.y1 - 1)
    if not inside.any():
        raise EmptyCropError(f"No rectified pixel maps into crop {crop}")

    rows = np.flatnonzero(inside.any(axis=1))
    cols = np.flatnonzero(inside.any(axis=0))
    box = PixelBox(x0=int(cols[0]),
                   y0=int(rows[0]),
                   width=int(cols[-1] - cols[0] + 1),
                   height=int(rows[-1] - rows[0] + 1))
    return inside, box


def compose_crop_flow(full_flow: WarpFlow,
                      crop: CropRect,
                      out_h: int | None = None,
                      out_w: int | None = None) -> WarpFlow:
    '''
    Turns the flow of an uncropped pair into the ground truth for `crop`:
    the flow is restricted to the bounding box of the rectified pixels that
    land inside the crop, shifted into the crop's frame and resampled to
    out_h×out_w (the box extents by default). Box pixels whose source lies
    outside the crop keep pointing outside it.
    '''
    _, box = crop_support(full_flow, crop)
    rows, cols = box.slices()
    restricted = WarpFlow(full_flow.u[rows, cols] - crop.x0,
                          full_flow.v[rows, cols] - crop.y0)
    out_h = box.height if out_h is None else out_h
    out_w = box.width if out_w is None else out_w
    return resample_flow(restricted, out_h, out_w)


def crop_consistency_error(full_image: ImageRaster,
                           full_flow: WarpFlow,
                           crop: CropRect,
                           composed: WarpFlow,
                           erosion: int = 1) -> float:
    '''
    Largest intensity disagreement between warping the crop with the
    composed flow and cutting the box out of the full rectification. Only
    pixels valid in both and at least `erosion` pixels away from either
    validity boundary count. `composed` must be at box extents.
    '''
    _, box = crop_support(full_flow, crop)
    rows, cols = box.slices()
    if (composed.height, composed.width) != (box.height, box.width):
        raise FlowShapeError(
            f"Composed flow {composed.height}×{composed.width} is not at box "
            f"extents {box.height}×{box.width}")

    crop_rows, crop_cols = crop.slices()
    crop_image = ImageRaster(full_image.pixels[crop_rows, crop_cols])
    from_crop, crop_valid = warp(crop_image, composed)
    from_full, full_valid = warp(full_image, full_flow)

    both = crop_valid & full_valid[rows, cols]
    if erosion > 0:
        both = ndimage.binary_erosion(both,
                                      iterations=erosion,
                                      border_value=0)
    if not both.any():
        return 0.0
    diff = np.abs(from_crop.pixels - from_full.pixels[rows, cols])
    return float(diff[both].max())


def flow_l1(pred: WarpFlow, gt: WarpFlow) -> float:
    '''Mean absolute difference over all 2·H·W coordinate entries.'''
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise FlowShapeError(f"Cannot compare a {pred.height}×{pred.width} "
                             f"flow against a {gt.height}×{gt.width} one")
    total = np.abs(pred.u - gt.u).sum() + np.abs(pred.v - gt.v).sum()
    return float(total / (2 * pred.height * pred.width))


def sentinel_flow(flow: WarpFlow, in_h: int, in_w: int) -> WarpFlow:
    '''
    Discontinuous variant of a flow: entries whose source falls outside the
    in_h×in_w input are overwritten with the sentinel -1.
    '''
    invalid = ~validity_mask(flow, in_h, in_w)
    return WarpFlow(np.where(invalid, SENTINEL, flow.u),
                    np.where(invalid, SENTINEL, flow.v))


def max_neighbor_jump(flow: WarpFlow) -> float:
    '''Largest coordinate change between 4-neighbors, over both maps.'''
    jumps = [0.0]
    for coords in (flow.u, flow.v):
        if coords.shape[0] > 1:
            jumps.append(float(np.abs(np.diff(coords, axis=0)).max()))
        if coords.shape[1] > 1:
            jumps.append(float(np.abs(np.diff(coords, axis=1)).max()))
    return max(jumps)


def flow_to_color(flow: WarpFlow) -> ImageRaster:
    '''
    Debug color map of the displacement from identity: hue encodes
    direction and value encodes magnitude relative to the largest one.
    Maps that move no pixel by a full pixel are scaled as if the largest
    displacement were one pixel.
    '''
    identity = identity_flow(flow.height, flow.width)
    du = flow.u - identity.u
    dv = flow.v - identity.v
    magnitude = np.hypot(du, dv)
    hue = (np.arctan2(dv, du) / (2 * np.pi)) % 1.0
    value = magnitude / max(float(magnitude.max()), 1.0)
    hsv = np.stack([hue, np.ones_like(hue), value], axis=-1)
    return ImageRaster(hsv_to_rgb(hsv))


#
# Private helpers.
#


def _inside_weight(flow: WarpFlow, in_h: int, in_w: int) -> np.ndarray:
    '''Share of each sample's bilinear weight that lands on input pixels.'''
    return sample_bilinear(np.ones((in_h, in_w)), flow.u, flow.v, fill=0.0)
