'''
Dense coarse-to-fine matching with orientation-histogram descriptors.

Every pixel is described by 8-bin gradient orientation histograms pooled
over a 4×4 grid of 4 px cells. Histograms are normalized by the local
gradient energy, so the L1 descriptor distance splits into a per-cell sum and
the cost of every candidate offset is computed from shifted orientation maps
without materializing 128-dimensional descriptors. Offsets are searched in a
±4 px window at each of three pyramid levels, refined by a quadratic fit and
median-filtered before moving to the next finer level.
'''
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from unwarp.core.raster import resample

LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchParams:
    orientations: int = 8
    cells: int = 4
    cell_size: int = 4
    levels: int = 3
    search_radius: int = 4
    median_size: int = 5
    smoothing: float = 1.0
    # Mean gradient magnitude below which a pixel counts as textureless.
    min_energy: float = 1e-3
    band_rows: int = 64


@dataclass(frozen=True)
class DisplacementField:
    '''
    Per-pixel (dx, dy) from the ground-truth image into the rectified one:
    gt(x, y) matches rectified(x + dx, y + dy) where `valid` is set.
    '''
    dx: np.ndarray
    dy: np.ndarray
    valid: np.ndarray

    @staticmethod
    def constant(h: int, w: int, dx: float, dy: float) -> "DisplacementField":
        return DisplacementField(np.full((h, w), float(dx)),
                                 np.full((h, w), float(dy)),
                                 np.ones((h, w), dtype=bool))


def dense_match(gt: np.ndarray,
                rectified: np.ndarray,
                params: MatchParams = MatchParams()) -> DisplacementField:
    '''Matches every pixel of the gray map `gt` into `rectified`.'''
    if gt.shape != rectified.shape:
        raise ValueError(f"Matching needs equal extents, got {gt.shape} and "
                         f"{rectified.shape}")
    h, w = gt.shape
    if np.ptp(gt) == 0 or np.ptp(rectified) == 0:
        LOG.warning("Degenerate (constant) image; no pixel can be matched")
        zeros = np.zeros((h, w))
        return DisplacementField(zeros, zeros.copy(),
                                 np.zeros((h, w), dtype=bool))

    gt_pyramid = _pyramid(gt.astype(np.float64), params.levels)
    rect_pyramid = _pyramid(rectified.astype(np.float64), params.levels)

    field_x = np.zeros(gt_pyramid[-1].shape)
    field_y = np.zeros(gt_pyramid[-1].shape)
    energy = np.zeros(gt.shape)
    for level in reversed(range(len(gt_pyramid))):
        level_h, level_w = gt_pyramid[level].shape
        if field_x.shape != (level_h, level_w):
            field_x = 2.0 * resample(field_x, level_h, level_w)
            field_y = 2.0 * resample(field_y, level_h, level_w)

        gt_maps, energy = _orientation_maps(gt_pyramid[level], params)
        rect_maps, _ = _orientation_maps(rect_pyramid[level], params)
        field_x, field_y = _search_level(gt_maps, rect_maps,
                                         np.round(field_x).astype(np.int64),
                                         np.round(field_y).astype(np.int64),
                                         params)
        field_x = ndimage.median_filter(field_x,
                                        size=params.median_size,
                                        mode="nearest")
        field_y = ndimage.median_filter(field_y,
                                        size=params.median_size,
                                        mode="nearest")

    ys, xs = np.mgrid[0:h, 0:w]
    in_range = (xs + field_x >= 0) & (xs + field_x <= w - 1) \
        & (ys + field_y >= 0) & (ys + field_y <= h - 1)
    valid = in_range & (energy > params.min_energy)
    return DisplacementField(field_x, field_y, valid)


#
# Private helpers.
#


def _pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    pyramid = [image]
    for _ in range(levels - 1):
        h, w = pyramid[-1].shape[0] // 2, pyramid[-1].shape[1] // 2
        if min(h, w) < 8:
            break
        blocks = pyramid[-1][:2 * h, :2 * w].reshape(h, 2, w, 2)
        pyramid.append(blocks.mean(axis=(1, 3)))
    return pyramid


def _orientation_maps(image: np.ndarray,
                      params: MatchParams) -> tuple[np.ndarray, np.ndarray]:
    '''
    Cell-pooled orientation histograms at every pixel, (H, W, bins), divided
    by the gradient energy over the full descriptor footprint. Also returns
    that energy as a mean gradient magnitude.
    '''
    smoothed = ndimage.gaussian_filter(image, params.smoothing)
    grad_y, grad_x = np.gradient(smoothed)
    magnitude = np.hypot(grad_x, grad_y)
    angle = np.arctan2(grad_y, grad_x) % (2 * np.pi)

    bins = params.orientations
    position = angle / (2 * np.pi) * bins
    lower = np.floor(position).astype(np.int64) % bins
    upper = (lower + 1) % bins
    frac = position - np.floor(position)

    maps = np.zeros(image.shape + (bins,), dtype=np.float32)
    rows, cols = np.indices(image.shape)
    np.add.at(maps, (rows, cols, lower), (1.0 - frac) * magnitude)
    np.add.at(maps, (rows, cols, upper), frac * magnitude)
    maps = ndimage.uniform_filter(maps,
                                  size=(params.cell_size, params.cell_size, 1),
                                  mode="nearest")

    footprint = params.cells * params.cell_size
    energy = ndimage.uniform_filter(magnitude, size=footprint, mode="nearest")
    maps /= (energy + 1e-6)[:, :, None].astype(np.float32)
    return maps, energy


def _cell_offsets(params: MatchParams) -> list[int]:
    half = (params.cells - 1) / 2
    return [
        int(round((k - half) * params.cell_size)) for k in range(params.cells)
    ]


def _shift(array: np.ndarray, dy: int, dx: int) -> np.ndarray:
    '''array[y + dy, x + dx] with edge clamping.'''
    h, w = array.shape[:2]
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return array[rows][:, cols]


def _search_level(gt_maps: np.ndarray, rect_maps: np.ndarray,
                  prior_x: np.ndarray, prior_y: np.ndarray,
                  params: MatchParams) -> tuple[np.ndarray, np.ndarray]:
    h, w = gt_maps.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    # Rectified maps pre-warped by the coarser level's integer estimate.
    warped = rect_maps[np.clip(ys + prior_y, 0, h - 1),
                       np.clip(xs + prior_x, 0, w - 1)]

    radius = params.search_radius
    offsets = [(dy, dx)
               for dy in range(-radius, radius + 1)
               for dx in range(-radius, radius + 1)]
    cells = _cell_offsets(params)
    halo = radius + max(abs(c) for c in cells) + 1

    best_x = np.zeros((h, w))
    best_y = np.zeros((h, w))
    for start in range(0, h, params.band_rows):
        stop = min(start + params.band_rows, h)
        lo, hi = max(0, start - halo), min(h, stop + halo)
        costs = np.empty((len(offsets), stop - start, w), dtype=np.float32)
        band_rows = np.arange(lo, hi)
        for k, (dy, dx) in enumerate(offsets):
            rows = np.clip(band_rows + dy, 0, h - 1)
            cols = np.clip(np.arange(w) + dx, 0, w - 1)
            diff = np.abs(gt_maps[lo:hi] - warped[rows][:, cols]).sum(axis=-1)
            pooled = np.zeros_like(diff)
            for cy in cells:
                for cx in cells:
                    pooled += _shift(diff, cy, cx)
            costs[k] = pooled[start - lo:stop - lo]

        choice = costs.argmin(axis=0)
        band_dy = np.array([o[0] for o in offsets])[choice]
        band_dx = np.array([o[1] for o in offsets])[choice]
        sub_x = _subpixel(costs, choice, band_dy, band_dx, radius, axis="x")
        sub_y = _subpixel(costs, choice, band_dy, band_dx, radius, axis="y")
        best_x[start:stop] = band_dx + sub_x
        best_y[start:stop] = band_dy + sub_y

    return prior_x + best_x, prior_y + best_y


def _subpixel(costs: np.ndarray, choice: np.ndarray, dy: np.ndarray,
              dx: np.ndarray, radius: int, axis: str) -> np.ndarray:
    '''
    Vertex of the parabola through the best cost and its two neighbors.
    Exact matches (zero cost) stay on the integer offset.
    '''
    side = 2 * radius + 1
    step = 1 if axis == "x" else side
    along = dx if axis == "x" else dy
    interior = np.abs(along) < radius

    rows, cols = np.indices(choice.shape)
    before = costs[np.clip(choice - step, 0, len(costs) - 1), rows, cols]
    center = costs[choice, rows, cols]
    after = costs[np.clip(choice + step, 0, len(costs) - 1), rows, cols]
    curvature = before - 2 * center + after
    usable = interior & (curvature > 0) & (center > 0)
    offset = np.where(usable,
                      (before - after) / (2 * np.where(usable, curvature, 1)),
                      0.0)
    return np.clip(offset, -0.5, 0.5)
