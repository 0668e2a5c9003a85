import logging

import numpy as np
from scipy import ndimage

from unwarp.core.flow import MIN_CROP_SIDE, CropRect
from unwarp.core.models import CropCategory

LOG = logging.getLogger(__name__)

BOUNDARY_MARGIN = 2
CROP_SIDE_RANGE = (0.35, 0.9)
MAX_ATTEMPTS = 1000


class InfeasibleCropError(RuntimeError):
    pass


def classify_crop(mask: np.ndarray,
                  crop: CropRect,
                  interior_distance: np.ndarray | None = None
                 ) -> CropCategory | None:
    '''
    Boundary category of `crop` over the distorted document `mask`:

    - complete: the whole document lies inside the crop with a 2 px margin;
    - none: every crop pixel is more than 2 px inside the document;
    - partial: otherwise, when the crop shows both document and background.

    Returns None for crops that fit no category (no document at all, or a
    document touching the margin).
    '''
    rows, cols = crop.slices()
    window = mask[rows, cols]
    if not window.any():
        return None

    doc_rows = np.flatnonzero(mask.any(axis=1))
    doc_cols = np.flatnonzero(mask.any(axis=0))
    if doc_cols[0] >= crop.x0 + BOUNDARY_MARGIN \
            and doc_cols[-1] <= crop.x1 - 1 - BOUNDARY_MARGIN \
            and doc_rows[0] >= crop.y0 + BOUNDARY_MARGIN \
            and doc_rows[-1] <= crop.y1 - 1 - BOUNDARY_MARGIN:
        return CropCategory.COMPLETE

    if interior_distance is None:
        interior_distance = document_interior_distance(mask)
    if (interior_distance[rows, cols] > BOUNDARY_MARGIN).all():
        return CropCategory.NONE

    if not window.all():
        return CropCategory.PARTIAL
    return None


def document_interior_distance(mask: np.ndarray) -> np.ndarray:
    '''
    Distance from each pixel to the nearest background pixel. The canvas
    edge is not a document boundary; a full-canvas mask is infinitely deep.
    '''
    if mask.all():
        return np.full(mask.shape, np.inf)
    pad = BOUNDARY_MARGIN + 1
    padded = np.pad(mask, pad, mode="edge")
    return ndimage.distance_transform_edt(padded)[pad:-pad, pad:-pad]


def sample_crop(mask: np.ndarray,
                category: CropCategory,
                seed: int,
                side_range: tuple[float, float] = CROP_SIDE_RANGE,
                max_attempts: int = MAX_ATTEMPTS) -> CropRect:
    '''
    Rejection-samples a crop of the requested category. Sides are uniform
    in `side_range` times the canvas extent (and at least 32 px), origins
    uniform over the positions that keep the crop on the canvas.
    '''
    if not mask.any():
        raise ValueError("Cannot crop around an empty document mask")
    h, w = mask.shape
    min_h = max(MIN_CROP_SIDE, int(np.ceil(side_range[0] * h)))
    min_w = max(MIN_CROP_SIDE, int(np.ceil(side_range[0] * w)))
    max_h = min(h, int(side_range[1] * h))
    max_w = min(w, int(side_range[1] * w))
    if min_h > max_h or min_w > max_w:
        raise InfeasibleCropError(
            f"A {h}×{w} canvas cannot hold {MIN_CROP_SIDE} px crops")

    rng = np.random.default_rng(seed)
    distance = document_interior_distance(mask)
    for attempt in range(max_attempts):
        crop_h = int(rng.integers(min_h, max_h + 1))
        crop_w = int(rng.integers(min_w, max_w + 1))
        crop = CropRect(x0=int(rng.integers(0, w - crop_w + 1)),
                        y0=int(rng.integers(0, h - crop_h + 1)),
                        width=crop_w,
                        height=crop_h)
        if classify_crop(mask, crop, distance) == category:
            LOG.debug("Found a %s crop after %d attempts", category.value,
                      attempt + 1)
            return crop

    raise InfeasibleCropError(
        f"No {category.value} crop found in {max_attempts} attempts")
