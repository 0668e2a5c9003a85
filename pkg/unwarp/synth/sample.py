import math
from dataclasses import dataclass

import numpy as np

from unwarp.core.flow import (CropRect, PixelBox, WarpFlow, compose_crop_flow,
                              crop_consistency_error, crop_support,
                              resample_flow, scale_coordinates)
from unwarp.core.models import CropCategory
from unwarp.core.raster import ImageRaster, resize_raster
from unwarp.synth.crops import sample_crop
from unwarp.synth.distortion import (generate_distortion,
                                     sample_distortion_params)
from unwarp.synth.document import render_document

CANVAS_SCALE = 2


@dataclass(frozen=True)
class GeneratedSample:
    '''A freshly generated sample, before it is filtered and written out.'''
    index: int
    seed: int
    category: CropCategory
    crop: CropRect
    box: PixelBox
    image: ImageRaster
    flow: WarpFlow
    target: ImageRaster
    distorted_mask: np.ndarray
    consistency_error: float


def sample_seed(base_seed: int, index: int, attempt: int) -> int:
    '''Independent per-sample seed; identical across worker layouts.'''
    state = np.random.SeedSequence([base_seed, index, attempt]).generate_state(1)
    return int(state[0])


def generate_sample(index: int, category: CropCategory, seed: int,
                    size: tuple[int, int]) -> GeneratedSample:
    '''
    Renders, distorts and crops one document, then builds the crop's
    ground-truth flow. The flow is composed at the native box extents, where
    the consistency oracle is evaluated, and only then resampled to `size`
    with its coordinates moved into the resized crop's frame.
    '''
    out_h, out_w = size
    canvas_h, canvas_w = CANVAS_SCALE * out_h, CANVAS_SCALE * out_w
    rng = np.random.default_rng(seed)

    document = render_document(int(rng.integers(2**31)), canvas_h, canvas_w)
    page = document.layout.page
    params = sample_distortion_params(
        int(rng.integers(2**31)),
        canvas_h,
        canvas_w,
        page=page,
        background_style=document.layout.background_style)
    distorted, full_flow, distorted_mask = generate_distortion(
        document.image, params, document.mask)

    # The rectified domain is the flat page, not the whole canvas.
    rows, cols = page.slices()
    page_flow = WarpFlow(full_flow.u[rows, cols], full_flow.v[rows, cols])
    page_image = document.image.pixels[rows, cols]

    crop = sample_crop(distorted_mask, category, int(rng.integers(2**31)))
    composed = compose_crop_flow(page_flow, crop)
    _, box = crop_support(page_flow, crop)
    error = crop_consistency_error(distorted, page_flow, crop, composed)

    crop_rows, crop_cols = crop.slices()
    image = resize_raster(ImageRaster(distorted.pixels[crop_rows, crop_cols]),
                          out_h, out_w)
    flow = scale_coordinates(resample_flow(composed, out_h, out_w),
                             crop.height, crop.width, out_h, out_w)
    box_rows, box_cols = box.slices()
    target = resize_raster(ImageRaster(page_image[box_rows, box_cols]), out_h,
                           out_w)

    return GeneratedSample(index=index,
                           seed=seed,
                           category=category,
                           crop=crop,
                           box=box,
                           image=image,
                           flow=flow,
                           target=target,
                           distorted_mask=distorted_mask,
                           consistency_error=error)


def allocate_quotas(n: int, mix: tuple[float, ...]) -> list[int]:
    '''
    Splits `n` into per-category counts: floors first, then the leftover
    samples go to the largest fractional remainders (earlier categories win
    ties).
    '''
    if n < 1:
        raise ValueError(f"Need at least one sample, got {n}")
    if any(f < 0 for f in mix) or not math.isclose(sum(mix), 1.0,
                                                   abs_tol=1e-6):
        raise ValueError(f"Category fractions must be >= 0 and sum to 1, got "
                         f"{mix}")
    total = sum(mix)
    exact = [n * f / total for f in mix]
    counts = [math.floor(x + 1e-9) for x in exact]
    remainders = sorted(range(len(mix)),
                        key=lambda i: (-(exact[i] - counts[i]), i))
    for i in remainders[:n - sum(counts)]:
        counts[i] += 1
    return counts
