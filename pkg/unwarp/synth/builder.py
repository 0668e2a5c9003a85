import logging
import os
import typing as t
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from unwarp import GENERATOR_VERSION
from unwarp.core.flow import EmptyCropError
from unwarp.core.models import CATEGORY_ORDER, CropCategory, ManifestRow
from unwarp.core.raster import encode_mask, encode_ppm
from unwarp.core.wfl import encode_flow
from unwarp.filters import (DEFAULT_SAMPLE_FILTERS,
                            NAME_TO_SAMPLE_FILTER_MAPPING)
from unwarp.filters.sample_filter import SampleFilter
from unwarp.synth.crops import InfeasibleCropError
from unwarp.synth.distortion import DistortionRejectedError
from unwarp.synth.sample import (GeneratedSample, allocate_quotas,
                                 generate_sample, sample_seed)
from unwarp.utils.files import (atomic_write_bytes, atomic_write_text,
                                ensure_writable)

LOG = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
MAX_SAMPLE_ATTEMPTS = 50

_RETRYABLE = (DistortionRejectedError, InfeasibleCropError, EmptyCropError)


class GenerationFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    path: str
    rows: list[ManifestRow]

    def category_counts(self) -> dict[str, int]:
        counts = Counter(row.category for row in self.rows)
        return {category.value: counts.get(category.value, 0)
                for category in CATEGORY_ORDER}


def build_dataset(n: int,
                  size: tuple[int, int],
                  category_mix: tuple[float, float, float],
                  out_dir: str,
                  seed: int,
                  jobs: int = 1,
                  filter_names: str = DEFAULT_SAMPLE_FILTERS,
                  force: bool = False) -> DatasetManifest:
    '''
    Generates `n` samples into `out_dir` and writes the manifest. Category
    counts follow `category_mix` exactly (largest-remainder quotas), their
    order is a seeded shuffle, and every sample draws from its own sub-seed,
    so the output does not depend on `jobs`.
    '''
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    ensure_writable(manifest_path, force)

    counts = allocate_quotas(n, category_mix)
    categories = [
        category for category, count in zip(CATEGORY_ORDER, counts)
        for _ in range(count)
    ]
    order = np.random.default_rng(seed).permutation(n)
    categories = [categories[i] for i in order]

    filters: list[SampleFilter] = [
        NAME_TO_SAMPLE_FILTER_MAPPING[name.strip()]()
        for name in filter_names.split(",") if name.strip()
    ]
    tasks = [(index, categories[index], seed, size) for index in range(n)]

    rows: list[ManifestRow] = []
    for sample, attempt in _map(_generate_first, tasks, jobs):
        while not all(f.should_keep(sample) for f in filters):
            sample, attempt = _generate_with_retries(sample.index,
                                                     sample.category, seed,
                                                     size, attempt + 1)
        rows.append(_write_sample(out_dir, sample))
        LOG.debug("Wrote sample %d (%s)", sample.index, sample.category.value)

    atomic_write_text(manifest_path,
                      "".join(row.to_json_line() + "\n" for row in rows))
    manifest = DatasetManifest(manifest_path, rows)
    LOG.info("Wrote %d samples to %s: %s", n, out_dir,
             manifest.category_counts())
    return manifest


#
# Private helpers.
#


def _map(fn: t.Callable[[t.Any], t.Any], tasks: list[t.Any],
         jobs: int) -> t.Iterator[t.Any]:
    if jobs <= 1:
        yield from map(fn, tasks)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(fn, tasks)


def _generate_first(
    task: tuple[int, CropCategory, int, tuple[int, int]]
) -> tuple[GeneratedSample, int]:
    index, category, seed, size = task
    return _generate_with_retries(index, category, seed, size, 0)


def _generate_with_retries(index: int, category: CropCategory, seed: int,
                           size: tuple[int, int],
                           first_attempt: int) -> tuple[GeneratedSample, int]:
    for attempt in range(first_attempt, MAX_SAMPLE_ATTEMPTS):
        try:
            return generate_sample(index, category,
                                   sample_seed(seed, index, attempt),
                                   size), attempt
        except _RETRYABLE as ex:
            LOG.debug("Sample %d attempt %d rejected: %s", index, attempt, ex)
    raise GenerationFailedError(
        f"Could not generate a {category.value} sample for index {index} "
        f"within {MAX_SAMPLE_ATTEMPTS} attempts")


def _write_sample(out_dir: str, sample: GeneratedSample) -> ManifestRow:
    stem = f"{sample.index:06d}"
    files = {
        "image_file": f"images/{stem}.ppm",
        "flow_file": f"flows/{stem}.wfl",
        "target_file": f"targets/{stem}.ppm",
        "mask_file": f"masks/{stem}.pgm",
    }
    atomic_write_bytes(os.path.join(out_dir, files["image_file"]),
                       encode_ppm(sample.image))
    atomic_write_bytes(os.path.join(out_dir, files["flow_file"]),
                       encode_flow(sample.flow))
    atomic_write_bytes(os.path.join(out_dir, files["target_file"]),
                       encode_ppm(sample.target))
    atomic_write_bytes(os.path.join(out_dir, files["mask_file"]),
                       encode_mask(sample.distorted_mask))

    canvas_h, canvas_w = sample.distorted_mask.shape
    return ManifestRow(index=sample.index,
                       seed=sample.seed,
                       category=sample.category.value,
                       crop_x=sample.crop.x0,
                       crop_y=sample.crop.y0,
                       crop_width=sample.crop.width,
                       crop_height=sample.crop.height,
                       box_x=sample.box.x0,
                       box_y=sample.box.y0,
                       box_width=sample.box.width,
                       box_height=sample.box.height,
                       canvas_height=canvas_h,
                       canvas_width=canvas_w,
                       generator_version=GENERATOR_VERSION,
                       **files)
