'''
Per-image and aggregate evaluation of rectified documents.

Every pair yields one row with the unmasked and masked image metrics; text
metrics are added only for pairs that carry a non-empty reference string.
'''
import json
import logging
import math
import typing as t
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from mashumaro import DataClassDictMixin

from unwarp.core.raster import ImageRaster, resize_mask
from unwarp.metrics.distortion import (NoValidPixelsError, local_distortion,
                                       local_distortion_masked)
from unwarp.metrics.matching import MatchParams, dense_match
from unwarp.metrics.ssim import (PROTOCOL_AREA, black_region_mask, msssim,
                                 msssim_masked, prepare_pair)
from unwarp.metrics.text import cer, edit_distance
from unwarp.utils.files import atomic_write_text

LOG = logging.getLogger(__name__)

REPORT_COLUMNS = ["id", "mssim", "mssim_m", "ld", "ld_m", "ed", "cer"]
METRIC_COLUMNS = REPORT_COLUMNS[1:]


@dataclass(frozen=True)
class EvalPair:
    identifier: str
    rectified: ImageRaster
    gt: ImageRaster
    validity: np.ndarray | None = None
    reference: str | None = None
    hypothesis: str | None = None

    def __post_init__(self) -> None:
        if self.validity is not None and self.validity.shape != (
                self.rectified.height, self.rectified.width):
            raise ValueError(
                f"{self.identifier}: validity mask {self.validity.shape} does "
                f"not match the rectified image "
                f"{self.rectified.height}×{self.rectified.width}")

    @property
    def has_text(self) -> bool:
        return bool(self.reference) and self.hypothesis is not None


@dataclass(frozen=True)
class EvalSettings:
    area: int = PROTOCOL_AREA
    match_params: MatchParams = field(default_factory=MatchParams)


@dataclass(frozen=True)
class MetricRow(DataClassDictMixin):
    id: str
    mssim: float
    mssim_m: float
    ld: float | None = None
    ld_m: float | None = None
    ed: int | None = None
    cer: float | None = None


@dataclass(frozen=True)
class MetricReport:
    rows: list[MetricRow]
    skipped: list[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.to_dict() for row in self.rows],
                            columns=REPORT_COLUMNS)

    def counts(self) -> dict[str, int]:
        frame = self.to_frame()
        return {column: int(frame[column].notna().sum())
                for column in METRIC_COLUMNS}

    def means(self) -> dict[str, float | None]:
        '''Arithmetic means over the rows that have each metric, in row order.'''
        means: dict[str, float | None] = {}
        for column in METRIC_COLUMNS:
            values = [
                getattr(row, column)
                for row in self.rows
                if getattr(row, column) is not None
            ]
            means[column] = math.fsum(values) / len(values) if values else None
        return means

    def summary(self) -> dict[str, t.Any]:
        return {
            "means": self.means(),
            "counts": self.counts(),
            "pairs": len(self.rows),
            "skipped": list(self.skipped),
        }

    def write(self, csv_path: str, json_path: str) -> None:
        atomic_write_text(csv_path, self.to_frame().to_csv(index=False))
        atomic_write_text(json_path,
                          json.dumps(self.summary(), indent=2, sort_keys=True))
        LOG.info("Wrote report for %d pairs to %s and %s", len(self.rows),
                 csv_path, json_path)


def evaluate_pair(pair: EvalPair,
                  settings: EvalSettings = EvalSettings()) -> MetricRow:
    mask = black_region_mask(pair.rectified, pair.validity)
    rect_gray, gt_gray = prepare_pair(pair.rectified, pair.gt, None,
                                      settings.area)
    mssim = msssim(rect_gray, gt_gray)
    mssim_m = msssim_masked(pair.rectified, pair.gt, mask, settings.area)

    matched = dense_match(gt_gray, rect_gray, settings.match_params)
    protocol_mask = resize_mask(mask, *rect_gray.shape)
    ld = _optional_distortion(pair.identifier, "LD",
                              lambda: local_distortion(matched))
    ld_m = _optional_distortion(
        pair.identifier, "LD-M",
        lambda: local_distortion_masked(matched, protocol_mask))

    ed = cer_value = None
    if pair.has_text:
        assert pair.reference is not None and pair.hypothesis is not None
        ed = edit_distance(pair.reference, pair.hypothesis).total
        cer_value = cer(pair.reference, pair.hypothesis)

    row = MetricRow(id=pair.identifier,
                    mssim=mssim,
                    mssim_m=mssim_m,
                    ld=ld,
                    ld_m=ld_m,
                    ed=ed,
                    cer=cer_value)
    LOG.debug("Evaluated %s: %s", pair.identifier, row)
    return row


def evaluate_set(pairs: t.Sequence[EvalPair],
                 settings: EvalSettings = EvalSettings(),
                 jobs: int = 1,
                 skipped: t.Sequence[str] = ()) -> MetricReport:
    '''
    Evaluates every pair, in parallel when `jobs` > 1. Rows keep the input
    order regardless of `jobs`, so aggregates are reproducible.
    '''
    if not pairs:
        raise ValueError("Nothing to evaluate")
    tasks = [(pair, settings) for pair in pairs]
    if jobs <= 1:
        rows = [_evaluate_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_evaluate_task, tasks))
    return MetricReport(rows, list(skipped))


#
# Private helpers.
#


def _evaluate_task(task: tuple[EvalPair, EvalSettings]) -> MetricRow:
    return evaluate_pair(*task)


def _optional_distortion(identifier: str, name: str,
                         compute: t.Callable[[], float]) -> float | None:
    try:
        return compute()
    except NoValidPixelsError:
        LOG.warning("%s: no valid matches for %s; leaving it empty", identifier,
                    name)
        return None
