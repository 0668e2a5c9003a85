import dataclasses

import numpy as np
import pytest

from unwarp.core.flow import CropRect, PixelBox, WarpFlow, identity_flow
from unwarp.core.models import CropCategory
from unwarp.core.raster import ImageRaster
from unwarp.filters import (DEFAULT_SAMPLE_FILTERS,
                            NAME_TO_SAMPLE_FILTER_MAPPING)
from unwarp.filters.sample.consistency_filter import ConsistencyFilter
from unwarp.filters.sample.continuity_filter import ContinuityFilter
from unwarp.filters.sample.duplicate_filter import DuplicateFilter
from unwarp.synth.sample import GeneratedSample


@pytest.fixture
def sample(rng) -> GeneratedSample:
    return GeneratedSample(index=0,
                           seed=1,
                           category=CropCategory.NONE,
                           crop=CropRect(0, 0, 32, 32),
                           box=PixelBox(0, 0, 32, 32),
                           image=ImageRaster(rng.uniform(size=(32, 32, 3))),
                           flow=identity_flow(32, 32),
                           target=ImageRaster(np.ones((32, 32, 3))),
                           distorted_mask=np.ones((64, 64), dtype=bool),
                           consistency_error=0.0)


def test_registry():
    assert set(NAME_TO_SAMPLE_FILTER_MAPPING) == {
        "ConsistencyFilter", "ContinuityFilter", "DuplicateFilter"
    }
    assert DEFAULT_SAMPLE_FILTERS.split(",") == list(
        NAME_TO_SAMPLE_FILTER_MAPPING)


def test_consistency_filter(sample):
    assert ConsistencyFilter().should_keep(sample)
    failing = dataclasses.replace(sample, consistency_error=0.5)
    assert not ConsistencyFilter().should_keep(failing)
    assert ConsistencyFilter(tolerance=1.0).should_keep(failing)


def test_continuity_filter(sample):
    assert ContinuityFilter().should_keep(sample)
    flow = identity_flow(32, 32)
    torn = WarpFlow(np.where(flow.u >= 16, flow.u + 12.0, flow.u), flow.v)
    assert not ContinuityFilter().should_keep(
        dataclasses.replace(sample, flow=torn))


def test_duplicate_filter(sample, rng):
    duplicates = DuplicateFilter()
    assert duplicates.should_keep(sample)
    assert not duplicates.should_keep(dataclasses.replace(sample, index=1))
    other = dataclasses.replace(
        sample, image=ImageRaster(rng.uniform(size=(32, 32, 3))))
    assert duplicates.should_keep(other)
