import typing as t

from unwarp.filters.sample.consistency_filter import ConsistencyFilter
from unwarp.filters.sample.continuity_filter import ContinuityFilter
from unwarp.filters.sample.duplicate_filter import DuplicateFilter
from unwarp.filters.sample_filter import SampleFilter

NAME_TO_SAMPLE_FILTER_MAPPING: dict[str, t.Type[SampleFilter]] = {
    cls.__name__: cls
    for cls in [ConsistencyFilter, ContinuityFilter, DuplicateFilter]
}

DEFAULT_SAMPLE_FILTERS = ",".join(NAME_TO_SAMPLE_FILTER_MAPPING)
