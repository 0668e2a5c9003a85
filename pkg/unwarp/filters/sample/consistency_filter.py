import logging

from unwarp.filters.sample_filter import SampleFilter
from unwarp.synth.sample import GeneratedSample

LOG = logging.getLogger(__name__)

# Largest tolerated disagreement between warping the crop with its composed
# flow and cutting the same region out of the full rectification.
MAX_CONSISTENCY_ERROR = 2e-2


class ConsistencyFilter(SampleFilter):
    '''Drops samples whose crop flow fails the write-time consistency check.'''

    def __init__(self, tolerance: float = MAX_CONSISTENCY_ERROR) -> None:
        super().__init__()
        self.tolerance = tolerance

    def should_keep(self, sample: GeneratedSample) -> bool:
        if sample.consistency_error <= self.tolerance:
            return True
        LOG.debug("Sample %d fails the consistency check (%.4f > %.4f)",
                  sample.index, sample.consistency_error, self.tolerance)
        return False
