import logging

from unwarp.core.flow import max_neighbor_jump
from unwarp.filters.sample_filter import SampleFilter
from unwarp.synth.sample import GeneratedSample

LOG = logging.getLogger(__name__)

MAX_NEIGHBOR_JUMP = 10.0


class ContinuityFilter(SampleFilter):
    '''Drops samples whose flow jumps 10 px or more between 4-neighbors.'''

    def should_keep(self, sample: GeneratedSample) -> bool:
        jump = max_neighbor_jump(sample.flow)
        if jump < MAX_NEIGHBOR_JUMP:
            return True
        LOG.debug("Sample %d has a %.2f px flow discontinuity", sample.index,
                  jump)
        return False
