import hashlib
import logging

from unwarp.filters.sample_filter import SampleFilter
from unwarp.synth.sample import GeneratedSample

LOG = logging.getLogger(__name__)


class DuplicateFilter(SampleFilter):
    '''Drops samples whose image and flow repeat an earlier sample's bytes.'''

    def __init__(self) -> None:
        super().__init__()

        self.first_seen: dict[str, int] = {}

    def should_keep(self, sample: GeneratedSample) -> bool:
        digest = _content_digest(sample)
        if digest in self.first_seen:
            LOG.debug("Sample %d duplicates sample %d", sample.index,
                      self.first_seen[digest])
            return False

        self.first_seen[digest] = sample.index
        return True


def _content_digest(sample: GeneratedSample) -> str:
    hasher = hashlib.sha512()
    for array in (sample.image.pixels, sample.flow.u, sample.flow.v):
        hasher.update(array.tobytes())
    return hasher.hexdigest()
