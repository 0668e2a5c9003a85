from unwarp.synth.sample import GeneratedSample


class SampleFilter:
    '''Filter implementations should inherit from this base class.'''

    def should_keep(self, _sample: GeneratedSample) -> bool:
        '''
        Whether or not the given sample should be written to the dataset.
        '''
        raise NotImplementedError
