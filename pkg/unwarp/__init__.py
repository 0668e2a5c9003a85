'''Unrestricted document-image rectification toolkit.'''

GENERATOR_VERSION = "unwarp-synth/1"
