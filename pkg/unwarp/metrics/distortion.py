'''Local distortion (LD): mean matched displacement magnitude.'''
import numpy as np

from unwarp.metrics.matching import DisplacementField


class NoValidPixelsError(ValueError):
    pass


def local_distortion(field: DisplacementField) -> float:
    return _mean_magnitude(field, field.valid)


def local_distortion_masked(field: DisplacementField,
                            mask: np.ndarray) -> float:
    '''LD restricted to valid matches outside the black-region `mask`.'''
    if mask.shape != field.valid.shape:
        raise ValueError(f"Mask {mask.shape} does not match a field of "
                         f"{field.valid.shape}")
    return _mean_magnitude(field, field.valid & ~mask)


#
# Private helpers.
#


def _mean_magnitude(field: DisplacementField, selection: np.ndarray) -> float:
    count = int(selection.sum())
    if count == 0:
        raise NoValidPixelsError("No matched pixel left to average over")
    magnitude = np.hypot(field.dx[selection], field.dy[selection])
    return float(magnitude.sum() / count)
