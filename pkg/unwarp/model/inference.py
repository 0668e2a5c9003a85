import logging
from dataclasses import dataclass

import numpy as np

from unwarp.core.flow import WarpFlow, resize_flow, warp
from unwarp.core.raster import ImageRaster, resize_raster
from unwarp.model.checkpoint import Checkpoint
from unwarp.model.network import ForwardTrace, model_forward
from unwarp.model.params import as_values

LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rectification:
    image: ImageRaster
    flow: WarpFlow
    validity: np.ndarray


def rectify(image: ImageRaster,
            checkpoint: Checkpoint,
            trace: ForwardTrace | None = None) -> Rectification:
    '''
    Predicts the flow on a copy resized to the network extents, brings the
    flow back to the native extents and warps the native image with it.
    Pixels whose source leaves the image are filled with 0 and flagged
    invalid.
    '''
    config = checkpoint.config
    if image.channels != "rgb":
        image = ImageRaster(np.repeat(image.pixels, 3, axis=2))
    net_input = resize_raster(image, config.height, config.width)
    flow = model_forward(net_input, as_values(checkpoint.params), config,
                         trace)
    native_flow = resize_flow(flow, image.height, image.width, image.height,
                              image.width)
    rectified, validity = warp(image, native_flow, fill=0.0)
    LOG.debug("Rectified a %d×%d image, %.1f%% of pixels valid",
              image.height, image.width, 100.0 * validity.mean())
    return Rectification(rectified, native_flow, validity)
