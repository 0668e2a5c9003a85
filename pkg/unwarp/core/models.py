import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
from mashumaro import DataClassDictMixin

from unwarp.core.flow import CropRect, PixelBox, WarpFlow
from unwarp.core.raster import ImageRaster


class CropCategory(Enum):
    '''How much of the document boundary a crop shows.'''
    COMPLETE = "complete"
    PARTIAL = "partial"
    NONE = "none"


CATEGORY_ORDER = [CropCategory.COMPLETE, CropCategory.PARTIAL, CropCategory.NONE]


@dataclass(frozen=True)
class ManifestRow(DataClassDictMixin):
    '''One line of a dataset's manifest.jsonl.'''
    index: int
    seed: int
    category: str
    crop_x: int
    crop_y: int
    crop_width: int
    crop_height: int
    box_x: int
    box_y: int
    box_width: int
    box_height: int
    canvas_height: int
    canvas_width: int
    image_file: str
    flow_file: str
    target_file: str
    mask_file: str
    generator_version: str

    @property
    def crop(self) -> CropRect:
        return CropRect(self.crop_x, self.crop_y, self.crop_width,
                        self.crop_height)

    @property
    def box(self) -> PixelBox:
        return PixelBox(self.box_x, self.box_y, self.box_width,
                        self.box_height)

    def to_json_line(self) -> str:
        '''Canonical encoding: sorted keys, no insignificant whitespace.'''
        return json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))


@dataclass(frozen=True)
class SampleRecord:
    '''
    One training sample: the cropped distorted image at training size, its
    ground-truth flow in that image's pixel frame, and where it came from.
    '''
    image: ImageRaster
    flow: WarpFlow
    category: CropCategory
    crop: CropRect
    seed: int
    generator_version: str
    identifier: str = ""
    target: ImageRaster | None = None
    document_mask: np.ndarray | None = None
