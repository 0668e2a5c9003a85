import os
import typing as t

import numpy as np
import pandas as pd

from unwarp.core.dataset import BaseDataset, get_path_for
from unwarp.core.models import CropCategory, ManifestRow, SampleRecord
from unwarp.core.raster import load_mask, load_raster
from unwarp.core.wfl import load_flow
from unwarp.synth.builder import MANIFEST_NAME


class SyntheticDataset(BaseDataset[int, SampleRecord]):
    '''
    Synthetic rectification pairs written by `build_dataset`: the cropped
    distorted image, its ground-truth flow and the flat target region.
    '''

    def __init__(self, path: str | None = None) -> None:
        self.folder = path if path is not None else get_path_for("synthetic")
        manifest_path = os.path.join(self.folder, MANIFEST_NAME)
        if not os.path.isfile(manifest_path):
            raise FileNotFoundError(f"No dataset manifest at {manifest_path}")

        df = pd.read_json(manifest_path, lines=True, dtype=False)
        self.rows = [
            ManifestRow.from_dict(_to_native(record))
            for record in df.to_dict(orient="records")
        ]

        super().__init__()

    def keys(self) -> range:
        return range(len(self.rows))

    def load(self, idx: int) -> SampleRecord:
        row = self.rows[idx]
        return SampleRecord(
            image=load_raster(os.path.join(self.folder, row.image_file)),
            flow=load_flow(os.path.join(self.folder, row.flow_file)),
            category=CropCategory(row.category),
            crop=row.crop,
            seed=row.seed,
            generator_version=row.generator_version,
            identifier=f"{row.index:06d}",
            target=load_raster(os.path.join(self.folder, row.target_file)),
            document_mask=load_mask(os.path.join(self.folder,
                                                 row.mask_file)),
        )


def _to_native(record: dict[str, t.Any]) -> dict[str, t.Any]:
    return {
        key: value.item() if isinstance(value, np.generic) else value
        for key, value in record.items()
    }
