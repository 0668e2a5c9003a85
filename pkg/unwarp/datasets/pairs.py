import logging
import os

from unwarp.core.dataset import BaseDataset
from unwarp.core.raster import load_mask, load_raster
from unwarp.metrics.report import EvalPair
from unwarp.utils.files import enumerate_files

LOG = logging.getLogger(__name__)

RECTIFIED_SUFFIX = "_rec.ppm"
DISTORTED_SUFFIX = "_dist.ppm"
GT_SUFFIX = "_gt.ppm"
MASK_SUFFIX = "_mask.pgm"
REFERENCE_SUFFIX = "_ref.txt"
HYPOTHESIS_SUFFIX = "_hyp.txt"


class EvalPairDataset(BaseDataset[str, EvalPair]):
    '''
    A directory of evaluation groups keyed by identifier:

        <id>_rec.ppm   rectified image (or <id>_dist.ppm for the baseline)
        <id>_gt.ppm    flat ground-truth scan
        <id>_mask.pgm  optional validity mask of the rectified image
        <id>_ref.txt   optional reference text (UTF-8)
        <id>_hyp.txt   optional recognized text of the rectified image

    Groups without a ground truth are skipped and listed in `skipped`.
    '''

    def __init__(self, folder: str, baseline: bool = False) -> None:
        self.folder = folder
        suffix = DISTORTED_SUFFIX if baseline else RECTIFIED_SUFFIX

        self.identifiers: list[str] = []
        self.skipped: list[str] = []
        for path in enumerate_files(folder, suffix):
            identifier = os.path.basename(path)[:-len(suffix)]
            if not os.path.isfile(self._path(identifier, GT_SUFFIX)):
                LOG.warning("Skipping %s: no ground truth %s%s", identifier,
                            identifier, GT_SUFFIX)
                self.skipped.append(identifier)
                continue
            self.identifiers.append(identifier)
        self.suffix = suffix

        super().__init__()

    def keys(self) -> list[str]:
        return self.identifiers

    def load(self, identifier: str) -> EvalPair:
        mask_path = self._path(identifier, MASK_SUFFIX)
        validity = None
        if self.suffix == RECTIFIED_SUFFIX and os.path.isfile(mask_path):
            validity = load_mask(mask_path)
        return EvalPair(identifier=identifier,
                        rectified=load_raster(self._path(identifier,
                                                         self.suffix)),
                        gt=load_raster(self._path(identifier, GT_SUFFIX)),
                        validity=validity,
                        reference=self._read_text(identifier,
                                                  REFERENCE_SUFFIX),
                        hypothesis=self._read_text(identifier,
                                                   HYPOTHESIS_SUFFIX))

    def _path(self, identifier: str, suffix: str) -> str:
        return os.path.join(self.folder, identifier + suffix)

    def _read_text(self, identifier: str, suffix: str) -> str | None:
        path = self._path(identifier, suffix)
        if not os.path.isfile(path):
            return None
        with open(path, encoding="utf-8") as f:
            return f.read().strip()
