'''
Smooth invertible document distortions.

The backward map F sends a rectified canvas point p to its location in the
distorted image: F(p) = Hom(p) + S(p), where Hom is a homography and S adds
a few sinusoids per axis. F sampled on the rectified grid is the ground-truth
flow; the distorted image itself needs F⁻¹, found per pixel by fixed-point
iteration.
'''
import logging
import math
from dataclasses import dataclass

import numpy as np

from unwarp.core.flow import PixelBox, WarpFlow
from unwarp.core.raster import ImageRaster, sample_bilinear

LOG = logging.getLogger(__name__)

MAX_WAVES = 6
MAX_AMPLITUDE_FRACTION = 0.08
DEFAULT_AMPLITUDE_FRACTION = 0.04
MAX_WAVE_LIPSCHITZ = 0.35
DEFAULT_MAX_PERSPECTIVE = 0.05

INVERSION_TOLERANCE = 1e-3
INVERSION_MAX_ITERATIONS = 50
MAX_UNCONVERGED_FRACTION = 1e-3

IDENTITY_HOMOGRAPHY = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


class DistortionRejectedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sinusoid:
    '''a·sin(2π(fx·x + fy·y) + φ), amplitude in pixels, frequency in cycles/px.'''
    amplitude: float
    freq_x: float
    freq_y: float
    phase: float

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(2 * math.pi *
                                       (self.freq_x * x + self.freq_y * y) +
                                       self.phase)

    @property
    def lipschitz(self) -> float:
        return 2 * math.pi * abs(self.amplitude) * math.hypot(
            self.freq_x, self.freq_y)


@dataclass(frozen=True)
class DistortionParams:
    homography: tuple[float, ...] = IDENTITY_HOMOGRAPHY
    u_waves: tuple[Sinusoid, ...] = ()
    v_waves: tuple[Sinusoid, ...] = ()
    page: PixelBox | None = None
    background_style: int = 0
    seed: int = 0
    perspective: float = 0.0

    def validate(self, h: int, w: int) -> None:
        budget = MAX_AMPLITUDE_FRACTION * min(h, w)
        for axis, waves in (("u", self.u_waves), ("v", self.v_waves)):
            if len(waves) > MAX_WAVES:
                raise ValueError(f"{len(waves)} {axis} sinusoids exceed the "
                                 f"limit of {MAX_WAVES}")
            total = sum(abs(wave.amplitude) for wave in waves)
            if total > budget:
                raise ValueError(f"{axis} amplitudes sum to {total:.3f} px, "
                                 f"above {budget:.3f} px for a {h}×{w} canvas")
        if len(self.homography) != 9:
            raise ValueError("Homography must have 9 entries")

    def homography_matrix(self) -> np.ndarray:
        return np.array(self.homography, dtype=np.float64).reshape(3, 3)


def sample_distortion_params(
    seed: int,
    h: int,
    w: int,
    page: PixelBox | None = None,
    background_style: int = 0,
    max_perspective: float = DEFAULT_MAX_PERSPECTIVE,
    amplitude_fraction: float = DEFAULT_AMPLITUDE_FRACTION,
) -> DistortionParams:
    '''
    Draws a random distortion: a homography moving the page corners by up
    to `max_perspective`·min(h, w), plus 1-4 sinusoids per axis whose
    amplitudes share a budget of `amplitude_fraction`·min(h, w).
    '''
    rng = np.random.default_rng(seed)
    short = min(h, w)
    page = page or PixelBox(0, 0, w, h)

    perspective = float(rng.uniform(0.0, max_perspective))
    src = np.array([[page.x0, page.y0], [page.x1 - 1, page.y0],
                    [page.x1 - 1, page.y1 - 1], [page.x0, page.y1 - 1]],
                   dtype=np.float64)
    dst = src + rng.uniform(-1.0, 1.0, size=(4, 2)) * perspective * short
    homography = homography_from_points(src, dst)

    waves = []
    for _ in range(2):
        count = int(rng.integers(1, 5))
        budget = rng.uniform(0.5, 1.0) * amplitude_fraction * short
        shares = rng.uniform(0.3, 1.0, size=count)
        amplitudes = budget * shares / shares.sum() * rng.choice([-1.0, 1.0],
                                                                 size=count)
        axis_waves = []
        for amplitude in amplitudes:
            cycles = rng.uniform(0.3, 1.5) / short
            angle = rng.uniform(0.0, 2 * math.pi)
            axis_waves.append(
                Sinusoid(float(amplitude), cycles * math.cos(angle),
                         cycles * math.sin(angle),
                         float(rng.uniform(0.0, 2 * math.pi))))
        waves.append(tuple(_limit_lipschitz(axis_waves)))

    return DistortionParams(homography=tuple(homography.reshape(-1).tolist()),
                            u_waves=waves[0],
                            v_waves=waves[1],
                            page=page,
                            background_style=background_style,
                            seed=seed,
                            perspective=perspective)


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    '''The 3×3 homography taking four `src` points onto `dst`.'''
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    solution = np.linalg.solve(np.array(rows, dtype=np.float64),
                               np.array(rhs, dtype=np.float64))
    return np.append(solution, 1.0).reshape(3, 3)


def backward_map(params: DistortionParams, x: np.ndarray,
                 y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    '''Evaluates F at rectified points (x, y).'''
    hx, hy = _apply_homography(params.homography_matrix(), x, y)
    return hx + _wave_sum(params.u_waves, x, y), hy + _wave_sum(
        params.v_waves, x, y)


def generate_distortion(
        flat: ImageRaster,
        params: DistortionParams,
        flat_mask: np.ndarray | None = None
) -> tuple[ImageRaster, WarpFlow, np.ndarray]:
    '''
    Distorts `flat`. Returns the distorted image, the full backward flow
    (rectified → distorted coordinates, on the rectified grid) and the
    document mask carried into the distorted image. Without `flat_mask`,
    the document is `params.page` (or the whole canvas).
    '''
    h, w = flat.height, flat.width
    params.validate(h, w)
    if flat_mask is None:
        flat_mask = np.zeros((h, w), dtype=bool)
        rows, cols = (params.page or PixelBox(0, 0, w, h)).slices()
        flat_mask[rows, cols] = True

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    full_u, full_v = backward_map(params, xs, ys)
    full_flow = WarpFlow(full_u, full_v)

    source_x, source_y = _invert(params, xs, ys)
    # The flat page is extended by its edge values beyond the canvas.
    distorted = sample_bilinear(flat.pixels, source_x, source_y)
    mask = sample_bilinear(flat_mask.astype(np.float64), source_x,
                           source_y) >= 0.5
    return ImageRaster(distorted), full_flow, mask


#
# Private helpers.
#


def _apply_homography(matrix: np.ndarray, x: np.ndarray,
                      y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    denominator = matrix[2, 0] * x + matrix[2, 1] * y + matrix[2, 2]
    return ((matrix[0, 0] * x + matrix[0, 1] * y + matrix[0, 2]) / denominator,
            (matrix[1, 0] * x + matrix[1, 1] * y + matrix[1, 2]) / denominator)


def _wave_sum(waves: tuple[Sinusoid, ...], x: np.ndarray,
              y: np.ndarray) -> np.ndarray:
    total = np.zeros_like(x)
    for wave in waves:
        total = total + wave(x, y)
    return total


def _limit_lipschitz(waves: list[Sinusoid]) -> list[Sinusoid]:
    total = sum(wave.lipschitz for wave in waves)
    if total <= MAX_WAVE_LIPSCHITZ:
        return waves
    scale = MAX_WAVE_LIPSCHITZ / total
    return [
        Sinusoid(wave.amplitude, wave.freq_x * scale, wave.freq_y * scale,
                 wave.phase) for wave in waves
    ]


def _invert(params: DistortionParams, qx: np.ndarray,
            qy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    '''
    Solves F(p) = q per pixel with p ← Hom⁻¹(q − S(p)). Raises
    `DistortionRejectedError` when too many pixels fail to converge.
    '''
    inverse = np.linalg.inv(params.homography_matrix())
    px, py = _apply_homography(inverse, qx, qy)
    converged = np.zeros(qx.shape, dtype=bool)
    for _ in range(INVERSION_MAX_ITERATIONS):
        fx, fy = backward_map(params, px, py)
        residual = np.maximum(np.abs(fx - qx), np.abs(fy - qy))
        converged = residual < INVERSION_TOLERANCE
        if converged.all():
            break
        px, py = _apply_homography(inverse,
                                   qx - _wave_sum(params.u_waves, px, py),
                                   qy - _wave_sum(params.v_waves, px, py))

    unconverged = 1.0 - converged.mean()
    if unconverged > MAX_UNCONVERGED_FRACTION:
        raise DistortionRejectedError(
            f"Inversion left {unconverged:.2%} of pixels unconverged "
            f"(seed {params.seed})")
    if unconverged > 0:
        LOG.debug("Inversion left %d pixels unconverged",
                  int((~converged).sum()))
    return px, py
