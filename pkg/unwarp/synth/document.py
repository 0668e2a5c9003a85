'''Flat document pages rendered on a background canvas.'''
import typing as t
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from unwarp.core.flow import PixelBox
from unwarp.core.raster import ImageRaster

MIN_EXTENT = 64
PAGE_SIDE_RANGE = (0.72, 0.82)
PAPER_RANGE = (0.92, 1.0)
MAX_INK = 0.35

BACKGROUND_STYLES = ("flat", "noise", "gradient")


@dataclass(frozen=True)
class LayoutElement:
    kind: t.Literal["word", "rule", "figure"]
    box: PixelBox


@dataclass(frozen=True)
class DocumentLayout:
    page: PixelBox
    elements: tuple[LayoutElement, ...]
    background_style: int
    ink: float

    def content_rows(self) -> np.ndarray:
        '''Canvas rows touched by any layout element.'''
        rows: set[int] = set()
        for element in self.elements:
            rows.update(range(element.box.y0, element.box.y1))
        return np.array(sorted(rows), dtype=np.int64)


@dataclass(frozen=True)
class RenderedDocument:
    image: ImageRaster
    mask: np.ndarray
    layout: DocumentLayout


def render_document(seed: int,
                    h: int,
                    w: int,
                    background_style: int | None = None) -> RenderedDocument:
    '''
    Renders a white page of dark word bars, ruled lines and block figures
    onto a dark background canvas. The mask marks the page region.
    Deterministic per seed.
    '''
    if h < MIN_EXTENT or w < MIN_EXTENT:
        raise ValueError(
            f"Documents need extents >= {MIN_EXTENT}, got {h}×{w}")
    rng = np.random.default_rng(seed)

    if background_style is None:
        background_style = int(rng.integers(len(BACKGROUND_STYLES)))
    pixels = _render_background(rng, h, w, BACKGROUND_STYLES[background_style])

    page_h = int(round(rng.uniform(*PAGE_SIDE_RANGE) * h))
    page_w = int(round(rng.uniform(*PAGE_SIDE_RANGE) * w))
    page = PixelBox(x0=_jittered_origin(rng, w, page_w),
                    y0=_jittered_origin(rng, h, page_h),
                    width=page_w,
                    height=page_h)
    rows, cols = page.slices()
    pixels[rows, cols] = rng.uniform(*PAPER_RANGE, size=3)

    ink = float(rng.uniform(0.0, MAX_INK))
    elements = _layout_page(rng, page)
    for element in elements:
        e_rows, e_cols = element.box.slices()
        if element.kind == "figure":
            pixels[e_rows, e_cols] = rng.uniform(ink, MAX_INK)
        else:
            pixels[e_rows, e_cols] = ink

    mask = np.zeros((h, w), dtype=bool)
    mask[rows, cols] = True
    layout = DocumentLayout(page=page,
                            elements=tuple(elements),
                            background_style=background_style,
                            ink=ink)
    return RenderedDocument(ImageRaster(pixels), mask, layout)


#
# Private helpers.
#


def _render_background(rng: np.random.Generator, h: int, w: int,
                       style: str) -> np.ndarray:
    base = rng.uniform(0.05, 0.35, size=3)
    if style == "flat":
        return np.broadcast_to(base, (h, w, 3)).copy()

    if style == "noise":
        noise = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=2.0)
        noise /= max(float(np.abs(noise).max()), 1e-12)
        return np.clip(base + 0.1 * noise[:, :, None], 0.0, 1.0)

    other = rng.uniform(0.05, 0.35, size=3)
    angle = rng.uniform(0.0, 2 * np.pi)
    ys, xs = np.mgrid[0:h, 0:w]
    ramp = np.cos(angle) * xs / w + np.sin(angle) * ys / h
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-12)
    return base + (other - base) * ramp[:, :, None]


def _jittered_origin(rng: np.random.Generator, extent: int, side: int) -> int:
    slack = extent - side
    jitter = slack // 4
    return slack // 2 + int(rng.integers(-jitter, jitter + 1))


def _layout_page(rng: np.random.Generator,
                 page: PixelBox) -> list[LayoutElement]:
    margin_x = max(2, round(0.08 * page.width))
    margin_y = max(2, round(0.06 * page.height))
    left, right = page.x0 + margin_x, page.x1 - margin_x
    bottom = page.y1 - margin_y
    min_line = max(2, page.height // 40)
    max_line = max(min_line + 1, page.height // 20)

    elements: list[LayoutElement] = []
    y = page.y0 + margin_y
    while True:
        line_h = int(rng.integers(min_line, max_line + 1))
        draw = rng.uniform()
        if draw < 0.08:
            height = int(rng.integers(1, 3))
            if y + height > bottom:
                break
            elements.append(
                LayoutElement("rule", PixelBox(left, y, right - left, height)))
        elif draw < 0.18:
            height = int(rng.uniform(0.1, 0.25) * page.height)
            width = int(rng.uniform(0.3, 0.8) * (right - left))
            if y + height > bottom or width < 1:
                break
            elements.append(
                LayoutElement("figure", PixelBox(left, y, width, height)))
        else:
            if y + line_h > bottom:
                break
            elements.extend(_layout_words(rng, left, right, y, line_h))
            height = line_h
        y += height + int(rng.integers(max(1, line_h // 2), line_h + 1))
    return elements


def _layout_words(rng: np.random.Generator, left: int, right: int, y: int,
                  line_h: int) -> list[LayoutElement]:
    # Occasionally end a line early, like the last line of a paragraph.
    line_end = right if rng.uniform() > 0.2 else int(
        rng.uniform(left + 0.3 * (right - left), right))
    words = []
    x = left
    while x < line_end:
        width = min(int(rng.integers(line_h, 5 * line_h + 1)), line_end - x)
        if width < 1:
            break
        words.append(LayoutElement("word", PixelBox(x, y, width, line_h)))
        x += width + int(rng.integers(max(1, line_h // 2), line_h + 1))
    return words
