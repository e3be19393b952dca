"""Anti-aliased rasterization of cross-sections and binary PGM persistence

All images share one fixed world window of +/- world_half_width mm, so pixel
scale is constant across a dataset. Row 0 is the top of the window (y = +W).
"""
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from pydantic import BaseModel, field_validator

from core.errors import FormatError, OutOfFrameError
from core.geometry import Polygon

logger = logging.getLogger(__name__)

ALLOWED_SIZES = (32, 64, 128, 256)
_PGM_HEADER = re.compile(rb"\AP5\s+(\d+)\s+(\d+)\s+(\d+)\s")


class RasterConfig(BaseModel):
    """Image geometry shared by every sample of a dataset"""
    model_config = {"frozen": True}

    img_size: int = 64
    world_half_width: float = 128.0
    supersample: int = 4

    @field_validator("img_size")
    @classmethod
    def _check_size(cls, value: int) -> int:
        if value not in ALLOWED_SIZES:
            raise ValueError(f"img_size must be one of {ALLOWED_SIZES}, got {value}")
        return value

    @field_validator("world_half_width")
    @classmethod
    def _check_window(cls, value: float) -> float:
        # generator radii are clipped at 2 * 63 mm
        if value < 126.0:
            raise ValueError(f"world_half_width must be >= 126 mm, got {value}")
        return value

    @field_validator("supersample")
    @classmethod
    def _check_supersample(cls, value: int) -> int:
        if value < 1:
            raise ValueError("supersample must be >= 1")
        return value

    @property
    def pixel_size(self) -> float:
        return 2 * self.world_half_width / self.img_size

    @property
    def pixel_area(self) -> float:
        return self.pixel_size ** 2


@dataclass(frozen=True, eq=False)
class CrossSectionImage:
    """Row-major coverage grid with values in [0, 1]"""
    pixels: np.ndarray

    def __post_init__(self):
        pix = np.asarray(self.pixels, dtype=np.float64)
        if pix.ndim != 2:
            raise FormatError(f"image must be 2-D, got shape {pix.shape}")
        if pix.size and (pix.min() < 0.0 or pix.max() > 1.0):
            raise FormatError("pixel coverage must lie in [0, 1]")
        pix.setflags(write=False)
        object.__setattr__(self, "pixels", pix)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, CrossSectionImage) and np.array_equal(self.pixels, other.pixels)


def rasterize(poly: Polygon, cfg: RasterConfig) -> CrossSectionImage:
    """Fraction of a regular supersample grid inside the polygon, per pixel."""
    half = cfg.world_half_width
    if poly.max_extent() >= half:
        raise OutOfFrameError(f"polygon extent {poly.max_extent():.2f} mm exceeds window +/-{half} mm")

    n = cfg.img_size * cfg.supersample
    spacing = 2 * half / n
    xs = -half + (np.arange(n) + 0.5) * spacing
    ys = half - (np.arange(n) + 0.5) * spacing

    x0, y0 = poly.vertices[:, 0], poly.vertices[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    # even-odd crossings of a ray towards +x, one sample row at a time
    straddles = (y0[None, :] > ys[:, None]) != (y1[None, :] > ys[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ys[:, None] - y0[None, :]) / (y1 - y0)[None, :]
        x_cross = np.where(straddles, x0[None, :] + t * (x1 - x0)[None, :], -np.inf)
    crossings = np.count_nonzero(x_cross[:, :, None] > xs[None, None, :], axis=1)
    inside = (crossings % 2).astype(np.float64)

    ss = cfg.supersample
    coverage = inside.reshape(cfg.img_size, ss, cfg.img_size, ss).mean(axis=(1, 3))
    return CrossSectionImage(coverage)


def stack_images(images: Iterable[CrossSectionImage], dtype=np.float32) -> np.ndarray:
    """(N, 1, H, W) tensor for the network"""
    arrays = [img.pixels for img in images]
    if not arrays:
        raise FormatError("no images to stack")
    return np.stack(arrays)[:, None, :, :].astype(dtype)


def encode_pgm(img: CrossSectionImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    body = np.floor(img.pixels * 255.0 + 0.5).astype(np.uint8)
    return header + body.tobytes()


def decode_pgm(data: bytes) -> CrossSectionImage:
    match = _PGM_HEADER.match(data)
    if match is None:
        raise FormatError("not a binary PGM (P5) header")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, expected 255")
    payload = data[match.end():]
    if len(payload) != width * height:
        raise FormatError(f"payload has {len(payload)} bytes, expected {width * height}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width) / 255.0
    return CrossSectionImage(pixels)


def write_pgm(img: CrossSectionImage, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(img))
    return path


def read_pgm(path: Union[str, Path]) -> CrossSectionImage:
    try:
        return decode_pgm(Path(path).read_bytes())
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e
