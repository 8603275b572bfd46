"""Feature grids to 8-bit RGB skeleton images.

The three vector components map to R, G, B after independent per-image
min-max scaling to 0..255; images are then resampled to the network input
size with a fixed separable Catmull-Rom cubic kernel (half-pixel centers,
edge-clamped, double-precision accumulation) so results are bit-reproducible.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .body import BodyModel
from .errors import FormatError
from .features import BoneLengthTable, FeatureGrid, build_bp_grid, build_wb_grid
from .runio import atomic_write_bytes
from .skeletons import SkeletonSequence

STREAMS = ("wb_pos", "wb_vel", "bp_pos", "bp_vel")

IMAGE_MAGIC = b"F2CI"
_BASIS_TAG = {"wb": 0, "bp": 1}
_KIND_TAG = {"position": 0, "velocity": 1}
_TAG_BASIS = {v: k for k, v in _BASIS_TAG.items()}
_TAG_KIND = {v: k for k, v in _KIND_TAG.items()}


@dataclass(frozen=True)
class SkeletonImage:
    """H x W x 3 unsigned bytes plus the provenance of the encoded grid."""

    pixels: np.ndarray
    basis: str | None = None
    kind: str | None = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be (H, W, 3) uint8, got {pixels.shape} {pixels.dtype}")
        pixels = pixels.copy()
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def minmax_to_rgb(grid: FeatureGrid) -> np.ndarray:
    """Scale each vector component over the whole grid to bytes 0..255.

    c' = round(255 * (c - min) / (max - min)), rounding half away from zero;
    a degenerate component (max == min) maps to 0 everywhere. x, y, z land in
    R, G, B.
    """
    values = grid.values
    lo = values.min(axis=(0, 1))
    hi = values.max(axis=(0, 1))
    span = hi - lo
    out = np.zeros(values.shape, dtype=np.float64)
    for c in range(3):
        if span[c] > 0:
            # Quotient first: min and max then hit exactly 0.0 and 1.0.
            out[..., c] = 255.0 * ((values[..., c] - lo[c]) / span[c])
    return np.floor(out + 0.5).astype(np.uint8)


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    """Keys cubic kernel with a = -0.5, evaluated at nonnegative offsets."""
    t = np.abs(t)
    near = (1.5 * t - 2.5) * t * t + 1.0
    far = ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_axis(src_len: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices (out_len, 4), edge-clamped, and matching kernel weights."""
    pos = (np.arange(out_len, dtype=np.float64) + 0.5) * (src_len / out_len) - 0.5
    base = np.floor(pos)
    frac = pos - base
    offsets = np.arange(-1, 3, dtype=np.float64)
    weights = _catmull_rom(frac[:, None] - offsets[None, :])
    idx = np.clip(base[:, None].astype(np.int64) + offsets.astype(np.int64), 0, src_len - 1)
    return idx, weights


def cubic_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom resampling of an (H, W, 3) byte image.

    Half-pixel-centered coordinates, clamped borders, float64 accumulation,
    output clamped to 0..255 before rounding. Equal input and output sizes
    reproduce the input exactly (the kernel interpolates its samples).
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    if h < 2 or w < 2:
        raise ValueError(f"source must be at least 2x2, got {h}x{w}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be positive, got {out_h}x{out_w}")

    data = image.astype(np.float64)
    idx_r, w_r = _resample_axis(h, out_h)
    rows = np.einsum("ok,okwc->owc", w_r, data[idx_r])
    idx_c, w_c = _resample_axis(w, out_w)
    cols = np.einsum("ok,hokc->hoc", w_c, rows[:, idx_c])
    return np.floor(np.clip(cols, 0.0, 255.0) + 0.5).astype(np.uint8)


def encode_sequence(
    seq: SkeletonSequence,
    body: BodyModel,
    table: BoneLengthTable | None,
    out_h: int = 224,
    out_w: int = 224,
    normalize_bp: bool = True,
) -> tuple[SkeletonImage, SkeletonImage, SkeletonImage, SkeletonImage]:
    """Four skeleton images per sequence: WB/BP x position/velocity.

    Rows are time, columns joint slots. ``normalize_bp=False`` restricts limb
    normalization to the whole-body grids.
    """
    wb_pos, wb_vel = build_wb_grid(seq, body, table)
    bp_pos, bp_vel = build_bp_grid(seq, body, table if normalize_bp else None)
    images = []
    for grid in (wb_pos, wb_vel, bp_pos, bp_vel):
        pixels = cubic_resize(minmax_to_rgb(grid), out_h, out_w)
        images.append(SkeletonImage(pixels=pixels, basis=grid.basis, kind=grid.kind))
    return tuple(images)


# --------------------------------------------------------------------------
# PNG inspection files

def export_png(image: SkeletonImage, path: str | Path) -> None:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image.pixels), mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def import_png(path: str | Path) -> SkeletonImage:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise FormatError(f"{path}: not a PNG file (format {img.format})")
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a recognized image file") from exc
    except OSError as exc:
        raise FormatError(f"{path}: cannot read image: {exc}") from exc
    return SkeletonImage(pixels=pixels)


# --------------------------------------------------------------------------
# Raw tensor cache: one record per stream image, concatenated in STREAMS
# order. Record header (little-endian): magic 'F2CI', H u16, W u16,
# basis u8, kind u8; then H*W*3 raw bytes.

_IMG_HEADER = struct.Struct("<4sHHBB")


def image_cache_bytes(images: tuple[SkeletonImage, ...]) -> bytes:
    buf = io.BytesIO()
    for img in images:
        if img.basis is None or img.kind is None:
            raise FormatError("cannot cache an image without provenance tags")
        buf.write(
            _IMG_HEADER.pack(
                IMAGE_MAGIC, img.height, img.width, _BASIS_TAG[img.basis], _KIND_TAG[img.kind]
            )
        )
        buf.write(np.ascontiguousarray(img.pixels).tobytes())
    return buf.getvalue()


def write_image_cache(path: str | Path, images: tuple[SkeletonImage, ...]) -> None:
    atomic_write_bytes(path, image_cache_bytes(images))


def read_image_cache(path: str | Path) -> list[SkeletonImage]:
    raw = Path(path).read_bytes()
    images: list[SkeletonImage] = []
    offset = 0
    while offset < len(raw):
        if offset + _IMG_HEADER.size > len(raw):
            raise FormatError(f"{path}: truncated image record header")
        magic, h, w, basis_tag, kind_tag = _IMG_HEADER.unpack_from(raw, offset)
        if magic != IMAGE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at offset {offset}")
        if basis_tag not in _TAG_BASIS or kind_tag not in _TAG_KIND:
            raise FormatError(f"{path}: unknown provenance tags ({basis_tag}, {kind_tag})")
        offset += _IMG_HEADER.size
        size = h * w * 3
        if offset + size > len(raw):
            raise FormatError(f"{path}: truncated image payload")
        pixels = np.frombuffer(raw[offset:offset + size], dtype=np.uint8).reshape(h, w, 3)
        offset += size
        images.append(
            SkeletonImage(pixels=pixels, basis=_TAG_BASIS[basis_tag], kind=_TAG_KIND[kind_tag])
        )
    return images
