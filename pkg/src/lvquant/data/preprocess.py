"""ROI cropping, resizing, standardization, crop augmentation, and the
mm <-> normalized-unit conversion of regression targets."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import DimensionError

OUT_SIZE = 80
CROP_SIZE = 75
CENTER_OFFSET = (2, 2)

# label layout: cavity, myo, dim1..3, rwt x6, phase
AREA_COLS = slice(0, 2)
DIM_COLS = slice(2, 5)
RWT_COLS = slice(5, 11)
PHASE_COL = 11


def _roi_coords(roi_center, roi_size, out_size):
    cx, cy = roi_center
    step = roi_size / out_size
    base = (np.arange(out_size) + 0.5) * step
    ys = cy - roi_size / 2.0 + base
    xs = cx - roi_size / 2.0 + base
    return xs, ys


def crop_resize(raw_image, roi_center, roi_size: float, out_size: int = OUT_SIZE):
    """Bilinear resample of a square ROI; returns (image, was_padded).

    Pixel centers sit at integer coordinates, so an ROI of ``out_size`` pixels
    centered on a half-integer is an exact crop.
    """
    raw = np.asarray(raw_image, dtype=np.float64)
    if raw.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {raw.shape}")
    xs, ys = _roi_coords(roi_center, roi_size, out_size)
    padded = bool(xs[0] < 0 or ys[0] < 0 or xs[-1] > raw.shape[1] - 1 or ys[-1] > raw.shape[0] - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = ndimage.map_coordinates(raw, [yy, xx], order=1, mode="nearest")
    return out, padded


def preprocess_frame(raw_image, roi_center, spacing: float, roi_size: float = OUT_SIZE,
                     out_size: int = OUT_SIZE, stats: tuple[float, float] | None = None):
    """Crop/resize one frame and standardize it.

    Returns ``(image, effective_spacing, padded)``. ``stats`` is the
    (mean, std) to standardize with; the frame's own statistics otherwise.
    ROIs that leave the raw image are edge-replicated and flagged.
    """
    img, padded = crop_resize(raw_image, roi_center, roi_size, out_size)
    mean, std = stats if stats is not None else (img.mean(), img.std())
    img = (img - mean) / (std if std > 0 else 1.0)
    return img.astype(np.float32), spacing * roi_size / out_size, padded


def preprocess_sequence(frames, roi_center, spacing: float, roi_size: float = 72.0,
                        out_size: int = OUT_SIZE):
    """Crop/resize every frame, then standardize over the whole sequence."""
    resized, flags = [], []
    for fr in frames:
        img, pad = crop_resize(fr, roi_center, roi_size, out_size)
        resized.append(img)
        flags.append(pad)
    stack = np.asarray(resized)
    std = stack.std()
    stack = (stack - stack.mean()) / (std if std > 0 else 1.0)
    return stack.astype(np.float32), spacing * roi_size / out_size, any(flags)


def transform_contour(poly, roi_center, roi_size: float, out_size: int = OUT_SIZE):
    """Map raw-image contour coordinates into the resized ROI frame."""
    p = np.asarray(poly, dtype=np.float64)
    origin = np.asarray(roi_center, dtype=np.float64) - roi_size / 2.0
    return (p - origin) * (out_size / roi_size) - 0.5


def crop_offsets(size: int = OUT_SIZE, crop: int = CROP_SIZE):
    n = size - crop + 1
    return [(i, j) for i in range(n) for j in range(n)]


def augment_crop(image, mode: str = "eval", seed=None, offset=None):
    """75x75 crop of an 80x80 image (or of every frame of an (F, 80, 80) stack).

    Train mode draws a uniform top-left offset in [0, 5] x [0, 5] from
    ``seed``; eval mode uses the fixed center crop at (2, 2).
    """
    img = np.asarray(image)
    if img.shape[-2:] != (OUT_SIZE, OUT_SIZE):
        raise DimensionError(f"augment_crop expects {OUT_SIZE}x{OUT_SIZE} input, got {img.shape}")
    if offset is None:
        if mode == "train":
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            offset = tuple(int(v) for v in rng.integers(0, OUT_SIZE - CROP_SIZE + 1, size=2))
        elif mode == "eval":
            offset = CENTER_OFFSET
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    i, j = offset
    return img[..., i:i + CROP_SIZE, j:j + CROP_SIZE]


def normalize_targets(labels, spacing: float) -> np.ndarray:
    """mm / mm^2 regression targets -> fractions of the 80-pixel field of view."""
    out = np.array(labels, dtype=np.float64, copy=True)
    length = OUT_SIZE * spacing
    out[..., AREA_COLS] /= length * length
    out[..., DIM_COLS.start:RWT_COLS.stop] /= length
    return out


def denormalize_targets(values, spacing: float) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    length = OUT_SIZE * spacing
    out[..., AREA_COLS] *= length * length
    out[..., DIM_COLS.start:RWT_COLS.stop] *= length
    return out
