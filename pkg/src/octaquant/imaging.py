"""Loading, normalization and segmentation of grayscale projection maps.

A grayscale image is represented as a 2-D float64 array with intensities in
[0, 1], row-major (shape = (height, width)). A binary mask is a 2-D bool
array of the same shape with True marking vessel pixels.

Supported containers are single-channel PNG (8- or 16-bit) and binary PGM
(P5). Color input is rejected rather than silently converted; projection
maps are single-channel and a silent luma reduction would hide data errors.
"""

from __future__ import annotations

import os
import re

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

_S8 = np.ones((3, 3), dtype=int)  # 8-connectivity structuring element

_GRAY_PNG_MODES = {"L": 8, "I": 16, "I;16": 16, "I;16B": 16, "I;16L": 16}


def _fail_unreadable(path, reason):
    raise ValueError(f"unreadable file: {path}: {reason}")


def _load_pgm(path: str) -> np.ndarray:
    """Parse a binary PGM (P5). Intensities are scaled by 1/maxval."""
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval, separated by whitespace/comments
    pos = 2  # past magic
    fields = []
    while len(fields) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", data[pos:])
        if m is None:
            _fail_unreadable(path, "malformed PGM header")
        fields.append(int(m.group(1)))
        pos += m.end()
    width, height, maxval = fields
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        _fail_unreadable(path, "invalid PGM dimensions or maxval")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    raw = data[pos:pos + need]
    if len(raw) < need:
        _fail_unreadable(path, "truncated pixel data")
    pixels = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    if pixels.max(initial=0) > maxval:
        _fail_unreadable(path, "pixel value exceeds maxval")
    return pixels.astype(np.float64) / float(maxval)


def load_grayscale(path: str) -> np.ndarray:
    """Load a single-channel raster image as a float64 array in [0, 1].

    Parameters
    ----------
    path : str
        PNG (8/16-bit grayscale) or PGM (P5) file.

    Returns
    -------
    ndarray, shape (height, width)
        Intensities scaled by 1/(2^bitdepth - 1) (PNG) or 1/maxval (PGM).

    Raises
    ------
    ValueError
        "unreadable file" for missing/truncated/undecodable input, or a
        rejection message for color and other multi-channel content.
    """
    try:
        with open(path, "rb") as fh:
            magic = fh.read(2)
    except OSError as exc:
        _fail_unreadable(path, exc.strerror or str(exc))
    if magic == b"P5":
        return _load_pgm(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode not in _GRAY_PNG_MODES:
                raise ValueError(
                    f"color input not supported: {path} has mode {mode}; "
                    "expected single-channel grayscale"
                )
            depth = _GRAY_PNG_MODES[mode]
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        _fail_unreadable(path, str(exc))
    full = float(2 ** depth - 1)
    if arr.max(initial=0.0) > full:
        _fail_unreadable(path, "sample value exceeds declared bit depth")
    return arr / full


def save_grayscale(path: str, img: np.ndarray, bit_depth: int = 8) -> None:
    """Write img (float64 in [0,1]) as PNG or PGM at the given bit depth.

    Quantizes with round(v * (2^bit_depth - 1)), so loading a file and
    re-emitting it at the same depth round-trips bit-exactly.
    """
    img = _as_image(img)
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    full = 2 ** bit_depth - 1
    q = np.rint(img * full).astype(np.uint16 if bit_depth == 16 else np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n{full}\n".encode("ascii")
        payload = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
        with open(path, "wb") as fh:
            fh.write(header + payload)
    else:
        # uint16 maps to mode I;16, uint8 to L
        Image.fromarray(q).save(path, format="PNG")


def _as_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale array, got shape {img.shape}")
    return img


def otsu_threshold(img: np.ndarray) -> float:
    """Global Otsu threshold over a fixed 256-bin histogram.

    Intensities are binned as min(floor(v * 256), 255) regardless of input
    bit depth, and each bin k is represented by the level k/255. The scan
    maximizes the between-class variance of the binned data; ties are broken
    toward the smallest threshold. Foreground is intensity > t (see
    ``binarize``), so 8-bit data partitions exactly at the returned level.

    Raises
    ------
    ValueError
        "degenerate histogram" when every split has zero between-class
        variance (constant image). Callers choose between an empty-mask
        fallback and aborting.
    """
    img = _as_image(img)
    if img.size == 0:
        raise ValueError("empty image")
    bins = np.minimum((img * 256.0).astype(np.int64), 255)
    hist = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    levels = np.arange(256, dtype=np.float64) / 255.0
    total = hist.sum()
    w0 = np.cumsum(hist)[:-1]                    # class: bins 0..k
    w1 = total - w0
    mass0 = np.cumsum(hist * levels)[:-1]
    mass1 = (hist * levels).sum() - mass0
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = np.where(w0 > 0, mass0 / w0, 0.0)
        mu1 = np.where(w1 > 0, mass1 / w1, 0.0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    best = float(between.max())
    if best <= 0.0:
        raise ValueError("degenerate histogram")
    k = int(np.argmax(between))  # argmax returns the first (smallest) maximizer
    return float(levels[k])


def binarize(img: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold strictly: mask = (intensity > threshold)."""
    img = _as_image(img)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return img > threshold


def disk_footprint(radius: int) -> np.ndarray:
    """Disk structuring element: offsets with dx^2 + dy^2 <= radius^2.

    radius 0 is the single-pixel identity element; radius 1 is the 5-pixel
    cross (4-neighborhood plus center).
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    r = int(radius)
    yy, xx = np.ogrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def clean_mask(mask: np.ndarray, min_component_px: int = 20, opening_radius: int = 1) -> np.ndarray:
    """Suppress speckle: morphological opening, then small-component removal.

    Parameters
    ----------
    mask : 2-D bool array
    min_component_px : int
        8-connected components smaller than this many pixels are dropped.
    opening_radius : int
        Radius of the disk/cross structuring element; 0 skips the opening.

    Returns
    -------
    2-D bool array, always a subset of the input (both steps only delete).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    if min_component_px < 0:
        raise ValueError(f"min_component_px must be >= 0, got {min_component_px}")
    out = mask
    if opening_radius > 0 and out.any():
        se = disk_footprint(opening_radius)
        out = ndimage.binary_opening(out, structure=se)
    if min_component_px > 1 and out.any():
        labels, n = ndimage.label(out, structure=_S8)
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_component_px
        keep[0] = False
        out = keep[labels]
    return out & mask
