"""Slice loading, normalization, degradation, and synthetic phantoms.

Two on-disk dataset forms are supported: a raw volume (flat binary plus a
plain-text layout sidecar naming extents, element type, and endianness)
sliced along its depth axis, and a directory of 8/16-bit grayscale
lossless raster images, one slice per file, sorted by filename. Labeled
datasets for the pretext task are directories of class subdirectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (DataError, DimensionError, LayoutMismatchError,
                     MissingPathError, UnreadableFileError)
from .metrics import bicubic_resize

RASTER_SUFFIXES = {".png", ".pgm", ".tif", ".tiff", ".bmp"}

_DTYPES = {"uint8": "u1", "uint16": "u2", "int16": "i2", "float32": "f4", "float64": "f8"}


@dataclass
class RawLayout:
    shape: tuple[int, int, int]  # H, W, depth
    dtype: str = "uint16"
    endian: str = "little"


@dataclass
class SliceSet:
    slices: list[np.ndarray]
    source: str = ""
    tag: str = ""

    def __len__(self):
        return len(self.slices)


@dataclass
class PatchPair:
    lr: np.ndarray
    hr: np.ndarray
    scale: int
    pair_id: str = ""


def parse_layout(path) -> RawLayout:
    """key=value sidecar: shape=H,W,D dtype=uint16 endian=little."""
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"layout descriptor not found: {path}")
    fields: dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"bad layout line {line!r} in {path}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        shape = tuple(int(v) for v in fields["shape"].split(","))
    except (KeyError, ValueError):
        raise DataError(f"layout {path} needs shape=H,W,D") from None
    if len(shape) != 3 or min(shape) < 1:
        raise DataError(f"layout shape must be three positive extents, got {shape}")
    dtype = fields.get("dtype", "uint16")
    if dtype not in _DTYPES:
        raise DataError(f"unsupported layout dtype {dtype!r}; known: {sorted(_DTYPES)}")
    endian = fields.get("endian", "little")
    if endian not in ("little", "big"):
        raise DataError(f"layout endian must be little or big, got {endian!r}")
    return RawLayout(shape=shape, dtype=dtype, endian=endian)


def write_layout(path, layout: RawLayout):
    Path(path).write_text(
        f"shape={','.join(str(v) for v in layout.shape)}\n"
        f"dtype={layout.dtype}\nendian={layout.endian}\n")


def _load_raw_volume(path: Path, layout: RawLayout | None) -> SliceSet:
    if layout is None:
        layout = parse_layout(path.with_suffix(".layout"))
    h, w, depth = layout.shape
    np_dtype = np.dtype(("<" if layout.endian == "little" else ">") + _DTYPES[layout.dtype])
    expected = h * w * depth * np_dtype.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise LayoutMismatchError(
            f"{path} holds {actual} bytes but layout {layout.shape} {layout.dtype} "
            f"needs {expected}")
    volume = np.fromfile(path, dtype=np_dtype).reshape(h, w, depth)
    slices = [volume[:, :, k].astype(np.float64) for k in range(depth)]
    return SliceSet(slices=slices, source=str(path))


def _load_raster(file: Path) -> np.ndarray:
    try:
        with Image.open(file) as img:
            arr = np.asarray(img)
    except UnidentifiedImageError:
        raise UnreadableFileError(f"cannot decode raster file {file}") from None
    if arr.ndim == 3:  # collapse accidental RGB of a grayscale export
        arr = arr[..., 0]
    return arr.astype(np.float64)


def load_slices(path, layout: RawLayout | None = None, tag: str = "") -> SliceSet:
    """One SliceSet from a raw volume file or a flat directory of rasters."""
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"dataset path does not exist: {path}")
    if path.is_file():
        out = _load_raw_volume(path, layout)
        out.tag = tag
        return out
    files = sorted(p for p in path.iterdir()
                   if p.is_file() and p.suffix.lower() in RASTER_SUFFIXES)
    if not files:
        raise DataError(f"no raster slices found in directory {path}")
    return SliceSet(slices=[_load_raster(f) for f in files], source=str(path), tag=tag)


def load_labeled(path) -> list[SliceSet]:
    """One SliceSet per class subdirectory, tag = subdirectory name."""
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"dataset path does not exist: {path}")
    subdirs = sorted(p for p in path.iterdir() if p.is_dir())
    if not subdirs:
        raise DataError(f"labeled dataset {path} has no class subdirectories")
    return [load_slices(d, tag=d.name) for d in subdirs]


def save_image(path, image):
    """Write a [0,1] float image as a 16-bit grayscale PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 65535.0).astype(np.uint16)).save(Path(path))


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"image does not exist: {path}")
    return _load_raster(path)


# ---------------------------------------------------------------------------
# per-slice transforms

def normalize(image) -> np.ndarray:
    """Min-max to [0,1] per slice; constant slices map to zero. Idempotent."""
    image = np.asarray(image, dtype=np.float64)
    if np.isnan(image).any():
        raise DataError("slice contains NaN values")
    lo = image.min()
    hi = image.max()
    if hi == lo:
        return np.zeros_like(image)
    return (image - lo) / (hi - lo)


def normalize_set(ss: SliceSet) -> SliceSet:
    return SliceSet(slices=[normalize(s) for s in ss.slices], source=ss.source, tag=ss.tag)


def degrade(hr, m: int) -> np.ndarray:
    """Anti-aliased bicubic downsample by 1/m."""
    hr = np.asarray(hr, dtype=np.float64)
    if hr.ndim != 2:
        raise DimensionError(f"degrade expects a 2-D slice, got {hr.shape}")
    m = int(m)
    if m < 1:
        raise DimensionError(f"downscale factor must be >= 1, got {m}")
    if hr.shape[0] % m or hr.shape[1] % m:
        raise DimensionError(f"extents {hr.shape} not divisible by m={m}")
    if m == 1:
        return hr.copy()
    return bicubic_resize(hr, 1.0 / m)


def center_patch_pair(lr, hr, n: int, m: int, pair_id: str = "") -> PatchPair:
    """Aligned center crops: n x n from the LR slice at offset
    floor((extent - n)/2), and the m-scaled window from the HR slice."""
    lr = np.asarray(lr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if lr.ndim != 2 or hr.ndim != 2:
        raise DimensionError(f"center_patch_pair expects 2-D slices, got {lr.shape}, {hr.shape}")
    if hr.shape != (m * lr.shape[0], m * lr.shape[1]):
        raise DimensionError(
            f"HR extents {hr.shape} are not {m}x the LR extents {lr.shape}")
    if n < 1 or n > min(lr.shape):
        raise DimensionError(f"patch extent {n} exceeds LR extents {lr.shape}")
    oy = (lr.shape[0] - n) // 2
    ox = (lr.shape[1] - n) // 2
    lr_patch = lr[oy:oy + n, ox:ox + n]
    hr_patch = hr[m * oy:m * (oy + n), m * ox:m * (ox + n)]
    return PatchPair(lr=lr_patch.copy(), hr=hr_patch.copy(), scale=m, pair_id=pair_id)


# ---------------------------------------------------------------------------
# synthetic phantoms

def synth_phantom(seed: int, size: int, family: int | None = None) -> np.ndarray:
    """Deterministic ellipse-and-gradient phantom in [0,1].

    family picks a structural class (0: few large lobes, 1: many small
    lobes, 2: concentric rings) so phantom sets can carry class labels;
    by default it derives from the seed.
    """
    if size < 8:
        raise DimensionError(f"phantom size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    if family is None:
        family = int(seed) % 3
    family = int(family) % 3
    ax = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(ax, ax)

    gx, gy = rng.uniform(-1.0, 1.0, size=2)
    img = 0.22 + 0.10 * (gx * xx + gy * yy)
    img += 0.04 * np.sin(2.0 * np.pi * (1.5 * xx + rng.uniform())) * \
        np.cos(2.0 * np.pi * (1.5 * yy + rng.uniform()))

    if family == 0:
        specs = [(0.55, 0.45), (0.30, 0.22)]
    elif family == 1:
        specs = [(0.18, 0.14)] * 5
    else:
        specs = [(0.55, 0.55), (0.38, 0.38), (0.20, 0.20)]
    ring_center = rng.uniform(-0.15, 0.15, size=2)

    for idx, (a, b) in enumerate(specs):
        if family == 2:  # concentric rings share a center
            cx, cy = ring_center
            level = 0.25 + 0.3 * idx + rng.uniform(0.0, 0.1)
        else:
            cx, cy = rng.uniform(-0.45, 0.45, size=2)
            level = rng.uniform(0.35, 0.92)
        theta = rng.uniform(0.0, np.pi)
        xr = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        yr = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        mask = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
        img = np.where(mask, 0.25 * img + 0.75 * level, img)

    return np.clip(img, 0.0, 1.0)


def phantom_set(n: int, size: int, seed: int, family: int | None = None,
                tag: str = "") -> SliceSet:
    slices = [synth_phantom(seed + i, size, family=family) for i in range(n)]
    return SliceSet(slices=slices, source=f"phantom(seed={seed})", tag=tag)
