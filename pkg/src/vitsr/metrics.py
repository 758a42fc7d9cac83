"""Image quality metrics and the shared bicubic resampler.

All metrics take 2-D float arrays. PSNR of identical images is +inf and
serializes as the literal "inf". SSIM follows the classic single-scale
recipe: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, computed on
valid window positions only (no padding). NMSE normalizes squared error
by the reference energy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import convolve2d

from .errors import DataError, DimensionError

CSV_HEADER = ["pair_id", "scale", "psnr_db", "ssim", "nmse"]


def _check_pair(ref, test) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.ndim != 2 or test.ndim != 2:
        raise DimensionError(f"metrics expect 2-D images, got {ref.shape} and {test.shape}")
    if ref.shape != test.shape:
        raise DimensionError(f"image shapes differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    ref, test = _check_pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def nmse(ref, test) -> float:
    """Squared error normalized by reference energy."""
    ref, test = _check_pair(ref, test)
    energy = float(np.sum(ref * ref))
    if energy == 0.0:
        raise DataError("NMSE undefined for an all-zero reference image")
    return float(np.sum((ref - test) ** 2)) / energy


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(x, y, peak: float = 1.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over valid window positions."""
    x, y = _check_pair(x, y)
    if min(x.shape) < window:
        raise DimensionError(f"image {x.shape} smaller than the {window}x{window} SSIM window")
    g = _gaussian_window(window, sigma)
    mu_x = convolve2d(x, g, mode="valid")
    mu_y = convolve2d(y, g, mode="valid")
    xx = convolve2d(x * x, g, mode="valid") - mu_x * mu_x
    yy = convolve2d(y * y, g, mode="valid") - mu_y * mu_y
    xy = convolve2d(x * y, g, mode="valid") - mu_x * mu_y
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    score = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / \
            ((mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2))
    return float(score.mean())


# ---------------------------------------------------------------------------
# bicubic resampling (Catmull-Rom, a = -0.5)

def _catmull_rom(t: np.ndarray) -> np.ndarray:
    at = np.abs(t)
    w = np.where(at <= 1.0, 1.5 * at ** 3 - 2.5 * at ** 2 + 1.0,
                 np.where(at < 2.0, -0.5 * at ** 3 + 2.5 * at ** 2 - 4.0 * at + 2.0, 0.0))
    return w


def _axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic resampling matrix for one axis.

    Output sample i reads input coordinate (i + 0.5) * n_in/n_out - 0.5.
    Downscaling stretches the kernel by the inverse factor (anti-alias)
    and renormalizes; out-of-range taps clamp to the edge sample.
    """
    scale = n_in / n_out
    stretch = max(scale, 1.0)
    support = 2.0 * stretch
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = int(math.floor(center - support)) + 1
        hi = int(math.floor(center + support))
        taps = np.arange(lo, hi + 1)
        weights = _catmull_rom((center - taps) / stretch)
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), weights)
        mat[i] /= mat[i].sum()
    return mat


def _round_extent(n: int, factor: Fraction | float) -> int:
    return max(1, int(math.floor(n * factor + 0.5)))


def bicubic_resize(image, factor) -> np.ndarray:
    """Separable Catmull-Rom resize, rows then columns.

    factor may be a float or Fraction; output extents are
    round(extent * factor) (half rounds up), at least 1.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionError(f"bicubic_resize expects a 2-D image, got {image.shape}")
    if isinstance(factor, Fraction):
        factor = float(factor)
    if not factor > 0:
        raise DimensionError(f"resize factor must be positive, got {factor}")
    h, w = image.shape
    h_out, w_out = _round_extent(h, factor), _round_extent(w, factor)
    rows = _axis_matrix(h, h_out)
    cols = _axis_matrix(w, w_out)
    return rows @ image @ cols.T


# ---------------------------------------------------------------------------
# pair evaluation and CSV schema

@dataclass
class MetricRecord:
    pair_id: str
    scale: int
    psnr_db: float
    ssim: float
    nmse: float

    def row(self) -> list[str]:
        return [self.pair_id, str(self.scale), _fmt(self.psnr_db),
                _fmt(self.ssim), _fmt(self.nmse)]


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def evaluate_pair(ref, test, scale: int, pair_id: str = "") -> MetricRecord:
    ref, test = _check_pair(ref, test)
    return MetricRecord(pair_id=pair_id, scale=int(scale),
                        psnr_db=psnr(ref, test), ssim=ssim(ref, test),
                        nmse=nmse(ref, test))


def write_metrics_csv(records: list[MetricRecord], path, extra_columns: dict | None = None,
                      mean_row: bool = True):
    """records to CSV. extra_columns maps column name -> list aligned with
    records (the bicubic-baseline columns). A mean row is appended with
    pair_id "mean"; infinities propagate into the mean."""
    extra = extra_columns or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER + list(extra))
        for i, rec in enumerate(records):
            writer.writerow(rec.row() + [_fmt(extra[name][i]) for name in extra])
        if mean_row and records:
            fields = [[r.psnr_db for r in records], [r.ssim for r in records],
                      [r.nmse for r in records]]
            means = [sum(col) / len(col) for col in fields]
            scale = records[0].scale
            row = ["mean", str(scale)] + [_fmt(v) for v in means]
            row += [_fmt(sum(extra[name]) / len(extra[name])) for name in extra]
            writer.writerow(row)


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]
