"""Metric tests. PSNR/SSIM/NMSE/bicubic expectations come from direct
loop oracles written here, independent of the vectorized module code."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitsr import metrics
from vitsr.errors import DataError, DimensionError

RNG = np.random.default_rng(0xBEEF)


# ---------------------------------------------------------------------------
# oracles

def psnr_oracle(ref, test, peak=1.0):
    err = 0.0
    for a, b in zip(ref.ravel(), test.ravel()):
        err += (a - b) ** 2
    err /= ref.size
    return math.inf if err == 0 else 10 * math.log10(peak * peak / err)


def ssim_oracle(x, y, peak=1.0, window=11, sigma=1.5, k1=0.01, k2=0.03):
    half = (window - 1) / 2.0
    g = np.zeros((window, window))
    for i in range(window):
        for j in range(window):
            g[i, j] = math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    h, w = x.shape
    scores = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            wx = x[i:i + window, j:j + window]
            wy = y[i:i + window, j:j + window]
            mx = (g * wx).sum()
            my = (g * wy).sum()
            vx = (g * wx * wx).sum() - mx * mx
            vy = (g * wy * wy).sum() - my * my
            cxy = (g * wx * wy).sum() - mx * my
            scores.append(((2 * mx * my + c1) * (2 * cxy + c2)) /
                          ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(scores) / len(scores)


def catmull_rom_scalar(t):
    t = abs(t)
    if t <= 1:
        return 1.5 * t ** 3 - 2.5 * t ** 2 + 1
    if t < 2:
        return -0.5 * t ** 3 + 2.5 * t ** 2 - 4 * t + 2
    return 0.0


def resize_axis_oracle(signal, n_out):
    """Direct per-sample evaluation of the documented resampling rule."""
    n_in = len(signal)
    scale = n_in / n_out
    stretch = max(scale, 1.0)
    out = np.zeros(n_out)
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = int(math.floor(center - 2 * stretch)) + 1
        hi = int(math.floor(center + 2 * stretch))
        total = 0.0
        wsum = 0.0
        for k in range(lo, hi + 1):
            w = catmull_rom_scalar((center - k) / stretch)
            total += w * signal[min(max(k, 0), n_in - 1)]
            wsum += w
        out[i] = total / wsum
    return out


def bicubic_oracle(image, factor):
    h, w = image.shape
    h_out = max(1, int(math.floor(h * factor + 0.5)))
    w_out = max(1, int(math.floor(w * factor + 0.5)))
    tmp = np.stack([resize_axis_oracle(image[:, j], h_out) for j in range(w)], axis=1)
    return np.stack([resize_axis_oracle(tmp[i, :], w_out) for i in range(h_out)], axis=0)


# ---------------------------------------------------------------------------
# PSNR

def test_psnr_identical_images_is_inf():
    x = RNG.random((16, 16))
    assert metrics.psnr(x, x) == math.inf


def test_psnr_uniform_error_20db():
    ref = np.zeros((8, 8))
    test = np.full((8, 8), 0.1)  # squared error 0.01 everywhere
    assert abs(metrics.psnr(ref, test) - 20.0) < 1e-12


def test_psnr_matches_oracle():
    ref = RNG.random((12, 12))
    test = RNG.random((12, 12))
    assert abs(metrics.psnr(ref, test) - psnr_oracle(ref, test)) < 1e-9


def test_psnr_monotone_in_mse():
    ref = np.zeros((8, 8))
    noisy = [ref + eps for eps in (0.01, 0.05, 0.2)]
    values = [metrics.psnr(ref, t) for t in noisy]
    assert values[0] > values[1] > values[2]


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        metrics.psnr(np.zeros((4, 4)), np.zeros((4, 5)))


# ---------------------------------------------------------------------------
# SSIM

def test_ssim_self_is_one():
    x = RNG.random((16, 16))
    assert abs(metrics.ssim(x, x) - 1.0) < 1e-9


def test_ssim_symmetry():
    x = RNG.random((14, 14))
    y = RNG.random((14, 14))
    assert abs(metrics.ssim(x, y) - metrics.ssim(y, x)) < 1e-12


def test_ssim_matches_window_oracle():
    x = RNG.random((16, 16))
    y = np.clip(x + RNG.normal(0, 0.08, x.shape), 0, 1)
    assert abs(metrics.ssim(x, y) - ssim_oracle(x, y)) < 1e-6


def test_ssim_degrades_with_noise():
    x = RNG.random((20, 20))
    mild = np.clip(x + RNG.normal(0, 0.02, x.shape), 0, 1)
    harsh = np.clip(x + RNG.normal(0, 0.3, x.shape), 0, 1)
    assert metrics.ssim(x, mild) > metrics.ssim(x, harsh)


def test_ssim_image_smaller_than_window():
    with pytest.raises(DimensionError):
        metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# ---------------------------------------------------------------------------
# NMSE

def test_nmse_identities():
    ref = RNG.random((10, 10)) + 0.1
    assert metrics.nmse(ref, ref) == 0.0
    assert abs(metrics.nmse(ref, np.zeros_like(ref)) - 1.0) < 1e-12
    assert abs(metrics.nmse(ref, 2 * ref) - 1.0) < 1e-12


def test_nmse_zero_reference_is_error():
    with pytest.raises(DataError):
        metrics.nmse(np.zeros((4, 4)), np.ones((4, 4)))


def test_nmse_scale_invariance():
    ref = RNG.random((10, 10)) + 0.1
    test = RNG.random((10, 10))
    v1 = metrics.nmse(ref, test)
    v2 = metrics.nmse(5.0 * ref, 5.0 * test)
    assert abs(v1 - v2) < 1e-12


# ---------------------------------------------------------------------------
# bicubic resize

def test_bicubic_constant_stays_constant():
    for factor in (0.5, 1.0, 2.0, 1.5):
        out = metrics.bicubic_resize(np.full((12, 12), 0.37), factor)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)


def test_bicubic_factor_one_is_identity():
    x = RNG.random((9, 13))
    np.testing.assert_allclose(metrics.bicubic_resize(x, 1.0), x, atol=1e-9)


def test_bicubic_upscale_matches_direct_oracle():
    x = np.tile(np.linspace(0, 1, 8), (8, 1))  # linear ramp
    np.testing.assert_allclose(metrics.bicubic_resize(x, 2.0), bicubic_oracle(x, 2.0), atol=1e-6)


def test_bicubic_random_image_matches_oracle_both_directions():
    x = RNG.random((10, 14))
    for factor in (2.0, 0.5, 1.25):
        np.testing.assert_allclose(metrics.bicubic_resize(x, factor),
                                   bicubic_oracle(x, factor), atol=1e-9)


def test_bicubic_output_extents():
    x = np.zeros((10, 7))
    assert metrics.bicubic_resize(x, 2.0).shape == (20, 14)
    assert metrics.bicubic_resize(x, 0.5).shape == (5, 4)  # round(3.5) -> 4
    assert metrics.bicubic_resize(x, 0.1).shape == (1, 1)


def test_bicubic_rejects_bad_inputs():
    with pytest.raises(DimensionError):
        metrics.bicubic_resize(np.zeros(5), 2.0)
    with pytest.raises(DimensionError):
        metrics.bicubic_resize(np.zeros((4, 4)), 0.0)


# ---------------------------------------------------------------------------
# evaluate_pair and CSV

def test_evaluate_pair_identity_sentinels():
    x = RNG.random((16, 16))
    rec = metrics.evaluate_pair(x, x, scale=2, pair_id="p0")
    assert rec.psnr_db == math.inf
    assert abs(rec.ssim - 1.0) < 1e-9
    assert rec.nmse == 0.0


def test_evaluate_pair_consistent_with_functions():
    ref = RNG.random((16, 16))
    test = RNG.random((16, 16))
    rec = metrics.evaluate_pair(ref, test, scale=4)
    assert rec.psnr_db == metrics.psnr(ref, test)
    assert rec.ssim == metrics.ssim(ref, test)
    assert rec.nmse == metrics.nmse(ref, test)


def test_metrics_csv_roundtrip(tmp_path):
    x = RNG.random((16, 16))
    recs = [metrics.evaluate_pair(x, x, 2, "a"),
            metrics.evaluate_pair(x, np.clip(x + 0.05, 0, 1), 2, "b")]
    path = tmp_path / "m.csv"
    metrics.write_metrics_csv(recs, path)
    rows = metrics.read_metrics_csv(path)
    assert [r["pair_id"] for r in rows] == ["a", "b", "mean"]
    assert rows[0]["psnr_db"] == "inf"
    assert float(rows[1]["ssim"]) == recs[1].ssim
    assert rows[2]["psnr_db"] == "inf"  # inf propagates into the mean


def test_metrics_csv_extra_baseline_column(tmp_path):
    x = RNG.random((16, 16))
    recs = [metrics.evaluate_pair(x, np.clip(x + 0.1, 0, 1), 2, "a")]
    path = tmp_path / "m.csv"
    metrics.write_metrics_csv(recs, path, extra_columns={"psnr_db_bicubic": [31.5]})
    rows = metrics.read_metrics_csv(path)
    assert float(rows[0]["psnr_db_bicubic"]) == 31.5


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 10 ** 6))
def test_psnr_ssim_nmse_oracle_property(seed):
    rng = np.random.default_rng(seed)
    ref = rng.random((12, 12))
    test = np.clip(ref + rng.normal(0, 0.1, ref.shape), 0, 1)
    assert abs(metrics.psnr(ref, test) - psnr_oracle(ref, test)) < 1e-9
    assert abs(metrics.ssim(ref, test) - ssim_oracle(ref, test)) < 1e-6
