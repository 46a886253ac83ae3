"""Quantitative evaluation: NRMSE, PSNR, SSIM, slice consistency, histogram W1.

Conventions (recorded in every report so the numbers are interpretable):
NRMSE is normalized by the reference volume's intensity range; SSIM uses an
11x11 Gaussian window (sigma 1.5, k1=0.01, k2=0.03, dynamic range 1.0)
computed per axial slice over valid window positions and averaged, falling
back to global-statistics SSIM when a slice is smaller than the window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .style_key import StyleKey, compute_style_key, histogram_distance
from .volume import Volume

__all__ = [
    "EvalReport",
    "nrmse",
    "psnr",
    "ssim",
    "ssim2d",
    "slice_consistency",
    "evaluate",
]

PSNR_CAP_DB = 200.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

CONVENTIONS = ("nrmse: RMSE / reference range; "
               "ssim: 11x11 Gaussian window sigma=1.5 per axial slice, "
               "averaged; global-statistics fallback below window size; "
               "histogram_w1: prediction clipped to [0,1] before binning")


@dataclass(frozen=True)
class EvalReport:
    nrmse: float
    psnr: float
    ssim: float
    slice_consistency: float
    histogram_w1: float
    nrmse_reference_constant: bool = False
    ssim_global_fallback: bool = False
    conventions: str = CONVENTIONS

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def _check_dims(a: Volume, b: Volume):
    if a.dims != b.dims:
        raise ValueError(f"volume dims differ: {a.dims} vs {b.dims}")


def nrmse(a: Volume, b: Volume) -> float:
    """RMSE of a against reference b, normalized by b's intensity range."""
    v, _ = nrmse_flagged(a, b)
    return v


def nrmse_flagged(a: Volume, b: Volume) -> tuple[float, bool]:
    _check_dims(a, b)
    x = a.data.astype(np.float64)
    r = b.data.astype(np.float64)
    rmse = float(np.sqrt(np.mean((x - r) ** 2)))
    rng = float(r.max() - r.min())
    if rng == 0.0:
        return rmse, True
    return rmse / rng, False


def psnr(a: Volume, b: Volume) -> float:
    """PSNR in dB for unit dynamic range, capped at 200 dB."""
    _check_dims(a, b)
    mse = float(np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2))
    if mse < 1e-20:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_kernel2d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _gaussian_kernel2d(SSIM_WINDOW, SSIM_SIGMA)


def _ssim_global(x: np.ndarray, y: np.ndarray) -> float:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    return float(((2 * mx * my + c1) * (2 * cov + c2))
                 / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def ssim2d(x: np.ndarray, y: np.ndarray) -> tuple[float, bool]:
    """SSIM of two 2-D slices; returns (value, used_global_fallback)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"slice shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        return _ssim_global(x, y), True

    win = (SSIM_WINDOW, SSIM_WINDOW)
    wx = sliding_window_view(x, win)
    wy = sliding_window_view(y, win)
    mx = np.tensordot(wx, _KERNEL, axes=([2, 3], [0, 1]))
    my = np.tensordot(wy, _KERNEL, axes=([2, 3], [0, 1]))
    mxx = np.tensordot(wx * wx, _KERNEL, axes=([2, 3], [0, 1]))
    myy = np.tensordot(wy * wy, _KERNEL, axes=([2, 3], [0, 1]))
    mxy = np.tensordot(wx * wy, _KERNEL, axes=([2, 3], [0, 1]))
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1)
                                                 * (vx + vy + c2))
    return float(s.mean()), False


def ssim(a: Volume, b: Volume) -> float:
    v, _ = ssim_flagged(a, b)
    return v


def ssim_flagged(a: Volume, b: Volume) -> tuple[float, bool]:
    """Mean per-axial-slice SSIM and whether the global fallback was used."""
    _check_dims(a, b)
    vals = []
    fallback = False
    for z in range(a.Z):
        v, fb = ssim2d(a.data[z], b.data[z])
        vals.append(v)
        fallback = fallback or fb
    return float(np.mean(vals)), fallback


def slice_consistency(volume: Volume) -> float:
    """Z-profile total variation of slice means plus adjacent-slice dissimilarity.

    Lower is better; exactly 0 for a volume constant along z.
    """
    if volume.Z < 2:
        raise ValueError(f"need Z >= 2, got Z={volume.Z}")
    means = volume.data.astype(np.float64).mean(axis=(1, 2))
    tv = float(np.abs(np.diff(means)).sum())
    adj = [ssim2d(volume.data[z], volume.data[z + 1])[0]
           for z in range(volume.Z - 1)]
    return tv + (1.0 - float(np.mean(adj)))


def mean_profile_tv(volume: Volume) -> float:
    """Only the slice-mean total-variation term of slice_consistency."""
    means = volume.data.astype(np.float64).mean(axis=(1, 2))
    return float(np.abs(np.diff(means)).sum())


def evaluate(pred: Volume, target: Volume, style_key: StyleKey) -> EvalReport:
    """Full metric report of a translated volume against its ground truth."""
    _check_dims(pred, target)
    nr, nr_flag = nrmse_flagged(pred, target)
    ss, ss_flag = ssim_flagged(pred, target)
    clipped = Volume(np.clip(pred.data, 0.0, 1.0))
    w1 = histogram_distance(compute_style_key(clipped, style_key.bins), style_key)
    return EvalReport(nrmse=nr,
                      psnr=psnr(pred, target),
                      ssim=ss,
                      slice_consistency=slice_consistency(pred),
                      histogram_w1=w1,
                      nrmse_reference_constant=nr_flag,
                      ssim_global_fallback=ss_flag)
