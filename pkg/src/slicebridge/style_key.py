"""Histogram-triple style keys: compute, average, compare, serialize.

A style key is the triple (histogram, cumulative histogram, backward
histogram differential) over B bins of a [0, 1]-normalized volume. The
histogram is probability mass (sums to 1) so keys are comparable across
volume sizes and can be averaged over a dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .volume import Volume

__all__ = [
    "StyleKey",
    "DEFAULT_BINS",
    "compute_style_key",
    "average_style_keys",
    "histogram_distance",
    "key_from_hist",
]

DEFAULT_BINS = 128


@dataclass(frozen=True)
class StyleKey:
    bins: int
    hist: np.ndarray
    cum: np.ndarray
    diff: np.ndarray

    def __post_init__(self):
        for arr in (self.hist, self.cum, self.diff):
            if arr.shape != (self.bins,):
                raise ValueError(f"style key arrays must have shape ({self.bins},)")
            arr.setflags(write=False)

    def as_vector(self) -> np.ndarray:
        """Flat [hist | cum | diff] conditioning vector of length 3B."""
        return np.concatenate([self.hist, self.cum, self.diff])

    def to_json(self) -> str:
        return json.dumps({"bins": self.bins,
                           "hist": self.hist.tolist(),
                           "cum": self.cum.tolist(),
                           "diff": self.diff.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "StyleKey":
        d = json.loads(text)
        return cls(bins=int(d["bins"]),
                   hist=np.asarray(d["hist"], dtype=np.float64),
                   cum=np.asarray(d["cum"], dtype=np.float64),
                   diff=np.asarray(d["diff"], dtype=np.float64))


def key_from_hist(hist: np.ndarray) -> StyleKey:
    """Build the full triple from a probability-mass histogram."""
    hist = np.asarray(hist, dtype=np.float64)
    cum = np.cumsum(hist)
    diff = np.empty_like(hist)
    diff[0] = hist[0]
    diff[1:] = hist[1:] - hist[:-1]
    return StyleKey(bins=hist.size, hist=hist, cum=cum, diff=diff)


def compute_style_key(volume: Volume, bins: int = DEFAULT_BINS) -> StyleKey:
    """Style key of a [0, 1]-normalized volume over all voxels.

    Bin k covers [k/B, (k+1)/B); the last bin is closed so 1.0 lands in
    bin B-1.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    v = volume.data.ravel().astype(np.float64)
    idx = np.minimum((v * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    return key_from_hist(counts / counts.sum())


def average_style_keys(keys: Sequence[StyleKey]) -> StyleKey:
    """Element-wise mean histogram; cum and diff recomputed from it.

    Summation order is fixed (list order over a float64 accumulator) so
    results are bit-exact for a given input order; the mean itself is
    order-invariant up to rounding.
    """
    if not keys:
        raise ValueError("cannot average an empty list of style keys")
    bins = keys[0].bins
    if any(k.bins != bins for k in keys):
        raise ValueError("all style keys must have the same bin count")
    acc = np.zeros(bins)
    for k in keys:
        acc += k.hist
    return key_from_hist(acc / len(keys))


def histogram_distance(a: StyleKey, b: StyleKey) -> float:
    """Wasserstein-1 distance between the two intensity distributions.

    Equals the L1 distance of the cumulative histograms scaled by the bin
    width; symmetric, and zero iff the histograms coincide.
    """
    if a.bins != b.bins:
        raise ValueError(f"bin count mismatch: {a.bins} vs {b.bins}")
    return float(np.abs(a.cum - b.cum).sum() / a.bins)
