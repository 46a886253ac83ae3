"""Forward bridge sampling and deterministic reverse sampling over volumes.

Reverse sampling starts from X_T = Y (the source volume) and walks a
uniformly spaced time grid down to 0. At each step the predicted target
x0_hat = x_t - eps_hat is plugged into the deterministic transition

    x_next = (1 - m_next) x0_hat + m_next y
             + sqrt(delta_next / delta_t) (x_t - (1 - m_t) x0_hat - m_t y),

the unique noise-free map that preserves the bridge marginals. The aligned
sampler additionally co-predicts (averages all overlapping window
predictions per slice) and applies score-guided deterministic correction
steps. Everything after X_T = Y is noise-free, so outputs are bit-identical
across runs and across worker counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimator import NoiseEstimator
from .schedule import ScheduleTable, subsequence
from .style_key import StyleKey
from .volume import Volume

__all__ = [
    "SamplerConfig",
    "forward_sample",
    "reverse_step",
    "co_predict",
    "score",
    "correct",
    "ista_sample",
    "naive_sample",
]

SCORE_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class SamplerConfig:
    """Reverse-sampling settings.

    The default preset is 100 plain steps; the aligned-with-correction
    preset is 50 steps with M=1. seed is unused by the deterministic path
    and kept for API symmetry.
    """

    n_steps: int = 100
    ista: bool = False
    M: int = 1
    lam: float = 0.5
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.M < 0 or self.lam <= 0 or self.threads < 1:
            raise ValueError("invalid sampler configuration")

    @classmethod
    def ista_preset(cls, **kw) -> "SamplerConfig":
        kw.setdefault("n_steps", 50)
        kw.setdefault("M", 1)
        return cls(ista=True, **kw)


def forward_sample(x0, y, t: int, noise, schedule: ScheduleTable):
    """Draw x_t from the forward bridge given endpoint fields and noise."""
    x0, y, noise = np.asarray(x0), np.asarray(y), np.asarray(noise)
    if not (x0.shape == y.shape == noise.shape):
        raise ValueError(f"shape mismatch: {x0.shape}, {y.shape}, {noise.shape}")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t must be in [0, T], got {t}")
    m_t = schedule.m[t]
    return (1.0 - m_t) * x0 + m_t * y + np.sqrt(schedule.delta[t]) * noise


def reverse_step(x_t, eps_hat, y, t: int, t_next: int, schedule: ScheduleTable):
    """Deterministic jump from time t to t_next given the prediction."""
    if not t > t_next >= 0:
        raise ValueError(f"need t > t_next >= 0, got t={t}, t_next={t_next}")
    x_t, eps_hat, y = np.asarray(x_t), np.asarray(eps_hat), np.asarray(y)
    if not (x_t.shape == eps_hat.shape == y.shape):
        raise ValueError(
            f"shape mismatch: {x_t.shape}, {eps_hat.shape}, {y.shape}")
    m_t, m_n = schedule.m[t], schedule.m[t_next]
    d_t, d_n = schedule.delta[t], schedule.delta[t_next]
    x0_hat = x_t - eps_hat
    mean = (1.0 - m_n) * x0_hat + m_n * y
    if d_t <= 0.0:
        return mean
    resid = x_t - (1.0 - m_t) * x0_hat - m_t * y
    return mean + np.sqrt(d_n / d_t) * resid


def _window_stacks(arr: np.ndarray, N: int) -> np.ndarray:
    """All (2N+1)-slice windows with replicate-edge padding, (Z, 2N+1, H, W).

    Keeps the input dtype: the oracle path must stay float64 so that exact
    trajectories yield score norms at rounding level (below the correction
    guard), not float32-rounding level.
    """
    Z = arr.shape[0]
    idx = np.clip(np.arange(Z)[:, None] + np.arange(-N, N + 1)[None, :], 0, Z - 1)
    return arr[idx]


def _window_predictions(X_t: np.ndarray, Y: Volume, key: StyleKey, t: int,
                        estimator: NoiseEstimator, threads: int) -> np.ndarray:
    """Prediction stack for every window center j, shape (Z, 2N+1, H, W).

    Each window is predicted independently; worker threads only change who
    computes which window, never the values or the later reduction order.
    """
    N = estimator.half_width
    Z = X_t.shape[0]
    xt_stacks = _window_stacks(np.asarray(X_t, dtype=np.float64), N)
    y_stacks = _window_stacks(Y.data.astype(np.float64), N)
    preds = np.empty_like(xt_stacks)

    # fixed chunking: the set of estimator calls (and so every floating-point
    # result) is independent of the worker count; threads only decide who
    # runs which chunk
    chunk = 8
    spans = [(a, min(a + chunk, Z)) for a in range(0, Z, chunk)]

    def run(span):
        a, b = span
        preds[a:b] = estimator.predict_batch(
            xt_stacks[a:b], key, np.full(b - a, t),
            source_stacks=y_stacks[a:b], center_indices=list(range(a, b)))

    if threads == 1:
        for span in spans:
            run(span)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    return preds


def co_predict(X_t, Y: Volume, key: StyleKey, t: int,
               estimator: NoiseEstimator, threads: int = 1) -> np.ndarray:
    """Aggregate overlapping window predictions into one volume.

    Slice i receives one prediction from every window centered at
    j in [i-N, i+N] clipped to the volume (fewer windows at the edges);
    predictions are averaged in fixed (j ascending) order.
    """
    X_t = np.asarray(X_t, dtype=np.float64)
    if X_t.shape != Y.dims:
        raise ValueError(f"latent shape {X_t.shape} != source dims {Y.dims}")
    N = estimator.half_width
    Z = X_t.shape[0]
    preds = _window_predictions(X_t, Y, key, t, estimator, threads)
    acc = np.zeros_like(X_t)
    cnt = np.zeros(Z)
    for j in range(Z):
        for r in range(2 * N + 1):
            i = j + (r - N)
            if 0 <= i < Z:
                acc[i] += preds[j, r]
                cnt[i] += 1
    return acc / cnt[:, None, None]


def score(X_t, Y: Volume, key: StyleKey, t: int, estimator: NoiseEstimator,
          threads: int = 1, cp: np.ndarray | None = None) -> np.ndarray:
    """Score of the bridge perturbation kernel at X_t.

    Defined for interior times only (the bridge variance vanishes at the
    endpoints). cp may pass in a precomputed co-prediction.
    """
    if not 0 < t < estimator_T(estimator):
        raise ValueError(f"score undefined at t={t}: bridge variance is zero")
    X_t = np.asarray(X_t, dtype=np.float64)
    if cp is None:
        cp = co_predict(X_t, Y, key, t, estimator, threads)
    table = _schedule_of(estimator)
    m_t, d_t = table.m[t], table.delta[t]
    return -(m_t * (X_t - Y.data.astype(np.float64)) + (1.0 - m_t) * cp) / d_t


def correct(X_bar, Y: Volume, key: StyleKey, t: int, lam: float, M: int,
            estimator: NoiseEstimator, threads: int = 1,
            diagnostics: list | None = None) -> np.ndarray:
    """M deterministic score-guided correction steps at time t.

    The step size is adaptively weighted per slice: with d = H*W and the
    slice-wise L2 norm of the score, each slice moves by
    lam * delta_cond[t] * d / |S|^2 * S. Slices with a vanishing score norm
    are left unchanged.
    """
    X = np.asarray(X_bar, dtype=np.float64).copy()
    table = _schedule_of(estimator)
    if M == 0:
        return X
    if not 0 < t < table.T:
        raise ValueError(f"correction undefined at t={t}")
    d = X.shape[1] * X.shape[2]
    step = lam * table.delta_cond[t]
    for _ in range(M):
        S = score(X, Y, key, t, estimator, threads)
        norms = np.sqrt(np.sum(S * S, axis=(1, 2)))
        movable = norms >= SCORE_NORM_FLOOR
        scale = np.where(movable, step * d / np.maximum(norms, SCORE_NORM_FLOOR) ** 2, 0.0)
        X = X + scale[:, None, None] * S
        if diagnostics is not None:
            diagnostics.append({"t": t,
                                "score_norm_mean": float(norms.mean()),
                                "correction_mag_mean": float(np.abs(
                                    scale[:, None, None] * S).mean())})
    return X


def _schedule_of(estimator: NoiseEstimator) -> ScheduleTable:
    sched = getattr(estimator, "schedule", None)
    if sched is None:
        raise AttributeError("estimator does not carry a schedule")
    return sched


def estimator_T(estimator: NoiseEstimator) -> int:
    return _schedule_of(estimator).T


def ista_sample(Y: Volume, key: StyleKey, config: SamplerConfig,
                estimator: NoiseEstimator, schedule: ScheduleTable):
    """Aligned reverse sampling: co-prediction each step, optional correction.

    Returns (translated Volume, diagnostics dict). M=0 gives the
    co-prediction-only variant. Fully deterministic.
    """
    _bind_schedule(estimator, schedule)
    X = Y.data.astype(np.float64).copy()
    times = subsequence(schedule.T, config.n_steps)
    diag = {"steps": [], "corrections": []}
    for t, t_next in zip(times[:-1], times[1:]):
        E = co_predict(X, Y, key, t, estimator, config.threads)
        X = reverse_step(X, E, Y.data.astype(np.float64), t, t_next, schedule)
        diag["steps"].append({"t": t, "t_next": t_next,
                              "pred_mag_mean": float(np.abs(E).mean())})
        if config.M > 0 and 0 < t_next < schedule.T:
            X = correct(X, Y, key, t_next, config.lam, config.M, estimator,
                        config.threads, diagnostics=diag["corrections"])
    return Volume(X.astype(np.float32)), diag


def naive_sample(Y: Volume, key: StyleKey, config: SamplerConfig,
                 estimator: NoiseEstimator, schedule: ScheduleTable):
    """Per-slice independent reverse sampling (no aggregation, no correction).

    Each slice uses only the center row of its own window's prediction.
    """
    _bind_schedule(estimator, schedule)
    N = estimator.half_width
    X = Y.data.astype(np.float64).copy()
    times = subsequence(schedule.T, config.n_steps)
    y64 = Y.data.astype(np.float64)
    for t, t_next in zip(times[:-1], times[1:]):
        preds = _window_predictions(X, Y, key, t, estimator, config.threads)
        eps_hat = preds[:, N].astype(np.float64)
        X = reverse_step(X, eps_hat, y64, t, t_next, schedule)
    return Volume(X.astype(np.float32))


def _bind_schedule(estimator: NoiseEstimator, schedule: ScheduleTable) -> None:
    existing = getattr(estimator, "schedule", None)
    if existing is None:
        estimator.schedule = schedule
    elif existing.T != schedule.T or existing.s != schedule.s:
        raise ValueError("estimator schedule disagrees with sampling schedule")
