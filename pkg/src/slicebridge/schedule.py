"""Brownian bridge diffusion schedule.

All time-indexed scalars used by training and sampling: the interpolation
weight m_t = t/T, the bridge variance delta_t = 2s(m_t - m_t^2), the forward
transition variance delta_cond[t] = delta_t - delta_{t-1}(1-m_t)^2/(1-m_{t-1})^2,
and the Gaussian posterior q(x_{t-1} | x_t, x0, y) in the coefficient form

    mean = c_x[t]*x_t + c_y[t]*y + c_eps[t]*(x_t - x0)

where (x_t - x0) is the quantity the noise estimator is trained to predict.
The coefficients are derived from 1-D Gaussian conjugacy of the bridge
marginal and the transition kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScheduleParams",
    "ScheduleTable",
    "build_schedule",
    "posterior_mean",
    "subsequence",
]


@dataclass(frozen=True)
class ScheduleParams:
    """Total step count T and variance scale s."""

    T: int = 1000
    s: float = 1.0

    def __post_init__(self):
        if not isinstance(self.T, (int, np.integer)) or self.T < 2:
            raise ValueError(f"T must be an integer >= 2, got {self.T!r}")
        if not self.s > 0:
            raise ValueError(f"s must be > 0, got {self.s!r}")


@dataclass(frozen=True)
class ScheduleTable:
    """Precomputed schedule arrays, all of length T+1, float64.

    Immutable after construction; safe for unrestricted concurrent reads.
    """

    T: int
    s: float
    m: np.ndarray
    delta: np.ndarray
    delta_cond: np.ndarray
    tilde_delta: np.ndarray
    c_x: np.ndarray
    c_y: np.ndarray
    c_eps: np.ndarray

    def __post_init__(self):
        for arr in (self.m, self.delta, self.delta_cond, self.tilde_delta,
                    self.c_x, self.c_y, self.c_eps):
            arr.setflags(write=False)


def build_schedule(params: ScheduleParams) -> ScheduleTable:
    """Build the full schedule table for the given parameters.

    All arrays are computed in double precision: delta_cond is a difference
    of near-equal terms close to t = T and would lose all digits in float32.
    """
    T, s = params.T, params.s
    t = np.arange(T + 1, dtype=np.float64)
    m = t / T
    delta = 2.0 * s * (m - m * m)

    # Transition x_t = a_t x_{t-1} + b_t y + sqrt(delta_cond[t]) xi,
    # with a_t = (1-m_t)/(1-m_{t-1}).  a is undefined at t = T (division by
    # zero in the ratio form) but (1-m_t) = 0 there, so a_T = 0.
    a = np.zeros(T + 1)
    a[1:T] = (1.0 - m[1:T]) / (1.0 - m[: T - 1])
    a[T] = 0.0
    b = np.zeros(T + 1)
    b[1:] = m[1:] - m[:-1] * a[1:]

    delta_cond = np.zeros(T + 1)
    delta_cond[1:] = delta[1:] - delta[:-1] * a[1:] ** 2
    # delta_cond is a variance; clamp tiny negative round-off.
    np.clip(delta_cond, 0.0, None, out=delta_cond)

    tilde_delta = np.zeros(T + 1)
    c_x = np.zeros(T + 1)
    c_y = np.zeros(T + 1)
    c_eps = np.zeros(T + 1)
    tilde_delta[1:T] = delta_cond[1:T] * delta[0 : T - 1] / delta[1:T]
    c_x[1:T] = (a[1:T] * delta[0 : T - 1] + delta_cond[1:T] * (1.0 - m[0 : T - 1])) / delta[1:T]
    c_y[1:T] = (delta_cond[1:T] * m[0 : T - 1] - a[1:T] * delta[0 : T - 1] * b[1:T]) / delta[1:T]
    c_eps[1:T] = -delta_cond[1:T] * (1.0 - m[0 : T - 1]) / delta[1:T]
    # t = T: delta[T] = 0; the posterior is driven entirely by the marginal
    # at T-1, i.e. mean = (1-m_{T-1})x0 + m_{T-1}y and variance delta[T-1]
    # is never used by the deterministic sampler.  Keep the x0-recovery
    # convention mean = x_t - (x_t - x0) so t = T behaves like t = 1.
    c_x[T] = 1.0
    c_y[T] = 0.0
    c_eps[T] = -1.0

    table = ScheduleTable(T=T, s=s, m=m, delta=delta, delta_cond=delta_cond,
                          tilde_delta=tilde_delta, c_x=c_x, c_y=c_y, c_eps=c_eps)
    if not all(np.all(np.isfinite(arr)) for arr in
               (m, delta, delta_cond, tilde_delta, c_x, c_y, c_eps)):
        raise FloatingPointError("non-finite entry in schedule table")
    return table


def posterior_mean(table: ScheduleTable, t: int, x_t, x0_hat, y):
    """Posterior mean of x_{t-1} with the predicted x0 substituted.

    Accepts any equal-shaped arrays (slices or whole volumes).
    """
    if not 0 < t <= table.T:
        raise ValueError(f"t must be in (0, T], got {t}")
    x_t = np.asarray(x_t)
    x0_hat = np.asarray(x0_hat)
    y = np.asarray(y)
    if not (x_t.shape == x0_hat.shape == y.shape):
        raise ValueError(
            f"shape mismatch: x_t {x_t.shape}, x0_hat {x0_hat.shape}, y {y.shape}")
    return table.c_x[t] * x_t + table.c_y[t] * y + table.c_eps[t] * (x_t - x0_hat)


def subsequence(T: int, n_steps: int) -> list[int]:
    """Uniformly spaced, strictly decreasing time grid from T to 0."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must be in [1, T={T}], got {n_steps}")
    grid = np.round(np.linspace(T, 0, n_steps + 1)).astype(int)
    if len(np.unique(grid)) != len(grid):
        raise ValueError(f"n_steps={n_steps} produces duplicate time indices")
    return grid.tolist()
