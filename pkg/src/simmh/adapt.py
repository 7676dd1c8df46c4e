"""Windowed Robbins-Monro tuning of the proposal exponent and of random-walk scales."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AdaptConfig",
    "AdaptState",
    "record_step",
    "sgn_convention",
    "step_size",
    "adapt_rw_scale",
    "RWScaleAdapter",
]


@dataclass(frozen=True)
class AdaptConfig:
    """Knobs of the windowed hill-climbing update.

    Windows of ``window`` iterations are counted only inside
    ``[t_start, t_end)``; a window that would straddle ``t_end`` is dropped.
    ``t_end=None`` is resolved by the sampler to 3/4 of the run length.
    """

    window: int = 25
    c: float = 1.0
    delta: float = 0.75
    lam_min: float = 0.05
    lam_max: float = 10.0
    t_start: int = 100
    t_end: int | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be positive")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not 0.5 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0.5, 1]")
        if not 0 < self.lam_min < self.lam_max:
            raise ValueError("need 0 < lam_min < lam_max")
        if self.t_end is not None and not self.t_start < self.t_end:
            raise ValueError("need t_start < t_end")

    def resolved(self, total_iterations: int) -> "AdaptConfig":
        t_end = self.t_end if self.t_end is not None else int(0.75 * total_iterations)
        if t_end > total_iterations:
            raise ValueError("t_end exceeds the number of iterations")
        return AdaptConfig(self.window, self.c, self.delta, self.lam_min, self.lam_max,
                           self.t_start, t_end)


def sgn_convention(x: float) -> int:
    """Sign with ``sgn(0) = +1``."""
    return -1 if x < 0 else 1


def step_size(k: int, c: float, delta: float) -> float:
    return c * k ** (-delta)


@dataclass
class AdaptState:
    """Epoch bookkeeping; ``log_lams[k]`` is log lambda after epoch ``k``."""

    lam: float
    k: int = 0
    log_lams: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    n_acc: int = 0
    t_window: int = 0
    frozen: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.log_lams:
            self.log_lams = [math.log(self.lam)]

    @property
    def alpha_prev(self) -> float | None:
        return self.alphas[-1] if self.alphas else None

    def record(self, config: AdaptConfig, t: int, accepted: bool) -> "AdaptState":
        if self.frozen:
            return self
        if t >= config.t_end:
            self.frozen = True
            return self
        if t < config.t_start:
            return self
        self.n_acc += int(bool(accepted))
        self.t_window += 1
        if self.t_window == config.window:
            self.k += 1
            alpha = self.n_acc / config.window
            if self.k == 1:
                self.log_lams.append(self.log_lams[-1])
            else:
                d_k = step_size(self.k, config.c, config.delta)
                d_alpha = alpha - self.alphas[-1]
                direction = sgn_convention(self.log_lams[-1] - self.log_lams[-2])
                new = self.log_lams[-1] + d_k * d_alpha * direction
                lo, hi = math.log(config.lam_min), math.log(config.lam_max)
                new = max(lo, min(new, hi))
                self.log_lams.append(new)
                self.lam = math.exp(new)
            self.alphas.append(alpha)
            self.n_acc = 0
            self.t_window = 0
        return self


def record_step(state: AdaptState, config: AdaptConfig, t: int, accepted: bool) -> AdaptState:
    """Feed iteration ``t`` (1-based) and its acceptance flag into the adaptation."""
    return state.record(config, t, accepted)


def adapt_rw_scale(scale, window_rate: float, target: float, step: float):
    """Multiply a random-walk covariance by ``exp(step * (rate - target))``."""
    return np.asarray(scale, dtype=float) * math.exp(step * (window_rate - target))


@dataclass
class RWScaleAdapter:
    """Windowed acceptance-rate targeting for a Gaussian random-walk covariance."""

    cov: np.ndarray
    config: AdaptConfig
    target: float = 0.234
    k: int = 0
    n_acc: int = 0
    t_window: int = 0
    frozen: bool = False

    def record(self, t: int, accepted: bool) -> None:
        if self.frozen:
            return
        if t >= self.config.t_end:
            self.frozen = True
            return
        if t < self.config.t_start:
            return
        self.n_acc += int(bool(accepted))
        self.t_window += 1
        if self.t_window == self.config.window:
            self.k += 1
            rate = self.n_acc / self.config.window
            self.cov = adapt_rw_scale(self.cov, rate, self.target,
                                      step_size(self.k, self.config.c, self.config.delta))
            self.n_acc = 0
            self.t_window = 0
