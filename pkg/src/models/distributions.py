import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import gammaln
from scipy.stats import truncnorm

from src.models.errors import InvalidParameterError, NumericFailure

logger = logging.getLogger(__name__)

XI_MAX = 3.0

ArrayOrFloat = Union[float, np.ndarray]


@dataclass(frozen=True)
class GgdClassParams:
    """Shape xi in (0, 3] and scale gamma > 0 of one class's generalized Gaussian"""
    xi: float
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.xi <= XI_MAX) or not math.isfinite(self.xi):
            raise InvalidParameterError(f"GGD shape must lie in (0, 3], got {self.xi}")
        if not (self.gamma > 0.0) or not math.isfinite(self.gamma):
            raise InvalidParameterError(f"GGD scale must be > 0, got {self.gamma}")

    def log_normalizer(self) -> float:
        return ggd_log_normalizer(self.xi, self.gamma)


@dataclass(frozen=True)
class InverseGammaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise InvalidParameterError(f"inverse-gamma shape must be > 0, got {self.alpha}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise InvalidParameterError(f"inverse-gamma scale must be > 0, got {self.beta}")


class RngStream:
    """
    Counter-based random stream keyed by (seed, stream_id).

    Each Markov chain owns one stream; streams with different ids never
    overlap, and the same key always yields the same draws.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def spawn(self, stream_id: int) -> 'RngStream':
        return RngStream(self.seed, stream_id)

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers on the closed interval [low, high]."""
        return self.generator.integers(low, high, size=size, endpoint=True)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def ggd_log_normalizer(xi: ArrayOrFloat, gamma: ArrayOrFloat) -> ArrayOrFloat:
    """log a = -log(2 gamma^(1/xi) Gamma(1 + 1/xi))"""
    return -math.log(2.0) - np.log(gamma) / xi - gammaln(1.0 + 1.0 / np.asarray(xi, dtype=float))


def ggd_log_pdf(x: ArrayOrFloat, p: GgdClassParams) -> ArrayOrFloat:
    result = p.log_normalizer() - np.abs(x) ** p.xi / p.gamma
    return float(result) if np.ndim(result) == 0 else result


def ggd_sample(p: GgdClassParams, rng: RngStream, size=None) -> ArrayOrFloat:
    """
    X = s * (gamma * G)^(1/xi), G ~ Gamma(1/xi, 1), s uniform on {-1, +1}.
    """
    g = rng.generator.standard_gamma(1.0 / p.xi, size=size)
    sign = np.where(rng.uniform(size) < 0.5, -1.0, 1.0)
    draw = sign * (p.gamma * g) ** (1.0 / p.xi)
    return float(draw) if size is None else draw


def ggd_moment(p: GgdClassParams, order: float) -> float:
    """E|X|^order = gamma^(order/xi) Gamma((order+1)/xi) / Gamma(1/xi)"""
    return math.exp(order / p.xi * math.log(p.gamma)
                    + gammaln((order + 1.0) / p.xi) - gammaln(1.0 / p.xi))


def inverse_gamma_sample(p: InverseGammaParams, rng: RngStream, size=None) -> ArrayOrFloat:
    # 1/draw ~ Gamma(alpha, rate beta)
    g = rng.generator.standard_gamma(p.alpha, size=size)
    draw = p.beta / g
    if size is None:
        if not (draw > 0.0 and math.isfinite(draw)):
            raise NumericFailure(f"inverse-gamma draw degenerated to {draw} for {p}")
        return float(draw)
    return draw


def _truncnorm_bounds(mean: float, var: float, lo: float, hi: float):
    if not (var > 0.0):
        raise InvalidParameterError(f"truncated normal variance must be > 0, got {var}")
    if not (lo < hi):
        raise InvalidParameterError(f"invalid interval ({lo}, {hi})")
    sd = math.sqrt(var)
    return (lo - mean) / sd, (hi - mean) / sd, sd


def truncated_normal_sample(mean: float, var: float, lo: float, hi: float,
                            rng: RngStream, size=None) -> ArrayOrFloat:
    a, b, sd = _truncnorm_bounds(mean, var, lo, hi)
    draw = truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng.generator)
    if size is None:
        # inverse-CDF rounding can land exactly on a bound
        return float(min(max(draw, np.nextafter(lo, hi)), np.nextafter(hi, lo)))
    return np.clip(draw, np.nextafter(lo, hi), np.nextafter(hi, lo))


def truncated_normal_log_pdf(x: float, mean: float, var: float, lo: float, hi: float) -> float:
    """
    Log density of N(mean, var) restricted to (lo, hi); -inf outside.
    """
    a, b, sd = _truncnorm_bounds(mean, var, lo, hi)
    if not (lo < x < hi):
        return -math.inf
    return float(truncnorm.logpdf(x, a, b, loc=mean, scale=sd))


def draw_index(weights: Sequence[float], u: float) -> int:
    """Inverse-CDF categorical draw from one uniform u in [0, 1)."""
    acc = 0.0
    last = 0
    for k, w in enumerate(weights):
        if w <= 0.0:
            continue
        acc += w
        last = k
        if u < acc:
            return k
    # u landed in the rounding gap above the cumulative sum
    return last


def categorical_sample(weights: Sequence[float], rng: RngStream) -> int:
    """
    Zero-based index k drawn with probability weights[k].
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or not np.all(np.isfinite(w)):
        raise InvalidParameterError("categorical weights must be a finite 1D vector")
    if np.any(w < 0.0):
        raise InvalidParameterError("categorical weights must be nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise InvalidParameterError("categorical weights are all zero")
    if abs(total - 1.0) > 1e-9:
        raise InvalidParameterError(f"categorical weights sum to {total}, expected 1")
    return draw_index(w.tolist(), float(rng.uniform()))


def softmax_log_weights(log_w: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Normalise log-weights with max-subtraction; rows that are all -inf raise.
    """
    m = np.max(log_w, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericFailure("all log-weights are -inf or non-finite")
    w = np.exp(log_w - m)
    return w / w.sum(axis=axis, keepdims=True)
