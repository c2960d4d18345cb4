"""
Numeric Building Blocks
=======================
Special functions and reproducible random streams used by the model,
sampler, prediction and simulation modules.

Scalar special functions validate their arguments and raise DomainError;
the ``*_array`` variants are the vectorized paths used inside likelihood
evaluations, where arguments are already known to be valid.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import special

from utils import DomainError

ArrayLike = Union[float, np.ndarray]

# Interval probabilities are floored here before taking logs
PROB_FLOOR = 1e-300

_CF_TINY = 1e-300
_CF_EPS = 1e-15
_CF_MAX_ITER = 10_000


# =============================================================================
# SPECIAL FUNCTIONS
# =============================================================================

def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    x = _check_positive("x", x)
    return float(special.gammaln(x))


def log_beta(p: float, q: float) -> float:
    """ln B(p, q) = lnΓ(p) + lnΓ(q) − lnΓ(p + q)."""
    p = _check_positive("p", p)
    q = _check_positive("q", q)
    return float(special.betaln(p, q))


def _beta_continued_fraction(x: float, p: float, q: float) -> float:
    """Modified Lentz evaluation of the incomplete beta continued fraction."""
    qab = p + q
    qap = p + 1.0
    qam = p - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (q - m) * x / ((qam + m2) * (p + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(p + m) * (qab + m) * x / ((p + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise DomainError(
        f"Incomplete beta continued fraction did not converge (x={x}, p={p}, q={q})"
    )


def reg_inc_beta(x: float, p: float, q: float) -> float:
    """
    Regularized incomplete beta function I_x(p, q), the Beta(p, q) CDF at x.

    Uses the continued fraction directly when x < (p + 1)/(p + q + 2) and
    the symmetry I_x(p, q) = 1 − I_{1−x}(q, p) otherwise.

    Args:
        x: Evaluation point in [0, 1]
        p, q: Shape parameters, strictly positive

    Returns:
        Value in [0, 1]
    """
    x = float(x)
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x!r}")
    p = _check_positive("p", p)
    q = _check_positive("q", q)
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0

    log_front = p * math.log(x) + q * math.log1p(-x) - float(special.betaln(p, q))
    front = math.exp(log_front)
    if x < (p + 1.0) / (p + q + 2.0):
        value = front * _beta_continued_fraction(x, p, q) / p
    else:
        value = 1.0 - front * _beta_continued_fraction(1.0 - x, q, p) / q
    return min(1.0, max(0.0, value))


def reg_inc_beta_array(x: ArrayLike, p: ArrayLike, q: ArrayLike) -> np.ndarray:
    """Vectorized I_x(p, q) for already-validated arguments."""
    return special.betainc(p, q, x)


def beta_interval_prob(lower: ArrayLike, upper: ArrayLike,
                       p: ArrayLike, q: ArrayLike) -> np.ndarray:
    """
    P(lower < U <= upper) for U ~ Beta(p, q), elementwise.

    Cells lying above the beta mean are computed from upper-tail
    complements so that the difference of two values close to 1 does not
    cancel.
    """
    lower, upper, p, q = np.broadcast_arrays(
        np.asarray(lower, dtype=float), np.asarray(upper, dtype=float),
        np.asarray(p, dtype=float), np.asarray(q, dtype=float),
    )
    mean = p / (p + q)
    upper_tail = lower >= mean
    lower_side = special.betainc(p, q, upper) - special.betainc(p, q, lower)
    upper_side = special.betaincc(p, q, lower) - special.betaincc(p, q, upper)
    prob = np.where(upper_tail, upper_side, lower_side)
    return np.clip(prob, 0.0, 1.0)


def log_floor(prob: ArrayLike) -> np.ndarray:
    """ln of a probability floored at PROB_FLOOR."""
    return np.log(np.maximum(prob, PROB_FLOOR))


# =============================================================================
# RANDOM STREAMS
# =============================================================================

@dataclass(frozen=True)
class RngState:
    """
    Reproducible random stream identified by (seed, stream).

    The same pair always produces the same sequence; distinct stream
    counters under one seed are statistically independent. Streams are
    backed by the counter-based Philox bit generator.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2 ** 64):
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not (0 <= int(self.stream) < 2 ** 64):
            raise DomainError(f"stream must be a 64-bit unsigned integer, got {self.stream!r}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "RngState":
        """Derive an independent state for a nested task (e.g. one replication)."""
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(index)))
        derived = int(seq.generate_state(1, dtype=np.uint64)[0])
        return RngState(seed=derived, stream=int(index))


def draw_uniform(rng: np.random.Generator, size: Optional[Union[int, Tuple[int, ...]]] = None):
    """Uniform draws on [0, 1)."""
    return rng.random(size)


def draw_normal(rng: np.random.Generator, mean: ArrayLike = 0.0, sd: ArrayLike = 1.0,
                size: Optional[Union[int, Tuple[int, ...]]] = None):
    """Normal draws with the given mean and standard deviation."""
    if np.any(np.asarray(sd) < 0) or not np.all(np.isfinite(sd)):
        raise DomainError(f"sd must be non-negative and finite, got {sd!r}")
    return rng.normal(mean, sd, size)


def draw_bernoulli(rng: np.random.Generator, prob: ArrayLike,
                   size: Optional[Union[int, Tuple[int, ...]]] = None):
    """0/1 draws with success probability prob."""
    prob_arr = np.asarray(prob, dtype=float)
    if np.any((prob_arr < 0) | (prob_arr > 1)) or np.any(np.isnan(prob_arr)):
        raise DomainError(f"prob must lie in [0, 1], got {prob!r}")
    draws = (rng.random(size if size is not None else prob_arr.shape) < prob_arr)
    return draws.astype(np.int64)


def draw_gamma(rng: np.random.Generator, shape: ArrayLike,
               size: Optional[Union[int, Tuple[int, ...]]] = None):
    """Gamma(shape, 1) draws."""
    shape_arr = np.asarray(shape, dtype=float)
    if np.any(shape_arr <= 0) or not np.all(np.isfinite(shape_arr)):
        raise DomainError(f"shape must be positive and finite, got {shape!r}")
    return rng.standard_gamma(shape, size)


def draw_log_gamma(rng: np.random.Generator, shape: ArrayLike,
                   size: Optional[Union[int, Tuple[int, ...]]] = None):
    """
    log of Gamma(shape, 1) draws, as log G' + log(U) / shape with
    G' ~ Gamma(shape + 1) and U ~ U(0, 1].

    Stays finite for shapes so small that the gamma variate itself
    underflows to zero.
    """
    shape_arr = np.asarray(shape, dtype=float)
    if np.any(shape_arr <= 0) or not np.all(np.isfinite(shape_arr)):
        raise DomainError(f"shape must be positive and finite, got {shape!r}")
    boosted = rng.standard_gamma(shape_arr + 1.0, size)
    u = 1.0 - (rng.random(np.shape(boosted)) if np.ndim(boosted) else rng.random())
    return np.log(boosted) + np.log(u) / shape_arr


def draw_beta(rng: np.random.Generator, p: ArrayLike, q: ArrayLike,
              size: Optional[Union[int, Tuple[int, ...]]] = None):
    """
    Beta(p, q) draws as G1 / (G1 + G2) with G1 ~ Gamma(p), G2 ~ Gamma(q),
    evaluated as expit(log G1 − log G2).
    """
    if size is None:
        size = np.broadcast(np.asarray(p), np.asarray(q)).shape or None
    log_g1 = draw_log_gamma(rng, p, size)
    log_g2 = draw_log_gamma(rng, q, size)
    u = special.expit(log_g1 - log_g2)
    if np.ndim(u) == 0:
        return float(u)
    return u
