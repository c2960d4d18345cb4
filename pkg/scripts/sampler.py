"""
Adaptive Metropolis Estimation
==============================
Component-wise random-walk Metropolis with adaptive proposal scales,
three differently initialized chains, Gelman-Rubin diagnostics, effective
sample sizes and posterior summaries (medians, HPD intervals, sign
opposition shares).

Adaptation: every ``adapt_window`` burn-in iterations the log proposal
scale of each coordinate moves by min(0.05, 1/sqrt(batch)) up when the
batch acceptance exceeded the target, down otherwise. Scales are frozen
once burn-in ends.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.fft import irfft, rfft

from model import (INTERCEPT, PRIOR_BOUND, Dataset, LogPosterior, ModelSpec,
                   ParamVector, logit)
from numeric import RngState
from utils import FitError, ValidationError

logger = logging.getLogger(__name__)

INIT_CLAMP = 1e-6
JITTER = 0.5
BOUNDARY_SHARE = 0.02


# =============================================================================
# CONFIGURATION & RESULTS
# =============================================================================

@dataclass(frozen=True)
class SamplerConfig:
    burn_in: int = 1000
    keep: int = 1000
    n_chains: int = 3
    target_accept: float = 0.44
    seed: int = 2024
    adapt_window: int = 50
    hpd_level: float = 0.95
    initial_scale: float = 0.1
    max_adapt_step: float = 0.05
    rhat_threshold: float = 1.1

    def __post_init__(self):
        if self.burn_in < 1 or self.keep < 1:
            raise ValidationError("burn_in and keep must both be at least 1",
                                  value=(self.burn_in, self.keep))
        if self.n_chains < 2:
            raise ValidationError("At least 2 chains are needed for convergence diagnostics",
                                  value=self.n_chains)
        if self.adapt_window < 1:
            raise ValidationError("adapt_window must be at least 1", value=self.adapt_window)
        if not (0.0 < self.target_accept < 1.0):
            raise ValidationError("target_accept must lie in (0, 1)", value=self.target_accept)
        if not (0.0 < self.hpd_level < 1.0):
            raise ValidationError("hpd_level must lie in (0, 1)", value=self.hpd_level)
        if not self.initial_scale > 0:
            raise ValidationError("initial_scale must be positive", value=self.initial_scale)

    def to_dict(self) -> dict:
        return {
            'burn_in': self.burn_in, 'keep': self.keep, 'n_chains': self.n_chains,
            'target_accept': self.target_accept, 'seed': self.seed,
            'adapt_window': self.adapt_window, 'hpd_level': self.hpd_level,
            'initial_scale': self.initial_scale, 'max_adapt_step': self.max_adapt_step,
            'rhat_threshold': self.rhat_threshold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        known = cls.__dataclass_fields__
        return cls(**{key: value for key, value in data.items() if key in known})


@dataclass
class ChainResult:
    """Retained states of one chain with its acceptance bookkeeping."""

    draws: np.ndarray               # keep x dim
    acceptance: np.ndarray          # post-burn-in acceptance rate per coordinate
    last_batch_acceptance: np.ndarray
    scales: np.ndarray              # frozen proposal scales
    scale_trace: np.ndarray         # keep x dim, scale in force at each kept iteration
    init: np.ndarray


@dataclass
class PosteriorSample:
    """Pooled posterior draws of a fit and their summaries."""

    names: List[str]
    draws: np.ndarray               # n_chains x keep x dim
    acceptance_rates: np.ndarray
    gelman: np.ndarray
    medians: np.ndarray
    hpd: np.ndarray                 # dim x 2
    effective_sizes: np.ndarray
    sign_opposition: np.ndarray
    hpd_level: float = 0.95
    warnings: List[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    @property
    def n_draws(self) -> int:
        """L, the pooled number of retained draws."""
        return self.draws.shape[0] * self.draws.shape[1]

    def pooled(self) -> np.ndarray:
        """L x dim matrix, chains stacked in order."""
        return self.draws.reshape(-1, self.dim)

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'parameter': self.names,
            'estimate': self.medians,
            'hpd_low': self.hpd[:, 0],
            'hpd_up': self.hpd[:, 1],
            'p': self.sign_opposition,
            'rhat': self.gelman,
            'acceptance': self.acceptance_rates,
            'ess': self.effective_sizes,
        })

    def to_dict(self) -> dict:
        return {
            'names': list(self.names),
            'draws': self.draws,
            'acceptance_rates': self.acceptance_rates,
            'gelman': self.gelman,
            'medians': self.medians,
            'hpd': self.hpd,
            'effective_sizes': self.effective_sizes,
            'sign_opposition': self.sign_opposition,
            'hpd_level': self.hpd_level,
            'warnings': list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorSample":
        return cls(
            names=list(data['names']),
            draws=np.asarray(data['draws'], dtype=float),
            acceptance_rates=np.asarray(data['acceptance_rates'], dtype=float),
            gelman=np.asarray(data['gelman'], dtype=float),
            medians=np.asarray(data['medians'], dtype=float),
            hpd=np.asarray(data['hpd'], dtype=float).reshape(-1, 2),
            effective_sizes=np.asarray(data['effective_sizes'], dtype=float),
            sign_opposition=np.asarray(data['sign_opposition'], dtype=float),
            hpd_level=float(data.get('hpd_level', 0.95)),
            warnings=list(data.get('warnings', [])),
        )


# =============================================================================
# CHAIN INITIALIZATION
# =============================================================================

def _intercept_index(spec: ModelSpec, submodel: str) -> Optional[int]:
    names = spec.parameter_names()
    key = f"{submodel}:{INTERCEPT}"
    return names.index(key) if key in names else None


def _clamped_logit(value: float) -> float:
    return logit(min(max(value, INIT_CLAMP), 1.0 - INIT_CLAMP))


def init_chain_2(spec: ModelSpec) -> ParamVector:
    """Start close to a uniform response with no inflation: (−9, 0, logit(1/3))."""
    values = np.zeros(spec.dim)
    for submodel, value in (("inflation", -9.0), ("location", 0.0),
                            ("dispersion", logit(1.0 / 3.0))):
        idx = _intercept_index(spec, submodel)
        if idx is not None:
            values[idx] = value
    return ParamVector.for_spec(spec, values)


def init_chain_1(data: Dataset, spec: ModelSpec) -> ParamVector:
    """
    Intercepts from the marginal inflation share, mean and variance of the
    response; every slope starts at 0.
    """
    y = data.y
    idx_inflation = _intercept_index(spec, "inflation")
    share = (float(np.mean(np.isclose(y, spec.scale.inflated_point)))
             if idx_inflation is not None else None)

    if y.size < 2 or np.ptp(y) == 0:
        # location and dispersion moments are undefined; the inflation share is not
        logger.warning("Response is constant or too short for moment-based "
                       "initialization; using the uniform starting point instead")
        values = init_chain_2(spec).values.copy()
        if idx_inflation is not None:
            values[idx_inflation] = _clamped_logit(share)
        return ParamVector.for_spec(spec, np.clip(values, -PRIOR_BOUND, PRIOR_BOUND))

    ybar = float(np.mean(y))
    var = float(np.var(y, ddof=1))
    values = np.zeros(spec.dim)

    if idx_inflation is not None:
        values[idx_inflation] = _clamped_logit(share)
    idx = _intercept_index(spec, "location")
    if idx is not None:
        values[idx] = _clamped_logit(ybar)
    idx = _intercept_index(spec, "dispersion")
    if idx is not None:
        values[idx] = _clamped_logit(var / (ybar * (1.0 - ybar)))
    return ParamVector.for_spec(spec, np.clip(values, -PRIOR_BOUND, PRIOR_BOUND))


def init_chain_3(data: Dataset, spec: ModelSpec, rng) -> ParamVector:
    """Chain-1 start with independent uniform(−0.5, 0.5) jitter per coordinate."""
    base = init_chain_1(data, spec).values
    jitter = np.asarray(rng.uniform(-JITTER, JITTER, size=spec.dim), dtype=float)
    return ParamVector.for_spec(spec, np.clip(base + jitter, -PRIOR_BOUND, PRIOR_BOUND))


# =============================================================================
# METROPOLIS CHAIN
# =============================================================================

def run_chain(init: np.ndarray, log_target: Callable[[np.ndarray], float],
              cfg: SamplerConfig, rng: np.random.Generator) -> ChainResult:
    """
    Component-wise random-walk Metropolis.

    Each iteration visits every coordinate once with a N(0, scale_j^2)
    proposal. Out-of-box proposals get −inf from the target and are
    rejected.
    """
    x = np.array(init, dtype=float)
    dim = x.size
    lp = log_target(x)
    if not np.isfinite(lp):
        raise FitError("Initial state has zero posterior density")

    log_scale = np.full(dim, math.log(cfg.initial_scale))
    batch_accepts = np.zeros(dim)
    last_batch = np.full(dim, np.nan)
    batch = 0

    draws = np.empty((cfg.keep, dim))
    scale_trace = np.empty((cfg.keep, dim))
    kept_accepts = np.zeros(dim)

    for it in range(cfg.burn_in + cfg.keep):
        steps = rng.standard_normal(dim)
        log_u = np.log(rng.random(dim))
        scale = np.exp(log_scale)
        for j in range(dim):
            old = x[j]
            x[j] = old + scale[j] * steps[j]
            lp_new = log_target(x)
            if log_u[j] < lp_new - lp:
                lp = lp_new
                if it < cfg.burn_in:
                    batch_accepts[j] += 1
                else:
                    kept_accepts[j] += 1
            else:
                x[j] = old

        if it < cfg.burn_in:
            if (it + 1) % cfg.adapt_window == 0:
                batch += 1
                rate = batch_accepts / cfg.adapt_window
                delta = min(cfg.max_adapt_step, 1.0 / math.sqrt(batch))
                log_scale += np.where(rate > cfg.target_accept, delta, -delta)
                last_batch = rate
                batch_accepts[:] = 0.0
        else:
            row = it - cfg.burn_in
            draws[row] = x
            scale_trace[row] = scale

    return ChainResult(
        draws=draws,
        acceptance=kept_accepts / cfg.keep,
        last_batch_acceptance=last_batch,
        scales=np.exp(log_scale),
        scale_trace=scale_trace,
        init=np.asarray(init, dtype=float),
    )


# =============================================================================
# DIAGNOSTICS & SUMMARIES
# =============================================================================

def _as_chain_array(chains) -> np.ndarray:
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError("Chains must be shaped (n_chains, length[, dim])")
    return arr


def gelman_rubin(chains) -> np.ndarray:
    """
    Potential scale reduction factor per parameter.

    W is the mean within-chain variance and B/n the variance of the chain
    means; R = sqrt(((n−1)/n W + B/n) / W). Constant, equal chains give 1.
    """
    arr = _as_chain_array(chains)
    m, n, _ = arr.shape
    if m < 2 or n < 2:
        raise ValidationError("Gelman-Rubin needs at least 2 chains of length 2", value=(m, n))
    W = np.mean(np.var(arr, axis=1, ddof=1), axis=0)
    B_over_n = np.var(np.mean(arr, axis=1), axis=0, ddof=1)
    pooled = (n - 1.0) / n * W + B_over_n
    with np.errstate(divide='ignore', invalid='ignore'):
        rhat = np.sqrt(pooled / W)
    rhat = np.where((W == 0) & (B_over_n == 0), 1.0, rhat)
    rhat = np.where((W == 0) & (B_over_n > 0), np.inf, rhat)
    return rhat


def _chain_ess(x: np.ndarray) -> float:
    """ESS of one chain from its autocorrelation, cut at the first negative lag."""
    n = x.size
    centered = x - np.mean(x)
    if not np.any(centered):
        return float(n)
    f = irfft(np.abs(rfft(centered, n=2 * n)) ** 2)[:n]
    if f[0] <= 0:
        return float(n)
    negative = np.flatnonzero(f < 0.0)
    if negative.size:
        f = f[:negative[0]]
    tau = f.sum() / f[0]
    return float(min(n, n / max(2.0 * tau - 1.0, 1e-12)))


def effective_sample_size(chains) -> np.ndarray:
    """Effective sample size per parameter, summed over chains."""
    arr = _as_chain_array(chains)
    return np.array([sum(_chain_ess(arr[c, :, j]) for c in range(arr.shape[0]))
                     for j in range(arr.shape[2])])


def hpd_interval(draws, level: float = 0.95):
    """
    Shortest window of ceil(level * L) consecutive sorted draws.

    Ties go to the lowest start index.
    """
    if not (0.0 < level < 1.0):
        raise ValidationError("HPD level must lie in (0, 1)", value=level)
    x = np.sort(np.asarray(draws, dtype=float))
    L = x.size
    if L < 10:
        raise ValidationError("Too few draws for an HPD interval", value=L)
    m = int(math.ceil(level * L - 1e-9))
    m = min(max(m, 1), L)
    widths = x[m - 1:] - x[:L - m + 1]
    start = int(np.argmin(widths))
    return float(x[start]), float(x[start + m - 1])


def sign_opposition(draws, median: float) -> float:
    """
    Share of draws whose sign opposes the sign of the posterior median.

    A median of exactly 0 has no sign; the result is then 0.5.
    """
    draws = np.asarray(draws, dtype=float)
    if median > 0:
        return float(np.mean(draws < 0))
    if median < 0:
        return float(np.mean(draws > 0))
    return 0.5


def summarize(names: Sequence[str], draws: np.ndarray, cfg: SamplerConfig,
              acceptance: Optional[np.ndarray] = None) -> PosteriorSample:
    """Posterior summaries of an (n_chains, keep, dim) draw array."""
    draws = np.asarray(draws, dtype=float)
    pooled = draws.reshape(-1, draws.shape[2])
    medians = np.median(pooled, axis=0)
    hpd = np.array([hpd_interval(pooled[:, j], cfg.hpd_level) for j in range(pooled.shape[1])])
    gelman = gelman_rubin(draws)
    sample = PosteriorSample(
        names=list(names),
        draws=draws,
        acceptance_rates=(np.full(draws.shape[2], np.nan) if acceptance is None
                          else np.asarray(acceptance, dtype=float)),
        gelman=gelman,
        medians=medians,
        hpd=hpd,
        effective_sizes=effective_sample_size(draws),
        sign_opposition=np.array([sign_opposition(pooled[:, j], medians[j])
                                  for j in range(pooled.shape[1])]),
        hpd_level=cfg.hpd_level,
    )

    unconverged = [name for name, r in zip(names, gelman) if not r <= cfg.rhat_threshold]
    if unconverged:
        msg = f"Gelman-Rubin above {cfg.rhat_threshold} for: {', '.join(unconverged)}"
        logger.warning(msg)
        sample.warnings.append(msg)
    near_edge = [name for name, m in zip(names, medians)
                 if abs(m) >= PRIOR_BOUND * (1.0 - BOUNDARY_SHARE)]
    if near_edge:
        msg = f"Posterior median within 2% of the prior bound for: {', '.join(near_edge)}"
        logger.warning(msg)
        sample.warnings.append(msg)
    return sample


# =============================================================================
# FIT
# =============================================================================

def initial_values(data: Dataset, spec: ModelSpec, chain: int, rng) -> ParamVector:
    """Chain 0 from moments, chain 1 uniform, later chains jittered moments."""
    if chain == 0:
        return init_chain_1(data, spec)
    if chain == 1:
        return init_chain_2(spec)
    return init_chain_3(data, spec, rng)


def fit(data: Dataset, spec: ModelSpec, cfg: Optional[SamplerConfig] = None) -> PosteriorSample:
    """
    Run cfg.n_chains chains on the IDBR posterior and summarize them.

    Chain c uses stream c of cfg.seed, for both its jitter and its moves.

    Raises:
        FitError: rank-deficient design matrices
    """
    cfg = cfg or SamplerConfig()
    target = LogPosterior(data, spec)
    names = spec.parameter_names()

    chains = []
    for c in range(cfg.n_chains):
        rng = RngState(cfg.seed, c).generator()
        init = initial_values(data, spec, c, rng)
        logger.debug("chain %d starting at %s", c, np.round(init.values, 4).tolist())
        chains.append(run_chain(init.values, target, cfg, rng))
    acceptance = np.mean([c.acceptance for c in chains], axis=0)
    return summarize(names, np.stack([c.draws for c in chains]), cfg, acceptance)
