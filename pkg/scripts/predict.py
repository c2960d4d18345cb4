"""
Posterior Predictive Distributions
==================================
Two-step predictive sampler, mode point predictions and (possibly
disjoint) HPD prediction regions on the reduced grid.

For each retained posterior draw l and subject i:
1. with probability inv_logit(w_i' gamma_l) the prediction is the
   inflated level k h;
2. otherwise u ~ Beta(p_l, q_l) is drawn and rounded up to the upper bound
   of its grid cell, h * ceil(u / h).
"""

from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from model import ModelSpec, ParamVector, inv_logit, linear_predictors, shapes_from_predictors, submodel_matrix
from numeric import RngState, draw_beta
from sampler import PosteriorSample
from scale import ScaleSpec

COVERAGE_TOL = 1e-12


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class PredictiveRegion:
    """
    HPD prediction region as 1-based grid indices.

    ``interval`` is the contiguous component (None when the inflated level
    alone reaches the level); ``inflated`` says whether the inflated level
    was added separately.
    """

    points: Tuple[int, ...]
    interval: Optional[Tuple[int, int]]
    inflated: bool
    disjoint: bool
    coverage: float


@dataclass
class PredictiveDistribution:
    """Empirical predictive law of one subject over the K grid points."""

    mass: np.ndarray
    step2_mass: np.ndarray
    pi_hat: float
    n_draws: int
    scale: ScaleSpec
    level: float = 0.95
    region: Optional[PredictiveRegion] = field(default=None)

    @property
    def mode_index(self) -> int:
        """1-based index of the mode; ties go to the lower grid point."""
        return int(np.argmax(self.mass)) + 1

    @property
    def mode(self) -> float:
        return self.mode_index / self.scale.K

    @property
    def disjoint(self) -> bool:
        return bool(self.region.disjoint) if self.region is not None else False


# =============================================================================
# SAMPLING
# =============================================================================

def round_up_to_grid(u, K: int):
    """Grid index ceil(u / h) of a latent beta value; u = 0 maps to level 1."""
    k = np.ceil(np.asarray(u, dtype=float) * K).astype(np.int64)
    k = np.clip(k, 1, K)
    return int(k) if np.ndim(k) == 0 else k


def predictive_draw(params: ParamVector, row: Mapping, spec: ModelSpec,
                    rng: np.random.Generator) -> float:
    """One predictive grid point for a covariate row under one posterior draw."""
    pi, mu, phi = linear_predictors(params, row, spec)
    s = spec.scale
    if spec.has_inflation and rng.random() <= pi:
        return s.inflated_point
    precision = 1.0 / phi - 1.0
    u = draw_beta(rng, mu * precision, (1.0 - mu) * precision)
    return round_up_to_grid(u, s.K) / s.K


def _row_frame(row: Mapping) -> pd.DataFrame:
    return pd.DataFrame([dict(row)])


def predictive_distribution(posterior: PosteriorSample, row: Mapping, spec: ModelSpec,
                            rng: np.random.Generator, level: float = 0.95) -> PredictiveDistribution:
    """
    One predictive draw per retained posterior draw (L in total), reduced to
    empirical frequencies, with the HPD region at ``level`` attached.
    """
    s = spec.scale
    draws = posterior.pooled()
    L = draws.shape[0]
    n_gamma, n_beta, _ = spec.sizes
    frame = _row_frame(row)

    x = submodel_matrix(frame, spec.location_cols, spec.location_intercept)[0]
    z = submodel_matrix(frame, spec.dispersion_cols, spec.dispersion_intercept)[0]
    eta_mu = draws[:, n_gamma:n_gamma + n_beta] @ x
    eta_phi = draws[:, n_gamma + n_beta:] @ z

    step_one = rng.random(L)
    p, q = shapes_from_predictors(eta_mu, eta_phi)
    u = draw_beta(rng, p, q, size=L)
    k = round_up_to_grid(u, s.K)

    if spec.has_inflation:
        w = submodel_matrix(frame, spec.inflation_cols, spec.inflation_intercept)[0]
        pi = inv_logit(draws[:, :n_gamma] @ w)
        hits = step_one <= pi
        k = np.where(hits, s.inflated_k, k)
    else:
        hits = np.zeros(L, dtype=bool)

    mass = np.bincount(k - 1, minlength=s.K) / L
    step2_mass = np.bincount(k[~hits] - 1, minlength=s.K) / L
    dist = PredictiveDistribution(mass=mass, step2_mass=step2_mass,
                                  pi_hat=float(np.mean(hits)), n_draws=L,
                                  scale=s, level=level)
    dist.region = hpd_region(dist, level, s)
    return dist


def predictive_distributions(posterior: PosteriorSample, frame: pd.DataFrame, spec: ModelSpec,
                             seed: int, level: float = 0.95) -> List[PredictiveDistribution]:
    """Predictive laws of every row; row i draws from stream i of ``seed``."""
    records = frame.to_dict('records')
    return [predictive_distribution(posterior, row, spec, RngState(seed, i).generator(), level)
            for i, row in enumerate(records)]


# =============================================================================
# HPD REGIONS
# =============================================================================

def shortest_window(mass: np.ndarray, need: float) -> Tuple[int, int]:
    """
    Fewest contiguous grid points whose mass reaches ``need``; ties go to
    the lowest start. Returns 1-based (low, high).
    """
    K = mass.size
    cumulative = np.concatenate([[0.0], np.cumsum(mass)])
    for width in range(1, K + 1):
        sums = cumulative[width:] - cumulative[:K - width + 1]
        ok = np.flatnonzero(sums >= need - COVERAGE_TOL)
        if ok.size:
            start = int(ok[0])
            return start + 1, start + width
    return 1, K


def hpd_region(dist: PredictiveDistribution, level: float, s: ScaleSpec) -> PredictiveRegion:
    """
    HPD prediction region at ``level``.

    When the inflated level's step-1 share exceeds 1 − level, that level is
    included on its own and joined to the shortest interval of the step-2
    mass reaching level − pi_hat. Otherwise the region is the shortest
    interval of the total mass reaching level.
    """
    k_inf = s.inflated_k
    if k_inf is not None and dist.pi_hat > 1.0 - level:
        need = level - dist.pi_hat
        if need <= COVERAGE_TOL:
            interval = None
            points = {k_inf}
        else:
            interval = shortest_window(dist.step2_mass, need)
            points = set(range(interval[0], interval[1] + 1)) | {k_inf}
        disjoint = interval is not None and (k_inf < interval[0] - 1 or k_inf > interval[1] + 1)
        inflated = True
    else:
        interval = shortest_window(dist.mass, level)
        points = set(range(interval[0], interval[1] + 1))
        disjoint = False
        inflated = False

    ordered = tuple(sorted(points))
    coverage = float(sum(dist.mass[k - 1] for k in ordered))
    return PredictiveRegion(points=ordered, interval=interval, inflated=inflated,
                            disjoint=disjoint, coverage=coverage)


def region_length(region: PredictiveRegion, s: ScaleSpec) -> float:
    """
    Length of a region on the reduced scale (maximum 1).

    A disjoint region counts its interval span plus h for the separate
    inflated level; otherwise the span of all points. A single point has
    length 0.
    """
    h = s.h
    if region.disjoint and region.interval is not None:
        low, high = region.interval
        return (high - low) * h + h
    return (max(region.points) - min(region.points)) * h


def region_contains(region: PredictiveRegion, k: int) -> bool:
    return int(k) in region.points
