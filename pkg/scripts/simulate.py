"""
Simulation Studies
==================
Data generators and the replication runner behind the estimation and
prediction studies: bias, empirical SD, RMSE, HPD coverage and length of
every parameter, plus rotate-by-one prediction metrics (percent correct,
region coverage, scaled region length, share of disjoint regions).

Covariates follow the study design: V1..V4 ~ N(3, 1), D1..D3 ~ Bernoulli(0.5).
A design may correlate V1..V4 (equal pairwise correlation) and may fit a
subset of the generating covariates to study omitted variables.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from model import Dataset, ModelSpec, ParamVector, design_matrices, inv_logit, shapes_from_predictors
from numeric import RngState, draw_bernoulli, draw_beta, draw_normal, draw_uniform
from predict import predictive_distributions, region_contains, region_length, round_up_to_grid
from sampler import PosteriorSample, SamplerConfig, fit
from scale import ScaleSpec, grid_indices
from utils import ValidationError

logger = logging.getLogger(__name__)

CONTINUOUS = ("V1", "V2", "V3", "V4")
DUMMIES = ("D1", "D2", "D3")
COVARIATES = CONTINUOUS + DUMMIES

IDBR = "IDBR"
ROUNDED_LINEAR = "ROUNDED_LINEAR"
GENERATORS = (IDBR, ROUNDED_LINEAR)

# Truth of the 6-level study; order per submodel: intercept, V1..V4, D1..D3
SIX_LEVEL_TRUTH = {
    'gamma': [-4.5, 1.0, 0.0, 0.3, -0.5, -0.5, 0.0, 0.0],
    'beta': [-1.0, -0.2, 0.9, 0.0, -0.4, 0.0, 0.7, 0.0],
    'theta': [-3.0, 0.0, -0.2, 0.4, -0.2, 0.0, 0.0, 0.5],
}
# Truth of the 11-level study
ELEVEN_LEVEL_TRUTH = {
    'gamma': [-5.0, 1.0, 0.0, 0.3, -0.5, -0.5, 0.0, 0.0],
    'beta': list(SIX_LEVEL_TRUTH['beta']),
    'theta': list(SIX_LEVEL_TRUTH['theta']),
}
TRUTH_PRESETS = {'six_level': SIX_LEVEL_TRUTH, 'eleven_level': ELEVEN_LEVEL_TRUTH}

# Latent mean 0.5, sd about 0.15
DEFAULT_LINEAR_COEFS = (-0.1, 0.05, 0.05, 0.05, 0.05, 0.0, 0.0, 0.0)
DEFAULT_NOISE_SD = 0.112


# =============================================================================
# DESIGN & REPORT TYPES
# =============================================================================

@dataclass(frozen=True)
class SimDesign:
    """One simulation setting."""

    K: int = 6
    n: int = 900
    truth: Dict[str, Sequence[float]] = field(default_factory=lambda: SIX_LEVEL_TRUTH)
    generator: str = IDBR
    replications: int = 50
    seed: int = 20240101
    inflated_k: Optional[int] = 1
    linear_coefs: Sequence[float] = DEFAULT_LINEAR_COEFS
    noise_sd: float = DEFAULT_NOISE_SD
    prediction_level: float = 0.95
    correlation: float = 0.0
    fit_cols: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValidationError(f"generator must be one of {GENERATORS}", value=self.generator)
        if self.K < 2 or self.n < 1:
            raise ValidationError("Design needs K >= 2 and n >= 1", value=(self.K, self.n))
        if not (-1.0 / (len(CONTINUOUS) - 1) < self.correlation < 1.0):
            raise ValidationError("correlation must keep the V1..V4 covariance positive definite",
                                  value=self.correlation)
        if self.fit_cols is not None:
            object.__setattr__(self, 'fit_cols', tuple(self.fit_cols))
            unknown = [c for c in self.fit_cols if c not in COVARIATES]
            if unknown:
                raise ValidationError(f"fit_cols must be drawn from {COVARIATES}", value=unknown)
        truth = self.truth_vector()
        if truth.values.size != self.generating_spec().dim:
            raise ValidationError(
                f"Truth has {truth.values.size} entries but the design expects "
                f"{self.generating_spec().dim}"
            )
        if self.generator == ROUNDED_LINEAR and len(self.linear_coefs) != 1 + len(COVARIATES):
            raise ValidationError("linear_coefs needs an intercept plus one coefficient per covariate")

    @classmethod
    def from_config(cls, block: dict) -> "SimDesign":
        block = dict(block)
        truth = block.pop('truth', 'six_level')
        if isinstance(truth, str):
            if truth not in TRUTH_PRESETS:
                raise ValidationError(f"Unknown truth preset; use one of {sorted(TRUTH_PRESETS)}",
                                      value=truth)
            truth = TRUTH_PRESETS[truth]
        known = cls.__dataclass_fields__
        unknown = sorted(set(block) - set(known))
        if unknown:
            raise ValidationError(f"Unknown design keys: {unknown}")
        return cls(truth=truth, **block)

    def scale(self) -> ScaleSpec:
        return ScaleSpec.from_levels(self.K, inflated_k=self.inflated_k)

    def generating_spec(self) -> ModelSpec:
        """Every covariate enters every submodel."""
        return self._spec_with(COVARIATES)

    def spec(self) -> ModelSpec:
        """Model fitted to each replication: ``fit_cols`` in every submodel."""
        return self._spec_with(COVARIATES if self.fit_cols is None else self.fit_cols)

    def _spec_with(self, cols: Sequence[str]) -> ModelSpec:
        return ModelSpec(scale=self.scale(), location_cols=cols, dispersion_cols=cols,
                         inflation_cols=cols if self.inflated_k is not None else ())

    def truth_vector(self) -> ParamVector:
        gamma = self.truth.get('gamma', []) if self.inflated_k is not None else []
        return ParamVector.from_parts(gamma, self.truth['beta'], self.truth['theta'])

    def fit_truth_vector(self) -> ParamVector:
        """Generating values of the fitted model's parameters."""
        full = self.generating_spec().parameter_names()
        lookup = dict(zip(full, self.truth_vector().values))
        spec = self.spec()
        return ParamVector.for_spec(spec, [lookup[name] for name in spec.parameter_names()])

    def to_dict(self) -> dict:
        data = asdict(self)
        data['linear_coefs'] = list(self.linear_coefs)
        data['fit_cols'] = list(self.fit_cols) if self.fit_cols is not None else None
        data['truth'] = {key: list(value) for key, value in self.truth.items()}
        return data


@dataclass
class MetricsReport:
    """Aggregated study metrics plus per-replication records for audit."""

    design: dict
    sampler: dict
    parameters: pd.DataFrame
    prediction: Dict[str, float]
    n_replications: int
    n_failed: int
    failures: List[dict]
    records: List[dict]

    def to_dict(self) -> dict:
        return {
            'design': self.design,
            'sampler': self.sampler,
            'parameters': self.parameters.to_dict('records'),
            'prediction': self.prediction,
            'n_replications': self.n_replications,
            'n_failed': self.n_failed,
            'failures': self.failures,
            'records': self.records,
        }


# =============================================================================
# GENERATORS
# =============================================================================

def gen_covariates(n: int, rng: np.random.Generator, correlation: float = 0.0) -> pd.DataFrame:
    """
    V1..V4 ~ N(3, 1) with pairwise correlation ``correlation`` and
    D1..D3 ~ Bernoulli(0.5), independent rows.
    """
    if n < 1:
        raise ValidationError("n must be at least 1", value=n)
    m = len(CONTINUOUS)
    if correlation:
        cov = np.full((m, m), float(correlation))
        np.fill_diagonal(cov, 1.0)
        continuous = rng.multivariate_normal(np.full(m, 3.0), cov, size=n)
    else:
        continuous = draw_normal(rng, 3.0, 1.0, size=(n, m))
    dummies = draw_bernoulli(rng, 0.5, size=(n, len(DUMMIES))).astype(float)
    return pd.DataFrame(np.hstack([continuous, dummies]), columns=list(COVARIATES))


def gen_idbr(design: SimDesign, rng: np.random.Generator,
             covariates: Optional[pd.DataFrame] = None) -> Dataset:
    """
    Responses drawn by the two-step mechanism under the truth parameters.

    ``metadata['inflation_hits']`` flags the rows produced by the inflation
    step.
    """
    spec = design.generating_spec()
    s = spec.scale
    if covariates is None:
        frame = gen_covariates(design.n, rng, design.correlation)
    else:
        frame = covariates.reset_index(drop=True)
    truth = design.truth_vector()
    dm = design_matrices(frame, spec)

    n = len(frame)
    step_one = draw_uniform(rng, n)
    p, q = shapes_from_predictors(dm.X @ truth.beta, dm.Z @ truth.theta)
    k = round_up_to_grid(draw_beta(rng, p, q, size=n), s.K)
    if spec.has_inflation:
        pi = inv_logit(dm.W @ truth.gamma)
        hits = step_one <= pi
        k = np.where(hits, s.inflated_k, k)
    else:
        hits = np.zeros(n, dtype=bool)
    return Dataset(y=k / s.K, covariates=frame,
                   metadata={'inflation_hits': hits, 'generator': IDBR})


def round_to_nearest_level(y, K: int):
    """Nearest grid index of values already clamped to [h, 1]; ties go down."""
    k = np.ceil(np.asarray(y, dtype=float) * K - 0.5 - 1e-9).astype(np.int64)
    return np.clip(k, 1, K)


def gen_rounded_linear(design: SimDesign, rng: np.random.Generator,
                       covariates: Optional[pd.DataFrame] = None) -> Dataset:
    """Linear-regression outcomes clamped to [h, 1] and rounded to the grid."""
    s = design.scale()
    if covariates is None:
        frame = gen_covariates(design.n, rng, design.correlation)
    else:
        frame = covariates.reset_index(drop=True)
    coefs = np.asarray(design.linear_coefs, dtype=float)
    mean = coefs[0] + frame[list(COVARIATES)].to_numpy(dtype=float) @ coefs[1:]
    noise = draw_normal(rng, 0.0, design.noise_sd, size=len(frame)) if design.noise_sd > 0 else 0.0
    latent = np.clip(mean + noise, s.h, 1.0)
    k = round_to_nearest_level(latent, s.K)
    return Dataset(y=k / s.K, covariates=frame, metadata={'generator': ROUNDED_LINEAR})


def generate(design: SimDesign, rng: np.random.Generator) -> Dataset:
    if design.generator == IDBR:
        return gen_idbr(design, rng)
    return gen_rounded_linear(design, rng)


# =============================================================================
# REPLICATIONS
# =============================================================================

def replication_sampler(cfg: SamplerConfig, replication: int) -> SamplerConfig:
    """Sampler config whose seed is derived from (cfg.seed, replication)."""
    return replace(cfg, seed=RngState(cfg.seed).child(replication).seed)


def replication_data(design: SimDesign, replication: int) -> Dataset:
    """Dataset of one replication; stream ``replication`` of the design seed."""
    return generate(design, RngState(design.seed, replication).generator())


def _run_replication(design: SimDesign, cfg: SamplerConfig, replication: int) -> dict:
    data = replication_data(design, replication)
    record = {'replication': replication, 'data': data, 'posterior': None, 'error': None}
    try:
        record['posterior'] = fit(data, design.spec(), replication_sampler(cfg, replication))
    except (ValueError, RuntimeError) as e:
        record['error'] = f"{type(e).__name__}: {e}"
    return record


def _predict_pair(design: SimDesign, posterior: PosteriorSample, target: Dataset,
                  seed: int) -> dict:
    spec = design.spec()
    s = spec.scale
    dists = predictive_distributions(posterior, target.covariates, spec, seed,
                                     design.prediction_level)
    observed = grid_indices(target.y, s)
    correct = np.array([d.mode_index == k for d, k in zip(dists, observed)])
    covered = np.array([region_contains(d.region, k) for d, k in zip(dists, observed)])
    lengths = np.array([region_length(d.region, s) for d in dists])
    disjoint = np.array([d.disjoint for d in dists])
    return {
        'n': int(len(dists)),
        'correct': int(correct.sum()),
        'covered': int(covered.sum()),
        'length_sum': float(lengths.sum()),
        'disjoint': int(disjoint.sum()),
    }


def parameter_metrics(names: Sequence[str], truth: np.ndarray, medians: np.ndarray,
                      lows: np.ndarray, highs: np.ndarray) -> pd.DataFrame:
    """
    Bias, empirical SD, RMSE, HPD coverage and mean HPD length per parameter
    over replications (rows of medians/lows/highs). SD uses ddof=0 so that
    RMSE^2 = bias^2 + SD^2.
    """
    errors = medians - truth
    bias = errors.mean(axis=0)
    emp_sd = errors.std(axis=0, ddof=0)
    rmse = np.sqrt(np.mean(errors ** 2, axis=0))
    coverage = np.mean((lows <= truth) & (truth <= highs), axis=0)
    length = np.mean(highs - lows, axis=0)
    return pd.DataFrame({
        'parameter': list(names),
        'truth': truth,
        'bias': bias,
        'emp_sd': emp_sd,
        'rmse': rmse,
        'hpd_coverage': coverage,
        'hpd_length': length,
    })


def _map(func, arg_lists: List[tuple], workers: int) -> List:
    if workers <= 1:
        return [func(*args) for args in arg_lists]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(func, *args) for args in arg_lists]
        return [f.result() for f in futures]


def run_study(design: SimDesign, cfg: Optional[SamplerConfig] = None,
              workers: int = 1) -> MetricsReport:
    """
    Generate, fit and score ``design.replications`` datasets.

    Prediction metrics use rotate-by-one: the posterior of replication s
    predicts the responses of replication (s + 1) mod R. Replications whose
    fit fails are reported and left out of every aggregate.
    """
    cfg = cfg or SamplerConfig()
    if design.replications < 2:
        raise ValidationError("A study needs at least 2 replications", value=design.replications)

    spec = design.spec()
    names = spec.parameter_names()
    truth = design.fit_truth_vector().values
    R = design.replications

    results = _map(_run_replication, [(design, cfg, r) for r in range(R)], workers)

    failures = [{'replication': r['replication'], 'error': r['error']}
                for r in results if r['posterior'] is None]
    for failure in failures:
        logger.warning("Replication %d excluded: %s", failure['replication'], failure['error'])
    fitted = [r for r in results if r['posterior'] is not None]

    records = []
    for r in results:
        record = {'replication': r['replication'], 'n': r['data'].n, 'error': r['error']}
        if r['posterior'] is not None:
            post = r['posterior']
            record.update({
                'medians': post.medians,
                'hpd_low': post.hpd[:, 0],
                'hpd_up': post.hpd[:, 1],
                'rhat': post.gelman,
                'acceptance': post.acceptance_rates,
                'warnings': post.warnings,
            })
        records.append(record)

    if fitted:
        parameters = parameter_metrics(
            names, truth,
            np.array([r['posterior'].medians for r in fitted]),
            np.array([r['posterior'].hpd[:, 0] for r in fitted]),
            np.array([r['posterior'].hpd[:, 1] for r in fitted]),
        )
    else:
        parameters = pd.DataFrame(columns=['parameter', 'truth', 'bias', 'emp_sd', 'rmse',
                                           'hpd_coverage', 'hpd_length'])

    pairs = []
    for s_idx in range(R):
        source, target = results[s_idx], results[(s_idx + 1) % R]
        if source['posterior'] is None:
            continue
        seed = RngState(design.seed).child(R + s_idx).seed
        pairs.append((design, source['posterior'], target['data'], seed))
    pair_results = _map(_predict_pair, pairs, workers)

    total = sum(p['n'] for p in pair_results)
    if total:
        prediction = {
            'percent_correct': 100.0 * sum(p['correct'] for p in pair_results) / total,
            'region_coverage': 100.0 * sum(p['covered'] for p in pair_results) / total,
            'mean_length': sum(p['length_sum'] for p in pair_results) / total,
            'percent_disjoint': 100.0 * sum(p['disjoint'] for p in pair_results) / total,
            'n_pairs': len(pair_results),
            'n_predictions': total,
        }
    else:
        prediction = {'percent_correct': math.nan, 'region_coverage': math.nan,
                      'mean_length': math.nan, 'percent_disjoint': math.nan,
                      'n_pairs': 0, 'n_predictions': 0}

    return MetricsReport(
        design=design.to_dict(),
        sampler=cfg.to_dict(),
        parameters=parameters,
        prediction=prediction,
        n_replications=R,
        n_failed=len(failures),
        failures=failures,
        records=records,
    )


def run_sizes(design: SimDesign, sizes: Iterable[int], cfg: Optional[SamplerConfig] = None,
              workers: int = 1) -> Dict[int, MetricsReport]:
    """The same design at several sample sizes."""
    return {int(n): run_study(replace(design, n=int(n)), cfg, workers) for n in sizes}


# =============================================================================
# MARGINAL DISTRIBUTION DUMP
# =============================================================================

def marginal_distribution(datasets: Iterable[Dataset], s: ScaleSpec) -> pd.DataFrame:
    """Pooled level frequencies of generated outcomes, for external plotting."""
    counts = np.zeros(s.K, dtype=np.int64)
    for data in datasets:
        counts += np.bincount(grid_indices(data.y, s) - 1, minlength=s.K)
    total = counts.sum()
    return pd.DataFrame({
        'level': np.arange(1, s.K + 1),
        'label': [s.label(k) for k in range(1, s.K + 1)],
        'reduced': s.grid(),
        'count': counts,
        'share': counts / total if total else np.zeros(s.K),
    })
