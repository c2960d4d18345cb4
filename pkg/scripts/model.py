"""
IDBR Probability Model
======================
Links, (mu, phi) parametrization, per-observation likelihood and the
log-posterior of the inflated discrete beta regression.

Three linear submodels share one parameter vector:
- inflation  pi  = inv_logit(W gamma)   (absent for a pure DBR fit)
- location   mu  = inv_logit(X beta)
- dispersion phi = inv_logit(Z theta)   with Var(U) = mu (1 - mu) phi

All links are logit and all utilities linear.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import special

from numeric import beta_interval_prob, log_floor
from scale import ScaleSpec, grid_indices
from utils import DomainError, FitError, SpecificationError, ValidationError

logger = logging.getLogger(__name__)

PRIOR_BOUND = 10.0
LOGIT_CLAMP = 1e-12
CONDITION_LIMIT = 1e8
INTERCEPT = "(Intercept)"
SUBMODELS = ("inflation", "location", "dispersion")


# =============================================================================
# LINKS & PARAMETRIZATION
# =============================================================================

def logit(u):
    """ln(u / (1 − u)) with u clamped to [1e-12, 1 − 1e-12]."""
    clamped = np.clip(u, LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
    out = special.logit(clamped)
    return float(out) if np.ndim(out) == 0 else out


def inv_logit(v):
    """Numerically stable logistic function."""
    out = special.expit(v)
    return float(out) if np.ndim(out) == 0 else out


def _check_open_unit(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 < value < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")
    return value


def mu_phi_to_pq(mu: float, phi: float) -> Tuple[float, float]:
    """
    Beta shape parameters from location and dispersion.

    p = mu (1/phi − 1), q = (1 − mu)(1/phi − 1).
    """
    mu = _check_open_unit("mu", mu)
    phi = _check_open_unit("phi", phi)
    precision = 1.0 / phi - 1.0
    return mu * precision, (1.0 - mu) * precision


def pq_to_mu_phi(p: float, q: float) -> Tuple[float, float]:
    """Inverse of mu_phi_to_pq."""
    if not (p > 0 and q > 0):
        raise DomainError(f"p and q must be positive, got {(p, q)!r}")
    return p / (p + q), 1.0 / (p + q + 1.0)


def dispersion_to_precision(phi: float) -> float:
    """Precision p + q = 1/phi − 1."""
    phi = _check_open_unit("phi", phi)
    return 1.0 / phi - 1.0


def precision_to_dispersion(precision: float) -> float:
    if not precision > 0:
        raise DomainError(f"precision must be positive, got {precision!r}")
    return 1.0 / (precision + 1.0)


def shapes_from_predictors(eta_mu: np.ndarray, eta_phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form (p, q) from linear predictors x'beta and z'theta:
    p = exp(−z'theta) / (1 + exp(−x'beta)), q = exp(−z'theta) / (1 + exp(x'beta)).
    """
    precision = np.exp(-np.asarray(eta_phi, dtype=float))
    return precision * special.expit(eta_mu), precision * special.expit(-np.asarray(eta_mu))


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class ModelSpec:
    """
    Column assignments for the three submodels.

    The inflation submodel is present exactly when the scale declares an
    inflated level; with no inflated level the model is a pure DBR.
    """

    scale: ScaleSpec
    location_cols: Tuple[str, ...] = ()
    dispersion_cols: Tuple[str, ...] = ()
    inflation_cols: Tuple[str, ...] = ()
    location_intercept: bool = True
    dispersion_intercept: bool = True
    inflation_intercept: bool = True

    def __post_init__(self):
        for name in ('location_cols', 'dispersion_cols', 'inflation_cols'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.inflation_cols and self.scale.inflated_k is None:
            raise SpecificationError(
                "Inflation covariates were given but the scale has no inflated level"
            )
        if self.scale.inflated_k is not None and not (self.inflation_cols or self.inflation_intercept):
            raise SpecificationError("The inflation submodel needs an intercept or covariates")
        if not (self.location_cols or self.location_intercept):
            raise SpecificationError("The location submodel needs an intercept or covariates")
        if not (self.dispersion_cols or self.dispersion_intercept):
            raise SpecificationError("The dispersion submodel needs an intercept or covariates")

    @property
    def has_inflation(self) -> bool:
        return self.scale.inflated_k is not None

    def submodel_terms(self, submodel: str) -> List[str]:
        """Ordered term names of one submodel (intercept first)."""
        if submodel == "inflation":
            if not self.has_inflation:
                return []
            return ([INTERCEPT] if self.inflation_intercept else []) + list(self.inflation_cols)
        if submodel == "location":
            return ([INTERCEPT] if self.location_intercept else []) + list(self.location_cols)
        if submodel == "dispersion":
            return ([INTERCEPT] if self.dispersion_intercept else []) + list(self.dispersion_cols)
        raise SpecificationError(f"Unknown submodel {submodel!r}")

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return tuple(len(self.submodel_terms(name)) for name in SUBMODELS)

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def parameter_names(self) -> List[str]:
        return [f"{sub}:{term}" for sub in SUBMODELS for term in self.submodel_terms(sub)]

    def used_columns(self) -> List[str]:
        seen: Dict[str, None] = {}
        for col in (*self.inflation_cols, *self.location_cols, *self.dispersion_cols):
            seen.setdefault(col, None)
        return list(seen)

    def to_dict(self) -> dict:
        return {
            'scale': self.scale.to_dict(),
            'location_cols': list(self.location_cols),
            'dispersion_cols': list(self.dispersion_cols),
            'inflation_cols': list(self.inflation_cols),
            'location_intercept': self.location_intercept,
            'dispersion_intercept': self.dispersion_intercept,
            'inflation_intercept': self.inflation_intercept,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(
            scale=ScaleSpec.from_dict(data['scale']),
            location_cols=tuple(data.get('location_cols', ())),
            dispersion_cols=tuple(data.get('dispersion_cols', ())),
            inflation_cols=tuple(data.get('inflation_cols', ())),
            location_intercept=data.get('location_intercept', True),
            dispersion_intercept=data.get('dispersion_intercept', True),
            inflation_intercept=data.get('inflation_intercept', True),
        )


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Concatenated (gamma, beta, theta) with recorded submodel sizes."""

    values: np.ndarray
    n_gamma: int
    n_beta: int
    n_theta: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.n_gamma + self.n_beta + self.n_theta,):
            raise SpecificationError(
                f"Parameter vector of length {values.size} does not match sizes "
                f"({self.n_gamma}, {self.n_beta}, {self.n_theta})"
            )
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def from_parts(cls, gamma: Sequence[float], beta: Sequence[float],
                   theta: Sequence[float]) -> "ParamVector":
        gamma, beta, theta = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (gamma, beta, theta))
        return cls(np.concatenate([gamma, beta, theta]), gamma.size, beta.size, theta.size)

    @classmethod
    def for_spec(cls, spec: ModelSpec, values: Sequence[float]) -> "ParamVector":
        n_gamma, n_beta, n_theta = spec.sizes
        return cls(np.asarray(values, dtype=float), n_gamma, n_beta, n_theta)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParamVector":
        return cls.for_spec(spec, np.zeros(spec.dim))

    @property
    def offsets(self) -> Tuple[int, int, int]:
        return 0, self.n_gamma, self.n_gamma + self.n_beta

    @property
    def gamma(self) -> np.ndarray:
        return self.values[:self.n_gamma]

    @property
    def beta(self) -> np.ndarray:
        return self.values[self.n_gamma:self.n_gamma + self.n_beta]

    @property
    def theta(self) -> np.ndarray:
        return self.values[self.n_gamma + self.n_beta:]

    def in_prior_box(self) -> bool:
        return bool(np.all(np.abs(self.values) <= PRIOR_BOUND))

    def clipped(self) -> "ParamVector":
        return ParamVector(np.clip(self.values, -PRIOR_BOUND, PRIOR_BOUND),
                           self.n_gamma, self.n_beta, self.n_theta)


@dataclass
class Dataset:
    """
    Reduced-grid responses with their covariates.

    Attributes:
        y: Responses on the reduced grid {h, ..., 1}
        covariates: n x m frame of real-valued covariates with named columns
        dropped: Rows removed during ingestion (listwise deletion)
    """

    y: np.ndarray
    covariates: pd.DataFrame
    dropped: int = 0
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.covariates is None:
            self.covariates = pd.DataFrame(index=range(self.y.size))
        self.covariates = self.covariates.reset_index(drop=True)
        if self.y.ndim != 1:
            raise ValidationError("Responses must be a one-dimensional vector")
        if len(self.covariates) != self.y.size:
            raise ValidationError(
                f"{self.y.size} responses but {len(self.covariates)} covariate rows"
            )
        if not np.all(np.isfinite(self.y)) or np.any((self.y <= 0) | (self.y > 1 + 1e-12)):
            raise ValidationError("Responses must lie on the reduced grid in (0, 1]")
        if self.covariates.isna().any().any():
            raise ValidationError("Covariates contain missing values")

    @property
    def n(self) -> int:
        return int(self.y.size)


# =============================================================================
# DESIGN MATRICES
# =============================================================================

@dataclass(frozen=True, eq=False)
class DesignMatrices:
    W: np.ndarray
    X: np.ndarray
    Z: np.ndarray


def submodel_matrix(frame: pd.DataFrame, cols: Sequence[str], intercept: bool,
                    n: Optional[int] = None) -> np.ndarray:
    """n x (intercept + len(cols)) design matrix for one submodel."""
    n = len(frame) if n is None else n
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise ValidationError(f"Covariate columns not found: {missing}")
    parts = []
    if intercept:
        parts.append(np.ones((n, 1)))
    if cols:
        parts.append(frame[list(cols)].to_numpy(dtype=float))
    if not parts:
        return np.zeros((n, 0))
    return np.hstack(parts)


def design_matrices(frame: pd.DataFrame, spec: ModelSpec) -> DesignMatrices:
    n = len(frame)
    if spec.has_inflation:
        W = submodel_matrix(frame, spec.inflation_cols, spec.inflation_intercept, n)
    else:
        W = np.zeros((n, 0))
    X = submodel_matrix(frame, spec.location_cols, spec.location_intercept, n)
    Z = submodel_matrix(frame, spec.dispersion_cols, spec.dispersion_intercept, n)
    return DesignMatrices(W=W, X=X, Z=Z)


def check_full_rank(matrix: np.ndarray, names: Sequence[str], submodel: str) -> None:
    """
    Raise FitError when a design matrix is numerically rank deficient.

    Columns are scaled to unit norm first, then the condition number of the
    normal-equations matrix is compared with CONDITION_LIMIT.
    """
    if matrix.shape[1] == 0:
        return
    if matrix.shape[0] < matrix.shape[1]:
        raise FitError(f"{submodel} submodel has more terms than observations")
    norms = np.linalg.norm(matrix, axis=0)
    if np.any(norms == 0):
        zero = [names[i] for i in np.flatnonzero(norms == 0)]
        raise FitError(f"{submodel} submodel has all-zero columns: {zero}")
    scaled = matrix / norms
    gram = scaled.T @ scaled
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        _, _, vt = np.linalg.svd(scaled, full_matrices=False)
        weights = np.abs(vt[-1])
        involved = [names[i] for i in np.flatnonzero(weights > 0.1)]
        raise FitError(
            f"{submodel} submodel design is rank deficient (condition number {cond:.3g}); "
            f"collinear columns: {involved}"
        )


def check_design(design: DesignMatrices, spec: ModelSpec) -> None:
    for submodel, matrix in zip(SUBMODELS, (design.W, design.X, design.Z)):
        check_full_rank(matrix, spec.submodel_terms(submodel), submodel)


# =============================================================================
# PREDICTORS & PMFS
# =============================================================================

def _row_vector(row: Mapping, cols: Sequence[str], intercept: bool) -> np.ndarray:
    values = [1.0] if intercept else []
    for col in cols:
        if col not in row:
            raise ValidationError(f"Covariate row is missing column {col!r}")
        values.append(float(row[col]))
    return np.asarray(values, dtype=float)


def linear_predictors(params: ParamVector, row: Mapping, spec: ModelSpec) -> Tuple[float, float, float]:
    """(pi, mu, phi) for a single covariate row."""
    x = _row_vector(row, spec.location_cols, spec.location_intercept)
    z = _row_vector(row, spec.dispersion_cols, spec.dispersion_intercept)
    mu = inv_logit(float(x @ params.beta))
    phi = inv_logit(float(z @ params.theta))
    if spec.has_inflation:
        w = _row_vector(row, spec.inflation_cols, spec.inflation_intercept)
        pi = inv_logit(float(w @ params.gamma))
    else:
        pi = 0.0
    return pi, mu, phi


def dbr_pmf(mu: float, phi: float, s: ScaleSpec) -> np.ndarray:
    """Mass of each grid cell ((k−1)h, kh] under Beta(p, q)."""
    p, q = mu_phi_to_pq(mu, phi)
    edges = np.arange(s.K + 1) / s.K
    return beta_interval_prob(edges[:-1], edges[1:], p, q)


def idbr_pmf(pi: float, mu: float, phi: float, s: ScaleSpec) -> np.ndarray:
    """(1 − pi) * DBR pmf plus a point mass pi at the inflated level."""
    if pi < 0 or pi > 1:
        raise DomainError(f"pi must lie in [0, 1], got {pi!r}")
    if pi > 0 and s.inflated_k is None:
        raise SpecificationError("Inflation probability given but the scale has no inflated level")
    mass = (1.0 - pi) * dbr_pmf(mu, phi, s)
    if s.inflated_k is not None:
        mass[s.inflated_k - 1] += pi
    return mass


# =============================================================================
# LIKELIHOOD & POSTERIOR
# =============================================================================

def _log_contributions(eta_pi: Optional[np.ndarray], cell_log: np.ndarray,
                       at_inflated: np.ndarray) -> np.ndarray:
    """Per-observation log mass given log beta-cell probabilities."""
    if eta_pi is None:
        return cell_log
    log_keep = np.log(np.maximum(special.expit(-eta_pi), 1e-300))
    out = log_keep + cell_log
    if at_inflated.any():
        log_pi = np.log(np.maximum(special.expit(eta_pi[at_inflated]), 1e-300))
        out[at_inflated] = np.logaddexp(log_pi, out[at_inflated])
    return out


class LogPosterior:
    """
    Log-posterior of one (data, spec) pair, callable on raw parameter arrays.

    Design matrices and grid cells are prepared once. The beta-cell log
    probabilities of the two most recent (beta, theta) values are cached, so
    updates that only move gamma skip the incomplete beta evaluations.
    """

    def __init__(self, data: Dataset, spec: ModelSpec, check_rank: bool = True):
        self.spec = spec
        self.design = design_matrices(data.covariates, spec)
        if check_rank:
            check_design(self.design, spec)
        self.sizes = spec.sizes
        k = grid_indices(data.y, spec.scale)
        self.upper = k / spec.scale.K
        self.lower = (k - 1) / spec.scale.K
        if spec.has_inflation:
            self.at_inflated = k == spec.scale.inflated_k
        else:
            self.at_inflated = np.zeros(k.size, dtype=bool)
        self._cache: Dict[bytes, np.ndarray] = {}

    def _cell_log(self, beta: np.ndarray, theta: np.ndarray) -> np.ndarray:
        key = beta.tobytes() + theta.tobytes()
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        p, q = shapes_from_predictors(self.design.X @ beta, self.design.Z @ theta)
        cell_log = log_floor(beta_interval_prob(self.lower, self.upper, p, q))
        if len(self._cache) >= 2:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = cell_log
        return cell_log

    def log_likelihood(self, values: np.ndarray) -> float:
        n_gamma, n_beta, _ = self.sizes
        values = np.asarray(values, dtype=float)
        gamma = values[:n_gamma]
        beta = values[n_gamma:n_gamma + n_beta]
        theta = values[n_gamma + n_beta:]
        cell_log = self._cell_log(beta, theta)
        eta_pi = self.design.W @ gamma if self.spec.has_inflation else None
        return float(np.sum(_log_contributions(eta_pi, cell_log, self.at_inflated)))

    def __call__(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        if np.any(np.abs(values) > PRIOR_BOUND):
            return -np.inf
        return self.log_likelihood(values)


def log_likelihood(params: ParamVector, data: Dataset, spec: ModelSpec) -> float:
    """Sum over observations of ln P(Y_i = y_i) under the IDBR mixture."""
    return LogPosterior(data, spec, check_rank=False).log_likelihood(params.values)


def log_posterior(params: ParamVector, data: Dataset, spec: ModelSpec) -> float:
    """Log-likelihood inside the closed prior box [−10, 10]^d, −inf outside."""
    if not params.in_prior_box():
        return -np.inf
    return log_likelihood(params, data, spec)


# =============================================================================
# STANDARDIZATION
# =============================================================================

def fit_standardization(frame: pd.DataFrame, cols: Sequence[str]) -> Dict[str, Dict[str, float]]:
    """Mean and sd (ddof=1) of each column; constant columns keep sd 1."""
    params = {}
    for col in cols:
        values = frame[col].to_numpy(dtype=float)
        sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        params[col] = {'mean': float(np.mean(values)), 'sd': sd if sd > 0 else 1.0}
    return params


def apply_standardization(frame: pd.DataFrame,
                          params: Mapping[str, Mapping[str, float]]) -> pd.DataFrame:
    out = frame.copy()
    for col, stats in params.items():
        if col in out.columns:
            out[col] = (out[col].astype(float) - stats['mean']) / stats['sd']
    return out
