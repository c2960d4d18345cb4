"""Shared fixtures; scripts/ is importable by bare module name."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, special, stats

SCRIPTS_DIR = Path(__file__).resolve().parent.parent / "scripts"
if str(SCRIPTS_DIR) not in sys.path:
    sys.path.insert(0, str(SCRIPTS_DIR))

from model import ModelSpec, logit  # noqa: E402
from sampler import SamplerConfig, summarize  # noqa: E402
from scale import ScaleSpec  # noqa: E402
from simulate import SimDesign, gen_idbr  # noqa: E402


def _beta_cell_by_quadrature(lo: float, hi: float, p: float, q: float) -> float:
    """
    Beta(p, q) mass on [lo, hi] by adaptive quadrature of the density.

    A shape below 1 puts an integrable pole at the matching end; that end
    is integrated after the substitution s = t^p, which removes the pole.
    """
    if lo == 0.0 and p < 1.0:
        norm = math.exp(-special.betaln(p, q)) / p
        value, _ = integrate.quad(lambda s: (1.0 - s ** (1.0 / p)) ** (q - 1.0), 0.0, hi ** p,
                                  epsabs=1e-15, epsrel=1e-13, limit=500)
        return norm * value
    if hi == 1.0 and q < 1.0:
        return _beta_cell_by_quadrature(0.0, 1.0 - lo, q, p)
    points = None
    if p > 1.0 and q > 1.0:
        mode = (p - 1.0) / (p + q - 2.0)
        points = [mode] if lo < mode < hi else None
    value, _ = integrate.quad(stats.beta(p, q).pdf, lo, hi, points=points,
                              epsabs=1e-15, epsrel=1e-13, limit=500)
    return value


def _beta_cdf_by_quadrature(x: float, p: float, q: float) -> float:
    if x <= 0.5:
        return _beta_cell_by_quadrature(0.0, x, p, q)
    return 1.0 - _beta_cell_by_quadrature(0.0, 1.0 - x, q, p)


@pytest.fixture
def beta_cell_oracle():
    """Independent Beta(p, q) interval mass: (lo, hi, p, q) -> float."""
    return _beta_cell_by_quadrature


@pytest.fixture
def beta_cdf_oracle():
    """Independent Beta(p, q) cdf: (x, p, q) -> float."""
    return _beta_cdf_by_quadrature


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scale6():
    """Six levels 1..6 inflated at the lowest level."""
    return ScaleSpec.from_levels(6, inflated_k=1)


@pytest.fixture
def intercept_spec(scale6):
    return ModelSpec(scale=scale6)


@pytest.fixture
def make_posterior():
    """
    Build a PosteriorSample around fixed parameter values.

    ``jitter`` adds N(0, jitter^2) noise per draw; 0 gives a degenerate
    posterior.
    """
    def _make(spec, values, L=3000, jitter=0.0, seed=7):
        values = np.asarray(values, dtype=float)
        gen = np.random.default_rng(seed)
        n_chains = 3
        keep = L // n_chains
        draws = np.broadcast_to(values, (n_chains, keep, values.size)).copy()
        if jitter:
            draws += gen.normal(0.0, jitter, size=draws.shape)
        return summarize(spec.parameter_names(), draws, SamplerConfig())
    return _make


@pytest.fixture
def uniform_values():
    """beta0 = 0 and theta0 = logit(1/3) give Beta(1, 1)."""
    return [0.0, logit(1.0 / 3.0)]


@pytest.fixture
def rating_csv(tmp_path):
    """
    A 150-row CSV on a 1..5 rating scale generated from the six-level
    study truth restricted to five levels.
    """
    design = SimDesign(K=5, n=150, inflated_k=1, seed=99)
    data = gen_idbr(design, np.random.default_rng(2024))
    frame = data.covariates[['V1', 'V2', 'D1']].copy()
    frame['rating'] = np.rint(data.y * 5).astype(int)
    path = tmp_path / "ratings.csv"
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def fit_config(rating_csv, tmp_path):
    return {
        'command': 'fit',
        'data_path': str(rating_csv),
        'response': 'rating',
        'scale': {'a': 1, 'b': 5, 'h_star': 1, 'inflated_level': 1},
        'inflation': [],
        'location': ['V1', 'D1'],
        'dispersion': ['V2'],
        'dummies': ['D1'],
        'standardize': True,
        'sampler': {'seed': 11, 'burn_in': 100, 'keep': 100, 'chains': 3},
        'output_path': str(tmp_path / "fit.json"),
    }
