"""Tests for special functions and random streams."""

import math

import numpy as np
import pytest
from scipy import special

from numeric import (RngState, beta_interval_prob, draw_bernoulli, draw_beta,
                     draw_gamma, draw_log_gamma, draw_normal, draw_uniform, log_beta, log_gamma,
                     reg_inc_beta)
from utils import DomainError


# =============================================================================
# SPECIAL FUNCTIONS
# =============================================================================

def test_log_gamma_known_values():
    assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-15)
    assert log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-14)
    assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-14)


def test_log_beta_known_values():
    assert log_beta(1.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert log_beta(2.0, 3.0) == pytest.approx(math.log(1.0 / 12.0), rel=1e-13)


@pytest.mark.parametrize("func, args", [
    (log_gamma, (0.0,)),
    (log_gamma, (-1.5,)),
    (log_beta, (0.0, 1.0)),
    (log_beta, (1.0, float('nan'))),
    (reg_inc_beta, (1.2, 1.0, 1.0)),
    (reg_inc_beta, (0.5, -1.0, 1.0)),
])
def test_domain_errors(func, args):
    with pytest.raises(DomainError):
        func(*args)


def test_reg_inc_beta_edges_and_symmetry():
    assert reg_inc_beta(0.0, 2.0, 3.0) == 0.0
    assert reg_inc_beta(1.0, 2.0, 3.0) == 1.0
    assert reg_inc_beta(0.5, 7.0, 7.0) == pytest.approx(0.5, abs=1e-14)
    assert reg_inc_beta(0.3, 1.0, 1.0) == pytest.approx(0.3, abs=1e-14)
    x, p, q = 0.37, 2.5, 4.0
    assert reg_inc_beta(x, p, q) == pytest.approx(1.0 - reg_inc_beta(1.0 - x, q, p), abs=1e-13)


def test_reg_inc_beta_matches_library_on_wide_shapes():
    gen = np.random.default_rng(1)
    for _ in range(100):
        x = gen.uniform(0.0, 1.0)
        p, q = np.exp(gen.uniform(np.log(0.05), np.log(500.0), size=2))
        assert reg_inc_beta(x, p, q) == pytest.approx(special.betainc(p, q, x), abs=1e-10)


def test_reg_inc_beta_matches_quadrature(beta_cdf_oracle):
    gen = np.random.default_rng(2)
    for _ in range(100):
        x = gen.uniform(0.01, 0.99)
        p, q = np.exp(gen.uniform(np.log(0.05), np.log(500.0), size=2))
        assert reg_inc_beta(x, p, q) == pytest.approx(beta_cdf_oracle(x, p, q), abs=1e-10)


def test_reg_inc_beta_quadrature_fixed_point(beta_cdf_oracle):
    assert reg_inc_beta(0.7, 3.7, 0.9) == pytest.approx(beta_cdf_oracle(0.7, 3.7, 0.9), abs=1e-11)


def test_beta_interval_prob_partitions_unit_interval():
    edges = np.arange(12) / 11
    for p, q in [(0.3, 0.4), (2.0, 5.0), (400.0, 3.0), (1.0, 1.0)]:
        cells = beta_interval_prob(edges[:-1], edges[1:], p, q)
        assert np.all(cells >= 0.0)
        assert cells.sum() == pytest.approx(1.0, abs=1e-12)


def test_beta_interval_prob_keeps_upper_tail_precision():
    # cell far above the mean: the plain cdf difference would cancel to 0
    prob = beta_interval_prob(0.9, 1.0, 1.0, 200.0)
    assert prob > 0.0
    assert prob == pytest.approx(0.1 ** 200, rel=1e-8)


# =============================================================================
# RANDOM STREAMS
# =============================================================================

def test_rng_state_reproducible_and_streams_independent():
    a = RngState(42, 0).generator().random(5)
    b = RngState(42, 0).generator().random(5)
    c = RngState(42, 1).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_rng_state_child_is_deterministic():
    assert RngState(42).child(3) == RngState(42).child(3)
    assert RngState(42).child(3).seed != RngState(42).child(4).seed


def test_rng_state_rejects_negative_seed():
    with pytest.raises(DomainError):
        RngState(-1)


def test_draw_shapes_and_ranges():
    gen = RngState(5).generator()
    u = draw_uniform(gen, 1000)
    assert u.shape == (1000,) and np.all((u >= 0) & (u < 1))
    assert np.all(np.isin(draw_bernoulli(gen, 0.3, 100), [0, 1]))
    assert np.all(draw_gamma(gen, 0.5, 100) >= 0)
    assert isinstance(draw_beta(gen, 2.0, 3.0), float)
    assert draw_normal(gen, 0.0, 1.0, size=(3, 4)).shape == (3, 4)


def test_draw_beta_moments():
    gen = RngState(6).generator()
    u = draw_beta(gen, 2.0, 3.0, size=100_000)
    assert np.mean(u) == pytest.approx(0.4, abs=0.005)
    assert np.var(u) == pytest.approx(0.04, abs=0.002)


def test_draw_beta_tiny_shapes_keep_mass_at_the_ends():
    gen = RngState(7).generator()
    u = draw_beta(gen, 1e-4, 1e-4, size=50_000)
    assert np.all((u >= 0.0) & (u <= 1.0))
    assert np.mean((u > 0.01) & (u < 0.99)) < 0.002
    assert np.mean(u < 0.5) == pytest.approx(0.5, abs=0.01)
    # mean of Beta(p, q) is p / (p + q)
    skewed = draw_beta(gen, 1e-4, 3e-4, size=50_000)
    assert np.mean(skewed) == pytest.approx(0.25, abs=0.01)


def test_draw_log_gamma_moments():
    gen = RngState(8).generator()
    for shape in (1e-3, 0.5, 2.0, 40.0):
        logs = draw_log_gamma(gen, shape, 100_000)
        assert np.all(np.isfinite(logs))
        assert np.mean(logs) == pytest.approx(special.digamma(shape), abs=0.02 * max(1.0, 1.0 / shape))
        assert np.var(logs) == pytest.approx(special.polygamma(1, shape), rel=0.03)


@pytest.mark.parametrize("call", [
    lambda g: draw_bernoulli(g, 1.5),
    lambda g: draw_gamma(g, 0.0),
    lambda g: draw_log_gamma(g, -1.0),
    lambda g: draw_normal(g, 0.0, -1.0),
])
def test_draw_domain_errors(call):
    with pytest.raises(DomainError):
        call(RngState(1).generator())
