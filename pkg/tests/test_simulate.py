"""Tests for the data generators and the replication runner."""

import os

import numpy as np
import pandas as pd
import pytest

from model import dbr_pmf, design_matrices, inv_logit, linear_predictors
from numeric import RngState
from sampler import SamplerConfig
from simulate import (COVARIATES, ROUNDED_LINEAR, SIX_LEVEL_TRUTH, SimDesign,
                      gen_covariates, gen_idbr, gen_rounded_linear,
                      marginal_distribution, parameter_metrics, replication_data,
                      round_to_nearest_level, run_study)
from utils import ValidationError, dumps_json

RUN_STUDIES = os.environ.get('IDBR_RUN_STUDIES', '')


# =============================================================================
# COVARIATES
# =============================================================================

def test_covariate_moments():
    frame = gen_covariates(100_000, RngState(1).generator())
    assert list(frame.columns) == list(COVARIATES)
    assert frame['V1'].mean() == pytest.approx(3.0, abs=0.02)
    assert frame['V4'].std() == pytest.approx(1.0, abs=0.02)
    assert frame['D1'].mean() == pytest.approx(0.5, abs=0.01)
    assert set(np.unique(frame['D3'])) == {0.0, 1.0}


def test_correlated_covariates():
    frame = gen_covariates(100_000, RngState(9).generator(), correlation=0.8)
    corr = frame[['V1', 'V2', 'V3', 'V4']].corr().to_numpy()
    np.testing.assert_allclose(corr[np.triu_indices(4, 1)], 0.8, atol=0.01)
    assert frame['V3'].mean() == pytest.approx(3.0, abs=0.02)
    assert abs(frame[['V1', 'D1']].corr().iloc[0, 1]) < 0.02

    design = SimDesign(K=6, n=20_000, correlation=0.8)
    data = gen_idbr(design, RngState(10).generator())
    assert data.covariates['V1'].corr(data.covariates['V4']) == pytest.approx(0.8, abs=0.02)


@pytest.mark.parametrize("correlation", [1.0, -0.5])
def test_correlation_must_keep_covariance_positive_definite(correlation):
    with pytest.raises(ValidationError):
        SimDesign(correlation=correlation)


def test_covariates_reproducible():
    a = gen_covariates(50, RngState(2).generator())
    b = gen_covariates(50, RngState(2).generator())
    pd.testing.assert_frame_equal(a, b)


# =============================================================================
# GENERATORS
# =============================================================================

def test_inflation_share_matches_truth():
    design = SimDesign(K=6, n=100_000)
    data = gen_idbr(design, RngState(3).generator())
    dm = design_matrices(data.covariates, design.spec())
    expected = np.mean(inv_logit(dm.W @ design.truth_vector().gamma))
    assert np.mean(data.metadata['inflation_hits']) == pytest.approx(expected, abs=0.01)
    assert np.all(np.rint(data.y[data.metadata['inflation_hits']] * 6) == 1)


def test_negligible_inflation_gives_no_hits():
    truth = {'gamma': [-10.0] + [0.0] * 7, 'beta': SIX_LEVEL_TRUTH['beta'],
             'theta': SIX_LEVEL_TRUTH['theta']}
    data = gen_idbr(SimDesign(n=10_000, truth=truth), RngState(4).generator())
    assert data.metadata['inflation_hits'].sum() <= 5


def test_no_inflation_generator_matches_dbr_pmf():
    design = SimDesign(K=6, n=100_000, inflated_k=None)
    row = {'V1': 3.0, 'V2': 2.5, 'V3': 3.5, 'V4': 3.0, 'D1': 1.0, 'D2': 0.0, 'D3': 0.0}
    frame = pd.DataFrame([row] * design.n)
    data = gen_idbr(design, RngState(5).generator(), covariates=frame)
    _, mu, phi = linear_predictors(design.truth_vector(), row, design.spec())
    freq = np.bincount(np.rint(data.y * 6).astype(int) - 1, minlength=6) / design.n
    np.testing.assert_allclose(freq, dbr_pmf(mu, phi, design.scale()), atol=0.01)


@pytest.mark.parametrize("latent, expected", [(0.31, 2), (0.3, 1), (0.05, 1), (0.5, 2), (0.95, 5)])
def test_round_to_nearest_level(latent, expected):
    assert round_to_nearest_level(latent, 5) == expected


@pytest.mark.parametrize("intercept, expected", [(0.31, 0.4), (0.3, 0.2), (-0.4, 0.2), (1.7, 1.0)])
def test_rounded_linear_without_noise(intercept, expected):
    design = SimDesign(K=5, n=20, generator=ROUNDED_LINEAR,
                       linear_coefs=(intercept,) + (0.0,) * 7, noise_sd=0.0)
    data = gen_rounded_linear(design, RngState(6).generator())
    np.testing.assert_allclose(data.y, expected)


def test_rounded_linear_default_centers_near_middle():
    design = SimDesign(K=11, n=20_000, generator=ROUNDED_LINEAR)
    data = gen_rounded_linear(design, RngState(7).generator())
    assert np.mean(data.y) == pytest.approx(0.5, abs=0.03)


def test_design_validation():
    with pytest.raises(ValidationError):
        SimDesign(generator="LM")
    with pytest.raises(ValidationError):
        SimDesign(truth={'gamma': [0.0], 'beta': [0.0], 'theta': [0.0]})
    with pytest.raises(ValidationError):
        SimDesign.from_config({'truth': 'table9'})


def test_fitted_subset_of_generating_covariates():
    design = SimDesign.from_config({'K': 6, 'n': 50, 'fit_cols': ['V1', 'V2', 'D1']})
    assert design.generating_spec().dim == 24
    assert design.spec().dim == 12
    np.testing.assert_allclose(design.fit_truth_vector().values, [
        -4.5, 1.0, 0.0, -0.5,
        -1.0, -0.2, 0.9, 0.0,
        -3.0, 0.0, -0.2, 0.0,
    ])
    data = gen_idbr(design, RngState(11).generator())
    assert list(data.covariates.columns) == list(COVARIATES)
    with pytest.raises(ValidationError):
        SimDesign(fit_cols=('V9',))


def test_design_presets_from_config():
    design = SimDesign.from_config({'K': 11, 'truth': 'eleven_level', 'replications': 4})
    assert design.truth_vector().gamma[0] == -5.0
    assert design.spec().dim == 24


# =============================================================================
# METRICS
# =============================================================================

def test_rmse_bias_sd_identity():
    gen = np.random.default_rng(8)
    truth = np.array([0.5, -1.0, 2.0])
    medians = truth + gen.normal(0.1, 0.3, size=(40, 3))
    lows, highs = medians - 0.5, medians + 0.5
    table = parameter_metrics(['a', 'b', 'c'], truth, medians, lows, highs)
    np.testing.assert_allclose(table['rmse'] ** 2, table['bias'] ** 2 + table['emp_sd'] ** 2,
                               rtol=1e-6)
    np.testing.assert_allclose(table['hpd_length'], 1.0)
    assert table['hpd_coverage'].between(0.0, 1.0).all()


def test_marginal_distribution_shares():
    design = SimDesign(K=6, n=500, replications=3)
    table = marginal_distribution((replication_data(design, r) for r in range(3)), design.scale())
    assert table['count'].sum() == 1500
    assert table['share'].sum() == pytest.approx(1.0)
    assert list(table['level']) == [1, 2, 3, 4, 5, 6]


# =============================================================================
# STUDIES
# =============================================================================

SMOKE_SAMPLER = SamplerConfig(burn_in=40, keep=40, seed=5)


def test_smoke_study_two_replications():
    design = SimDesign(K=6, n=80, replications=2, seed=17)
    report = run_study(design, SMOKE_SAMPLER)
    assert report.n_replications == 2
    assert len(report.records) == 2
    assert report.n_failed == 0
    assert len(report.parameters) == 24
    assert report.prediction['n_pairs'] == 2
    assert report.prediction['n_predictions'] == 160
    assert 0.0 <= report.prediction['percent_correct'] <= 100.0
    assert 0.0 <= report.prediction['mean_length'] <= 1.0


def test_smoke_study_with_omitted_covariates():
    design = SimDesign(K=6, n=80, replications=2, seed=19, fit_cols=('V1', 'V2'))
    report = run_study(design, SMOKE_SAMPLER)
    assert list(report.parameters['parameter']) == design.spec().parameter_names()
    np.testing.assert_allclose(report.parameters['truth'], design.fit_truth_vector().values)
    assert report.design['fit_cols'] == ['V1', 'V2']


def test_study_is_reproducible():
    design = SimDesign(K=6, n=60, replications=2, seed=23)
    first = run_study(design, SMOKE_SAMPLER).to_dict()
    second = run_study(design, SMOKE_SAMPLER).to_dict()
    assert dumps_json(first) == dumps_json(second)


def test_study_needs_two_replications():
    with pytest.raises(ValidationError):
        run_study(SimDesign(replications=1), SMOKE_SAMPLER)


@pytest.mark.slow
def test_parallel_study_matches_serial():
    design = SimDesign(K=6, n=60, replications=3, seed=29)
    serial = run_study(design, SMOKE_SAMPLER, workers=1).to_dict()
    parallel = run_study(design, SMOKE_SAMPLER, workers=2).to_dict()
    assert dumps_json(serial) == dumps_json(parallel)


def _reference_frame(rows):
    names = SimDesign().spec().parameter_names()
    return pd.DataFrame(rows, index=names, columns=['bias', 'emp_sd'])


# Reference (bias, emp. SD) of posterior medians at n=900 over 50 replications,
# ordered inflation, location, dispersion; intercept, V1..V4, D1..D3 within each.
SIX_LEVEL_REFERENCE = _reference_frame([
    (-0.241, 0.901), (0.039, 0.145), (0.023, 0.148), (0.011, 0.120),
    (-0.027, 0.143), (-0.052, 0.261), (0.005, 0.258), (-0.006, 0.253),
    (-0.012, 0.139), (-0.000, 0.022), (0.003, 0.027), (-0.001, 0.022),
    (0.001, 0.023), (-0.000, 0.043), (0.005, 0.044), (-0.002, 0.044),
    (0.001, 0.465), (0.002, 0.073), (-0.003, 0.085), (0.010, 0.077),
    (-0.010, 0.077), (0.002, 0.142), (-0.004, 0.140), (0.009, 0.145),
])
ELEVEN_LEVEL_REFERENCE = _reference_frame([
    (-0.252, 0.936), (0.031, 0.161), (0.021, 0.156), (0.014, 0.144),
    (-0.024, 0.150), (-0.031, 0.280), (-0.001, 0.280), (-0.007, 0.299),
    (0.006, 0.112), (-0.002, 0.019), (0.003, 0.022), (-0.002, 0.020),
    (-0.002, 0.020), (-0.001, 0.038), (0.001, 0.039), (0.000, 0.040),
    (0.007, 0.361), (0.002, 0.061), (-0.006, 0.063), (0.001, 0.057),
    (-0.001, 0.057), (0.002, 0.116), (0.004, 0.117), (0.003, 0.112),
])


def _assert_recovery(report, reference):
    table = report.parameters.set_index('parameter')
    assert list(table.index) == list(reference.index)
    reps = report.design['replications']
    band = 3 * reference['emp_sd'] / np.sqrt(reps) + reference['bias'].abs()
    outside = table['bias'].abs() > band
    assert not outside.any(), table.loc[outside, ['bias', 'emp_sd']]
    assert table['hpd_coverage'].between(0.86, 1.0).all()


@pytest.mark.slow
@pytest.mark.skipif(not RUN_STUDIES, reason="set IDBR_RUN_STUDIES=1 for the full studies")
def test_six_level_study_reproduces_estimation_and_prediction():
    report = run_study(SimDesign(K=6, n=900, replications=50, seed=1), SamplerConfig(seed=1))
    _assert_recovery(report, SIX_LEVEL_REFERENCE)
    pred = report.prediction
    assert pred['percent_correct'] == pytest.approx(49.2, abs=4.0)
    assert pred['region_coverage'] == pytest.approx(94.1, abs=3.0)
    assert pred['mean_length'] == pytest.approx(0.550, abs=0.06)
    assert pred['percent_disjoint'] == pytest.approx(34.6, abs=6.0)


@pytest.mark.slow
@pytest.mark.skipif(not RUN_STUDIES, reason="set IDBR_RUN_STUDIES=1 for the full studies")
def test_eleven_level_study_reproduces_estimation_and_prediction():
    design = SimDesign.from_config({'K': 11, 'n': 900, 'truth': 'eleven_level', 'seed': 2})
    report = run_study(design, SamplerConfig(seed=2))
    _assert_recovery(report, ELEVEN_LEVEL_REFERENCE)
    pred = report.prediction
    assert pred['percent_correct'] == pytest.approx(32.4, abs=4.0)
    assert pred['region_coverage'] == pytest.approx(94.5, abs=3.0)
    assert pred['mean_length'] == pytest.approx(0.488, abs=0.06)
    assert pred['percent_disjoint'] == pytest.approx(37.1, abs=6.0)
