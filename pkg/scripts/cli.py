"""
IDBR Command Line
=================
Fit, predict and simulate from one JSON run configuration plus flag
overrides.

Usage:
    python scripts/cli.py fit --config configs/fit_example.json
    python scripts/cli.py predict --model analysis/idbr_fit.json --data new_rows.csv
    python scripts/cli.py simulate --config configs/simulate_six_level.json --replications 2

Result documents are written as JSON with sorted keys, by default into
analysis/.
"""

import argparse
import copy
import logging
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from model import (INTERCEPT, Dataset, ModelSpec, apply_standardization,
                   fit_standardization)
from predict import PredictiveDistribution, predictive_distributions, region_length
from sampler import PosteriorSample, SamplerConfig, fit
from scale import ScaleSpec, encode_labels, reduce_responses
from simulate import SimDesign, marginal_distribution, replication_data, run_sizes, run_study
from utils import (DomainError, FitError, SpecificationError, ValidationError,
                   load_csv_path, load_json_path, resolve_output_path, save_json)

logger = logging.getLogger(__name__)

COMMANDS = ("fit", "predict", "simulate")

# Config sampler keys -> SamplerConfig fields
SAMPLER_KEYS = {
    'seed': 'seed',
    'burn_in': 'burn_in',
    'keep': 'keep',
    'chains': 'n_chains',
    'n_chains': 'n_chains',
    'target_accept': 'target_accept',
    'adapt_window': 'adapt_window',
    'hpd_level': 'hpd_level',
    'initial_scale': 'initial_scale',
    'rhat_threshold': 'rhat_threshold',
}

DEFAULT_OUTPUTS = {
    'fit': "idbr_fit.json",
    'predict': "idbr_predictions.json",
    'simulate': "idbr_simulation.json",
}


# =============================================================================
# CONFIGURATION
# =============================================================================

def apply_overrides(config: dict, args: argparse.Namespace) -> dict:
    """Copy of ``config`` with command-line flags layered on top."""
    config = copy.deepcopy(config)
    sampler = config.setdefault('sampler', {})
    for flag, key in (('seed', 'seed'), ('chains', 'chains'), ('burn_in', 'burn_in'),
                      ('keep', 'keep'), ('hpd_level', 'hpd_level')):
        value = getattr(args, flag, None)
        if value is not None:
            sampler[key] = value
    if getattr(args, 'command', None):
        config['command'] = args.command
    if getattr(args, 'out', None):
        config['output_path'] = args.out
    if getattr(args, 'data', None):
        config['data_path'] = args.data
    if getattr(args, 'model', None):
        config['model_path'] = args.model
    if getattr(args, 'replications', None) is not None:
        config.setdefault('design', {})['replications'] = args.replications
    if getattr(args, 'sizes', None):
        config['sizes'] = list(args.sizes)
    if getattr(args, 'workers', None) is not None:
        config['workers'] = args.workers
    return config


def validate_config(config: dict) -> dict:
    command = config.get('command')
    if command not in COMMANDS:
        raise ValidationError(f"command must be one of {COMMANDS}", value=command)
    required = {
        'fit': ('data_path', 'response', 'scale'),
        'predict': ('data_path', 'model_path'),
        'simulate': (),
    }[command]
    missing = [key for key in required if not config.get(key)]
    if missing:
        raise ValidationError(f"Config for '{command}' is missing {missing}")
    return config


def sampler_from_config(block: Optional[dict]) -> SamplerConfig:
    block = block or {}
    unknown = sorted(set(block) - set(SAMPLER_KEYS))
    if unknown:
        raise ValidationError(f"Unknown sampler keys: {unknown}")
    return SamplerConfig(**{SAMPLER_KEYS[key]: value for key, value in block.items()})


def spec_from_config(config: dict, s: ScaleSpec) -> ModelSpec:
    intercepts = config.get('intercepts', {})
    inflation_cols = tuple(config.get('inflation', ()))
    inflation_intercept = intercepts.get('inflation', True)
    if s.inflated_k is None and inflation_intercept and not inflation_cols:
        inflation_intercept = False
    if s.inflated_k is not None and not inflation_intercept and not inflation_cols:
        # no inflation terms requested: pure DBR on the same scale
        s = s.with_inflation(None)
    return ModelSpec(
        scale=s,
        location_cols=tuple(config.get('location', ())),
        dispersion_cols=tuple(config.get('dispersion', ())),
        inflation_cols=inflation_cols,
        location_intercept=intercepts.get('location', True),
        dispersion_intercept=intercepts.get('dispersion', True),
        inflation_intercept=inflation_intercept,
    )


# =============================================================================
# CSV INGESTION
# =============================================================================

def _numeric_columns(frame: pd.DataFrame, cols: Sequence[str],
                     row_numbers: np.ndarray) -> pd.DataFrame:
    out = pd.DataFrame(index=frame.index)
    for col in cols:
        values = pd.to_numeric(frame[col], errors='coerce')
        bad = values.isna().to_numpy()
        if bad.any():
            pos = int(np.argmax(bad))
            raise ValidationError(f"Column '{col}' is not numeric",
                                  value=frame[col].iloc[pos], row=int(row_numbers[pos]))
        out[col] = values.astype(float)
    return out


def check_dummies(frame: pd.DataFrame, dummies: Sequence[str], row_numbers: np.ndarray) -> None:
    """Declared dummy columns may only hold 0 and 1."""
    for col in dummies:
        if col not in frame.columns:
            continue
        bad = ~frame[col].isin([0.0, 1.0]).to_numpy()
        if bad.any():
            pos = int(np.argmax(bad))
            raise ValidationError(f"Dummy column '{col}' must be 0/1",
                                  value=frame[col].iloc[pos], row=int(row_numbers[pos]))


def read_covariates(path: str, columns: Sequence[str],
                    dummies: Sequence[str] = ()) -> Tuple[pd.DataFrame, np.ndarray, int]:
    """
    Load the named covariate columns with listwise deletion.

    Returns:
        (covariates, 1-based data row numbers kept, number of rows dropped)
    """
    raw = load_csv_path(path)
    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise ValidationError(f"Columns not found in {path}: {missing}")
    complete = raw[list(columns)].notna().all(axis=1) if columns else pd.Series(True, index=raw.index)
    kept = raw[complete]
    row_numbers = kept.index.to_numpy() + 1
    covariates = _numeric_columns(kept, columns, row_numbers).reset_index(drop=True)
    check_dummies(covariates, dummies, row_numbers)
    return covariates, row_numbers, int((~complete).sum())


def ingest_csv(path: str, config: dict) -> Tuple[Dataset, ScaleSpec]:
    """
    Read a CSV into a Dataset on the reduced grid.

    Rows missing the response or any used covariate are dropped and
    counted. Responses are validated against the declared support; label
    responses are mapped through ``scale.labels``.

    Raises:
        ValidationError: off-support response (with its row), missing
            columns, or no usable rows
    """
    s = ScaleSpec.from_config(config['scale'])
    response = config['response']
    spec = spec_from_config(config, s)
    used = spec.used_columns()

    raw = load_csv_path(path)
    if response not in raw.columns:
        raise ValidationError(f"Response column '{response}' not found in {path}")
    missing = [c for c in used if c not in raw.columns]
    if missing:
        raise ValidationError(f"Covariate columns not found in {path}: {missing}")

    complete = raw[[response, *used]].notna().all(axis=1)
    kept = raw[complete]
    dropped = int((~complete).sum())
    if dropped:
        logger.info("Dropped %d of %d rows with missing values", dropped, len(raw))
    if kept.empty:
        raise ValidationError(f"No complete rows left in {path} after listwise deletion")

    row_numbers = kept.index.to_numpy() + 1
    values = kept[response]
    if not pd.api.types.is_numeric_dtype(values):
        values = encode_labels(values.tolist(), s, row_numbers)
    y = reduce_responses(values, s, row_numbers)

    covariates = _numeric_columns(kept, used, row_numbers).reset_index(drop=True)
    check_dummies(covariates, config.get('dummies', ()), row_numbers)

    data = Dataset(y=y, covariates=covariates, dropped=dropped,
                   metadata={'source': str(path), 'rows': row_numbers})
    return data, s


# =============================================================================
# FITTED MODEL DOCUMENT
# =============================================================================

@dataclass
class FittedModel:
    """Everything prediction needs, restored from a fit document."""

    spec: ModelSpec
    posterior: PosteriorSample
    standardization: Dict[str, Dict[str, float]] = field(default_factory=dict)
    dummies: List[str] = field(default_factory=list)
    sampler: Optional[SamplerConfig] = None


def load_model(path: str) -> FittedModel:
    """Restore a fitted model from the JSON document written by fit."""
    doc = load_json_path(path)
    if doc.get('command') != 'fit' or 'posterior' not in doc:
        raise ValidationError(f"{path} is not a fitted-model document")
    return FittedModel(
        spec=ModelSpec.from_dict(doc['model']),
        posterior=PosteriorSample.from_dict(doc['posterior']),
        standardization=doc.get('standardization') or {},
        dummies=list(doc.get('config', {}).get('dummies', [])),
        sampler=SamplerConfig.from_dict(doc.get('sampler', {})),
    )


def parameter_rows(posterior: PosteriorSample) -> List[dict]:
    rows = []
    for j, name in enumerate(posterior.names):
        submodel, term = name.split(":", 1)
        rows.append({
            'parameter': name,
            'submodel': submodel,
            'term': term,
            'estimate': float(posterior.medians[j]),
            'hpd_low': float(posterior.hpd[j, 0]),
            'hpd_up': float(posterior.hpd[j, 1]),
            'p': float(posterior.sign_opposition[j]),
            'rhat': float(posterior.gelman[j]),
            'acceptance': float(posterior.acceptance_rates[j]),
            'ess': float(posterior.effective_sizes[j]),
        })
    return rows


def precision_view(rows: List[dict]) -> List[dict]:
    """Dispersion parameters restated for log precision (signs flipped)."""
    return [{'parameter': r['parameter'], 'estimate': -r['estimate'],
             'hpd_low': -r['hpd_up'], 'hpd_up': -r['hpd_low']}
            for r in rows if r['submodel'] == 'dispersion']


def odds_ratios(rows: List[dict]) -> List[dict]:
    return [{'parameter': r['parameter'], 'odds_ratio': float(np.exp(r['estimate'])),
             'hpd_low': float(np.exp(r['hpd_low'])), 'hpd_up': float(np.exp(r['hpd_up']))}
            for r in rows if r['submodel'] == 'inflation' and r['term'] != INTERCEPT]


def inflated_level_info(s: ScaleSpec) -> Optional[dict]:
    if s.inflated_k is None:
        return None
    return {
        'k': s.inflated_k,
        'reduced': s.inflated_point,
        'original': s.a + (s.inflated_k - 1) * s.h_star,
        'label': s.label(s.inflated_k),
    }


# =============================================================================
# COMMANDS
# =============================================================================

def fit_command(config: dict) -> dict:
    """
    Fit the configured model and build the fitted-model document.

    The document carries the config, scale, model specification,
    standardization parameters and every retained draw.
    """
    data, s = ingest_csv(config['data_path'], config)
    spec = spec_from_config(config, s)
    cfg = sampler_from_config(config.get('sampler'))

    standardization = {}
    if config.get('standardize'):
        dummies = set(config.get('dummies', ()))
        standardization = fit_standardization(
            data.covariates, [c for c in spec.used_columns() if c not in dummies]
        )
        data = Dataset(y=data.y, covariates=apply_standardization(data.covariates, standardization),
                       dropped=data.dropped, metadata=data.metadata)

    posterior = fit(data, spec, cfg)
    rows = parameter_rows(posterior)
    return {
        'command': 'fit',
        'config': config,
        'model': spec.to_dict(),
        'sampler': cfg.to_dict(),
        'standardization': standardization,
        'data': {'path': str(config['data_path']), 'n': data.n, 'dropped': data.dropped},
        'inflated_level': inflated_level_info(spec.scale),
        'parameters': rows,
        'precision_view': precision_view(rows),
        'odds_ratios': odds_ratios(rows),
        'warnings': list(posterior.warnings),
        'posterior': posterior.to_dict(),
    }


def prediction_record(dist: PredictiveDistribution, s: ScaleSpec, row_number: int) -> dict:
    """One row of a prediction document, on the original scale."""
    support = s.support()
    region = dist.region
    return {
        'row': int(row_number),
        'mass': [float(m) for m in dist.mass],
        'support': support.tolist(),
        'labels': [s.label(k) for k in range(1, s.K + 1)],
        'mode': {'k': dist.mode_index, 'original': float(support[dist.mode_index - 1]),
                 'label': s.label(dist.mode_index), 'reduced': dist.mode},
        'region': {
            'k': list(region.points),
            'original': [float(support[k - 1]) for k in region.points],
            'labels': [s.label(k) for k in region.points],
            'coverage': region.coverage,
            'length': region_length(region, s),
        },
        'disjoint': dist.disjoint,
        'pi_hat': dist.pi_hat,
    }


def predict_rows(model: FittedModel, covariates: pd.DataFrame, row_numbers: Sequence[int],
                 seed: int, level: float) -> List[dict]:
    frame = apply_standardization(covariates, model.standardization)
    dists = predictive_distributions(model.posterior, frame, model.spec, seed, level)
    return [prediction_record(d, model.spec.scale, r) for d, r in zip(dists, row_numbers)]


def predict_command(config: dict) -> dict:
    """Predictive documents for every complete row of ``data_path``."""
    model = load_model(config['model_path'])
    sampler = config.get('sampler', {})
    seed = int(sampler.get('seed', model.sampler.seed if model.sampler else SamplerConfig.seed))
    level = float(sampler.get('hpd_level', model.posterior.hpd_level))
    if not 0.0 < level < 1.0:
        raise ValidationError("hpd_level must lie in (0, 1)", value=level)

    covariates, row_numbers, dropped = read_covariates(
        config['data_path'], model.spec.used_columns(), model.dummies
    )
    if dropped:
        logger.info("Skipped %d rows with missing covariates", dropped)
    return {
        'command': 'predict',
        'model_path': str(config['model_path']),
        'data_path': str(config['data_path']),
        'seed': seed,
        'level': level,
        'dropped': dropped,
        'inflated_level': inflated_level_info(model.spec.scale),
        'predictions': predict_rows(model, covariates, row_numbers, seed, level),
    }


def simulate_command(config: dict) -> dict:
    """Study report, or one report per sample size when ``sizes`` is set."""
    design = SimDesign.from_config(config.get('design', {}))
    cfg = sampler_from_config(config.get('sampler'))
    workers = int(config.get('workers', 1))
    doc = {'command': 'simulate'}
    if config.get('sizes'):
        reports = run_sizes(design, config['sizes'], cfg, workers)
        doc['sizes'] = {str(n): report.to_dict() for n, report in reports.items()}
    else:
        doc.update(run_study(design, cfg, workers).to_dict())
    if config.get('marginal_path'):
        datasets = (replication_data(design, r) for r in range(design.replications))
        marginal = marginal_distribution(datasets, design.scale())
        path = resolve_output_path(config['marginal_path'], "idbr_marginal.csv")
        marginal.to_csv(path, index=False)
        doc['marginal_path'] = str(path)
    return doc


# =============================================================================
# RUNNERS
# =============================================================================

def run_fit(config: dict) -> dict:
    print("=" * 70)
    print("IDBR FIT")
    print("=" * 70)
    doc = fit_command(config)

    print(f"\nData: {doc['data']['path']}  n={doc['data']['n']}  dropped={doc['data']['dropped']}")
    if doc['inflated_level']:
        print(f"Inflated level: {doc['inflated_level']['label']} (k={doc['inflated_level']['k']})")

    print("\n" + "-" * 50)
    print("POSTERIOR SUMMARY")
    print("-" * 50)
    for r in doc['parameters']:
        print(f"  {r['parameter']:<32} {r['estimate']:>8.3f}  "
              f"[{r['hpd_low']:>7.3f}, {r['hpd_up']:>7.3f}]  p={r['p']:.3f}  Rhat={r['rhat']:.3f}")

    for warning in doc['warnings']:
        print(f"  WARNING: {warning}")

    path = save_json(doc, resolve_output_path(config.get('output_path'), DEFAULT_OUTPUTS['fit']))
    print(f"\nResults saved to: {path}")
    return doc


def run_predict(config: dict) -> dict:
    print("=" * 70)
    print("IDBR PREDICTION")
    print("=" * 70)
    doc = predict_command(config)

    predictions = doc['predictions']
    print(f"\n{len(predictions)} rows predicted at level {doc['level']}, {doc['dropped']} skipped")
    if predictions:
        disjoint = sum(p['disjoint'] for p in predictions)
        print(f"  Disjoint regions: {disjoint}")

    path = save_json(doc, resolve_output_path(config.get('output_path'), DEFAULT_OUTPUTS['predict']))
    print(f"\nResults saved to: {path}")
    return doc


def _print_report(report: dict) -> None:
    print(f"  Replications: {report['n_replications']}  failed: {report['n_failed']}")
    for r in report['parameters']:
        print(f"  {r['parameter']:<28} bias={r['bias']:>7.3f}  sd={r['emp_sd']:.3f}  "
              f"rmse={r['rmse']:.3f}  cov={r['hpd_coverage']:.3f}  len={r['hpd_length']:.3f}")
    pred = report['prediction']
    print(f"  Correct: {pred['percent_correct']:.1f}%  coverage: {pred['region_coverage']:.1f}%  "
          f"length: {pred['mean_length']:.3f}  disjoint: {pred['percent_disjoint']:.1f}%")


def run_simulation(config: dict) -> dict:
    print("=" * 70)
    print("IDBR SIMULATION STUDY")
    print("=" * 70)
    doc = simulate_command(config)

    reports = doc['sizes'] if 'sizes' in doc else {str(doc['design']['n']): doc}
    for n, report in reports.items():
        print("\n" + "-" * 50)
        print(f"n = {n}")
        print("-" * 50)
        _print_report(report)

    path = save_json(doc, resolve_output_path(config.get('output_path'), DEFAULT_OUTPUTS['simulate']))
    print(f"\nResults saved to: {path}")
    return doc


RUNNERS = {'fit': run_fit, 'predict': run_predict, 'simulate': run_simulation}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Inflated discrete beta regression")
    parser.add_argument('command', nargs='?', choices=COMMANDS,
                        help="Overrides the command named in the config")
    parser.add_argument('--config', help="JSON run configuration")
    parser.add_argument('--seed', type=int)
    parser.add_argument('--chains', type=int)
    parser.add_argument('--burn-in', dest='burn_in', type=int)
    parser.add_argument('--keep', type=int)
    parser.add_argument('--hpd-level', dest='hpd_level', type=float)
    parser.add_argument('--replications', type=int)
    parser.add_argument('--sizes', type=int, nargs='+', help="Sample sizes for simulate")
    parser.add_argument('--workers', type=int, help="Worker processes for simulate")
    parser.add_argument('--model', help="Fitted-model document for predict")
    parser.add_argument('--data', help="CSV file for fit or predict")
    parser.add_argument('--out', help="Output path")
    parser.add_argument('-v', '--verbose', action='store_true')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_json_path(args.config) if args.config else {}
        config = validate_config(apply_overrides(config, args))
        RUNNERS[config['command']](config)
    except (ValidationError, SpecificationError, DomainError, FitError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
