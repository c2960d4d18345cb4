"""
IDBR Prediction API

A small REST service over one fitted IDBR model.

Run locally (from scripts/): IDBR_MODEL_PATH=../analysis/idbr_fit.json uvicorn api:app --reload

Endpoints:
- GET  /         - API info
- GET  /model    - Loaded model summary
- POST /predict  - Predictive distributions for covariate rows
"""

import math
import os
from typing import Dict, List, Optional

import pandas as pd
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from cli import FittedModel, inflated_level_info, load_model, parameter_rows, predict_rows
from utils import ValidationError

MODEL_ENV = "IDBR_MODEL_PATH"

app = FastAPI(
    title="IDBR Prediction API",
    description="Posterior predictive distributions from an inflated discrete beta regression fit",
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# =============================================================================
# MODEL LOADING
# =============================================================================

_MODEL: Dict[str, Optional[FittedModel]] = {'model': None}


def set_model(model: Optional[FittedModel]) -> None:
    _MODEL['model'] = model


def get_model() -> FittedModel:
    """The loaded model; loaded lazily from $IDBR_MODEL_PATH on first use."""
    if _MODEL['model'] is None:
        path = os.environ.get(MODEL_ENV)
        if not path:
            raise HTTPException(status_code=503, detail=f"No model loaded; set {MODEL_ENV}")
        try:
            _MODEL['model'] = load_model(path)
        except ValidationError as e:
            raise HTTPException(status_code=503, detail=str(e))
    return _MODEL['model']


def _finite_only(row: dict) -> dict:
    """JSON responses cannot carry NaN or infinity."""
    return {key: (None if isinstance(value, float) and not math.isfinite(value) else value)
            for key, value in row.items()}


class PredictRequest(BaseModel):
    rows: List[Dict[str, float]] = Field(..., min_length=1, description="Covariate rows")
    seed: Optional[int] = Field(None, description="Defaults to the fit's sampler seed")
    level: float = Field(0.95, gt=0.0, lt=1.0, description="HPD region level")


# =============================================================================
# API ENDPOINTS
# =============================================================================

@app.get("/")
def root():
    """API information and available endpoints"""
    return {
        "name": "IDBR Prediction API",
        "version": "1.0.0",
        "model_loaded": _MODEL['model'] is not None or bool(os.environ.get(MODEL_ENV)),
        "endpoints": {
            "/model": "Summary of the loaded fit",
            "/predict": "Predictive mass, mode and HPD region per covariate row",
        },
        "documentation": "/docs"
    }


@app.get("/model")
def get_model_summary():
    """Scale, submodel terms and posterior summary of the loaded fit"""
    model = get_model()
    spec = model.spec
    return {
        "scale": spec.scale.to_dict(),
        "inflated_level": inflated_level_info(spec.scale),
        "terms": {sub: spec.submodel_terms(sub) for sub in ("inflation", "location", "dispersion")},
        "required_columns": spec.used_columns(),
        "n_draws": model.posterior.n_draws,
        "parameters": [_finite_only(row) for row in parameter_rows(model.posterior)],
        "warnings": model.posterior.warnings,
    }


@app.post("/predict")
def predict(request: PredictRequest):
    """
    Predictive documents for each row.

    - **rows**: one object per subject mapping covariate name to value
    - **seed**: row i draws from stream i of this seed
    - **level**: HPD region level
    """
    model = get_model()
    required = model.spec.used_columns()
    frame = pd.DataFrame(request.rows)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise HTTPException(status_code=422, detail=f"Missing covariates: {missing}")
    if frame[required].isna().any().any():
        raise HTTPException(status_code=422, detail="Every row needs every covariate")

    seed = request.seed if request.seed is not None else model.sampler.seed
    predictions = predict_rows(model, frame[required].astype(float),
                               range(1, len(frame) + 1), seed, request.level)
    return {"seed": seed, "level": request.level, "count": len(predictions),
            "predictions": predictions}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
