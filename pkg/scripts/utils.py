"""
Shared Utilities Module
=======================
Common I/O helpers, JSON serialization and error types used across the
IDBR scripts.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd


# =============================================================================
# ERRORS
# =============================================================================

class DomainError(ValueError):
    """Argument outside the domain of a special function or distribution."""


class ValidationError(ValueError):
    """Input data or configuration that does not satisfy its declared shape."""

    def __init__(self, message: str, value: Any = None, row: Optional[int] = None):
        if row is not None:
            message = f"{message} (row {row}, value {value!r})"
        elif value is not None:
            message = f"{message} (value {value!r})"
        super().__init__(message)
        self.value = value
        self.row = row


class SpecificationError(ValueError):
    """Model specification that is internally inconsistent."""


class FitError(RuntimeError):
    """Estimation could not be carried out on the supplied design."""


# =============================================================================
# PATHS & DATA LOADING
# =============================================================================

def get_analysis_dir() -> Path:
    """Get the path to the analysis (output) directory."""
    return Path(__file__).parent.parent / "analysis"


def resolve_output_path(path: Union[str, Path, None], default_name: str) -> Path:
    """
    Resolve where a result document should be written.

    Args:
        path: Explicit output path from the config or command line, if any
        default_name: File name used inside the analysis directory otherwise

    Returns:
        Absolute or relative path with its parent directory created
    """
    if path:
        out = Path(path)
    else:
        out = get_analysis_dir() / default_name
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def load_json_path(path: Union[str, Path]) -> Dict:
    """
    Load a JSON document from an explicit path.

    Raises:
        ValidationError: if the file is missing or is not valid JSON
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"File not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"Invalid JSON in {path}: {e}")


def load_csv_path(path: Union[str, Path]) -> pd.DataFrame:
    """Load a UTF-8, comma-separated CSV file with a header row."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"Data file not found: {path}")
    return pd.read_csv(path, sep=',', encoding='utf-8')


# =============================================================================
# JSON SERIALIZATION HELPERS
# =============================================================================

def convert_for_json(obj: Any) -> Any:
    """
    Convert numpy/pandas types to JSON-serializable Python types.

    Args:
        obj: Object to convert

    Returns:
        JSON-serializable version of the object
    """
    if isinstance(obj, (np.integer,)):
        return int(obj)
    elif isinstance(obj, (np.floating,)):
        return float(obj)
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, pd.Series):
        return obj.tolist()
    elif isinstance(obj, pd.DataFrame):
        return obj.to_dict('records')
    elif isinstance(obj, Path):
        return str(obj)
    elif isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps_json(data: Any, indent: int = 2) -> str:
    """Serialize with stable key order so reruns produce identical bytes."""
    return json.dumps(data, indent=indent, sort_keys=True, default=convert_for_json)


def save_json(data: Any, path: Union[str, Path], indent: int = 2) -> Path:
    """
    Save data to a JSON file.

    Args:
        data: Data to save (will be converted to JSON-serializable format)
        path: Output file path; parent directories are created
        indent: JSON indentation level

    Returns:
        Path to the saved file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps_json(data, indent=indent))
        f.write("\n")
    return path
