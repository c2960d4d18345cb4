"""
Ordinal Scale
=============
The K-level rating scale: original support {a, a+h*, ..., b}, the reduced
grid {h, 2h, ..., 1} with h = 1/K, and the optional inflated level.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils import ValidationError

GRID_TOL = 1e-9


@dataclass(frozen=True)
class ScaleSpec:
    """
    Equally spaced ordinal scale.

    Attributes:
        a: Scale minimum on the original support
        b: Scale maximum on the original support
        h_star: Spacing between consecutive original levels
        inflated_k: 1-based index of the inflated grid point, if any
        labels: Optional display labels, one per level, in scale order
    """

    a: float
    b: float
    h_star: float
    inflated_k: Optional[int] = None
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if not self.h_star > 0:
            raise ValidationError("h_star must be positive", value=self.h_star)
        if not self.b > self.a:
            raise ValidationError("Scale maximum b must exceed minimum a", value=(self.a, self.b))
        steps = (self.b - self.a) / self.h_star
        if abs(steps - round(steps)) > GRID_TOL * max(1.0, abs(steps)):
            raise ValidationError(
                "(b - a) must be a whole multiple of h_star", value=(self.a, self.b, self.h_star)
            )
        if self.inflated_k is not None and not (1 <= int(self.inflated_k) <= self.K):
            raise ValidationError(f"inflated_k must lie in 1..{self.K}", value=self.inflated_k)
        if self.labels is not None:
            object.__setattr__(self, 'labels', tuple(str(lab) for lab in self.labels))
            if len(self.labels) != self.K:
                raise ValidationError(
                    f"Expected {self.K} labels, got {len(self.labels)}", value=self.labels
                )

    # -------------------------------------------------------------------------
    # Constructors
    # -------------------------------------------------------------------------

    @classmethod
    def from_levels(cls, K: int, inflated_k: Optional[int] = None,
                    labels: Optional[Sequence[str]] = None) -> "ScaleSpec":
        """Scale 1..K with unit spacing, as used by the simulation designs."""
        if int(K) < 2:
            raise ValidationError("A scale needs at least 2 levels", value=K)
        return cls(a=1.0, b=float(K), h_star=1.0, inflated_k=inflated_k,
                   labels=tuple(labels) if labels is not None else None)

    @classmethod
    def from_config(cls, block: dict) -> "ScaleSpec":
        """
        Build a scale from a config block with keys a, b, h_star and the
        optional inflated_level (on the ORIGINAL scale) and labels.
        """
        missing = [key for key in ('a', 'b', 'h_star') if key not in block]
        if missing:
            raise ValidationError(f"Scale block is missing {missing}")
        base = cls(a=float(block['a']), b=float(block['b']), h_star=float(block['h_star']),
                   labels=tuple(block['labels']) if block.get('labels') else None)
        level = block.get('inflated_level')
        if level is None:
            return base
        try:
            k = original_index(float(level), base)
        except ValidationError:
            raise ValidationError("Inflated level is not on the declared support", value=level)
        return base.with_inflation(k)

    def with_inflation(self, inflated_k: Optional[int]) -> "ScaleSpec":
        return ScaleSpec(self.a, self.b, self.h_star, inflated_k, self.labels)

    # -------------------------------------------------------------------------
    # Derived quantities
    # -------------------------------------------------------------------------

    @property
    def K(self) -> int:
        return int(round((self.b - self.a) / self.h_star)) + 1

    @property
    def h(self) -> float:
        return 1.0 / self.K

    @property
    def inflated_point(self) -> Optional[float]:
        """Inflated level on the reduced grid (k h), if any."""
        if self.inflated_k is None:
            return None
        return self.inflated_k / self.K

    def grid(self) -> np.ndarray:
        """Reduced grid {h, 2h, ..., 1}."""
        return np.arange(1, self.K + 1) / self.K

    def support(self) -> np.ndarray:
        """Original support {a, a+h*, ..., b}."""
        return self.a + np.arange(self.K) * self.h_star

    def label(self, k: int) -> str:
        """Display label of grid index k (1-based)."""
        if self.labels is not None:
            return self.labels[k - 1]
        value = self.a + (k - 1) * self.h_star
        return f"{value:g}"

    def to_dict(self) -> dict:
        return {
            'a': self.a,
            'b': self.b,
            'h_star': self.h_star,
            'K': self.K,
            'inflated_k': self.inflated_k,
            'inflated_level': (None if self.inflated_k is None
                               else self.a + (self.inflated_k - 1) * self.h_star),
            'labels': list(self.labels) if self.labels is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScaleSpec":
        return cls(a=data['a'], b=data['b'], h_star=data['h_star'],
                   inflated_k=data.get('inflated_k'),
                   labels=tuple(data['labels']) if data.get('labels') else None)


# =============================================================================
# MAPPINGS
# =============================================================================

def original_index(y_star: float, s: ScaleSpec, row: Optional[int] = None) -> int:
    """1-based level index of a value on the original support."""
    t = (float(y_star) - s.a) / s.h_star
    j = int(round(t))
    if not np.isfinite(t) or abs(t - j) > GRID_TOL or not (0 <= j <= s.K - 1):
        raise ValidationError("Response is not on the declared scale support", value=y_star, row=row)
    return j + 1


def to_reduced(y_star: float, s: ScaleSpec, row: Optional[int] = None) -> float:
    """Rescale an original-support value into the unit grid: (y*−a+h*)/(b−a+h*)."""
    return original_index(y_star, s, row) / s.K


def from_reduced(y: float, s: ScaleSpec) -> float:
    """Inverse of to_reduced."""
    k = grid_index(y, s)
    return s.a + (k - 1) * s.h_star


def grid_index(y: float, s: ScaleSpec) -> int:
    """Index k in 1..K of a reduced-grid value y = k h."""
    t = float(y) * s.K
    k = int(round(t))
    if not np.isfinite(t) or abs(t - k) > GRID_TOL * max(1.0, abs(t)) or not (1 <= k <= s.K):
        raise ValidationError("Value is not on the reduced grid", value=y)
    return k


def reduce_responses(values: Sequence[float], s: ScaleSpec,
                     row_numbers: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Validate and rescale a column of original-scale responses.

    Values are snapped to the exact rational k/K. The first off-grid value
    raises ValidationError naming its row.
    """
    values = np.asarray(values, dtype=float)
    t = (values - s.a) / s.h_star
    j = np.round(t)
    bad = ~np.isfinite(t) | (np.abs(t - j) > GRID_TOL) | (j < 0) | (j > s.K - 1)
    if bad.any():
        pos = int(np.argmax(bad))
        row = int(row_numbers[pos]) if row_numbers is not None else pos
        raise ValidationError("Response is not on the declared scale support",
                              value=float(values[pos]), row=row)
    return (j + 1) / s.K


def grid_indices(y: np.ndarray, s: ScaleSpec) -> np.ndarray:
    """
    Vectorized grid_index. The first value off the grid (relative tolerance
    GRID_TOL) raises ValidationError naming its 0-based row.
    """
    t = np.asarray(y, dtype=float) * s.K
    k = np.rint(t)
    bad = ~np.isfinite(t) | (np.abs(t - k) > GRID_TOL * np.maximum(1.0, np.abs(t))) | (k < 1) | (k > s.K)
    if bad.any():
        pos = int(np.argmax(bad))
        raise ValidationError("Value is not on the reduced grid", value=float(np.asarray(y)[pos]), row=pos)
    return k.astype(np.int64)


def encode_labels(values: Sequence[str], s: ScaleSpec,
                  row_numbers: Optional[Sequence[int]] = None) -> np.ndarray:
    """Map label strings to original-support values by their declared order."""
    if s.labels is None:
        raise ValidationError("Non-numeric responses need scale labels in the config")
    lookup = {lab: s.a + i * s.h_star for i, lab in enumerate(s.labels)}
    out: List[float] = []
    for i, value in enumerate(values):
        key = str(value)
        if key not in lookup:
            row = int(row_numbers[i]) if row_numbers is not None else i
            raise ValidationError("Unknown response label", value=value, row=row)
        out.append(lookup[key])
    return np.asarray(out, dtype=float)
