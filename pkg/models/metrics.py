"""Regression metrics in original label units, with 95% confidence half-widths"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Sequence

import numpy as np
from sklearn.metrics import mean_absolute_error, mean_squared_error

from core.errors import ParameterError, ShapeError

logger = logging.getLogger(__name__)

Z_95 = 1.96
MAPE_FLOOR = 1e-12


def ci_half_width(samples: np.ndarray) -> float:
    """Normal-approximation half-width 1.96 * sd / sqrt(n)"""
    n = len(samples)
    if n < 2:
        return 0.0
    return float(Z_95 * np.std(samples, ddof=1) / np.sqrt(n))


@dataclass
class LabelMetrics:
    """Errors for one label column"""
    label: str
    mse: float
    mae: float
    mape: float
    mse_ci: float
    mae_ci: float
    mape_ci: float
    n: int
    mape_excluded: int = 0


@dataclass
class Metrics:
    per_label: Dict[str, LabelMetrics]
    mse: float
    mae: float
    mape: float
    n_samples: int
    mape_excluded: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "mape": self.mape,
            "n_samples": self.n_samples,
            "mape_excluded": self.mape_excluded,
            "per_label": {name: asdict(m) for name, m in self.per_label.items()},
            **self.extra,
        }


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray, label_names: Sequence[str]) -> Metrics:
    """Per-label MSE/MAE/MAPE, then unweighted means over labels.

    MAPE skips samples whose true value is below 1e-12 in magnitude; the
    number skipped is reported with the metric.
    """
    y_true = np.atleast_2d(np.asarray(y_true, dtype=np.float64))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=np.float64))
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"truth shape {y_true.shape} != prediction shape {y_pred.shape}")
    if y_true.shape[1] != len(label_names):
        raise ShapeError(f"{y_true.shape[1]} label columns for {len(label_names)} label names")
    if y_true.shape[0] == 0:
        raise ParameterError("cannot compute metrics on zero samples")

    per_label: Dict[str, LabelMetrics] = {}
    for j, name in enumerate(label_names):
        truth, pred = y_true[:, j], y_pred[:, j]
        residual = pred - truth
        keep = np.abs(truth) >= MAPE_FLOOR
        excluded = int((~keep).sum())
        if excluded:
            logger.warning(f"{excluded} samples excluded from MAPE of {name}: |y| < {MAPE_FLOOR}")
        pct = 100.0 * np.abs(residual[keep]) / np.abs(truth[keep])
        per_label[name] = LabelMetrics(
            label=name,
            mse=float(mean_squared_error(truth, pred)),
            mae=float(mean_absolute_error(truth, pred)),
            mape=float(pct.mean()) if pct.size else float("nan"),
            mse_ci=ci_half_width(residual ** 2),
            mae_ci=ci_half_width(np.abs(residual)),
            mape_ci=ci_half_width(pct),
            n=len(truth),
            mape_excluded=excluded,
        )

    mapes = [m.mape for m in per_label.values() if np.isfinite(m.mape)]
    return Metrics(
        per_label=per_label,
        mse=float(np.mean([m.mse for m in per_label.values()])),
        mae=float(np.mean([m.mae for m in per_label.values()])),
        mape=float(np.mean(mapes)) if mapes else float("nan"),
        n_samples=y_true.shape[0],
        mape_excluded=sum(m.mape_excluded for m in per_label.values()),
    )
