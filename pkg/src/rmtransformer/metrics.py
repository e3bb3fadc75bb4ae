"""RMSE, channel prediction error and coverage prediction error."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricsReport:
    rmse: float
    ch_pred_err: float
    cov_pred_err: float
    n_samples: int
    n_roi_pixels: int
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


def _stack(maps) -> np.ndarray:
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (N, H, W) maps, got shape {arr.shape}")
    return arr


def _pair(preds, truths):
    p, t = _stack(preds), _stack(truths)
    if p.shape != t.shape:
        raise ValueError(f"prediction/truth shape mismatch {p.shape} vs {t.shape}")
    if p.shape[0] == 0:
        raise ValueError("empty sample set")
    return p, t


def metric_rmse(preds, truths, per_sample: bool = False) -> float:
    """Root mean squared error over every pixel of every sample.

    ``per_sample`` averages the per-map RMSE instead of pooling pixels.
    """
    p, t = _pair(preds, truths)
    sq = (p - t) ** 2
    if per_sample:
        return float(np.sqrt(sq.reshape(len(sq), -1).mean(axis=1)).mean())
    return float(np.sqrt(sq.mean()))


def metric_channel_error(preds, truths, rois) -> float:
    """RMSE restricted to RoI pixels, pooled across samples."""
    p, t = _pair(preds, truths)
    roi = _stack(rois).astype(bool)
    n = int(roi.sum())
    if n == 0:
        raise ValueError("no RoI pixels: channel error is undefined")
    return float(np.sqrt(((p - t) ** 2)[roi].sum() / n))


def coverage_disagreement(preds, truths, thres: float) -> np.ndarray:
    """Indicator map: 1 where prediction and truth fall on different sides of ``thres``."""
    return (np.asarray(preds) >= thres) != (np.asarray(truths) >= thres)


def metric_coverage_error(preds, truths, rois, thres: float = 0.8) -> float:
    """Fraction of RoI pixels whose covered/uncovered status is mispredicted (covered = >= thres)."""
    p, t = _pair(preds, truths)
    roi = _stack(rois).astype(bool)
    n = int(roi.sum())
    if n == 0:
        raise ValueError("no RoI pixels: coverage error is undefined")
    return float(coverage_disagreement(p, t, thres)[roi].sum() / n)


def compute_report(preds, truths, rois, thres: float = 0.8, per_sample: bool = False) -> MetricsReport:
    p, t = _pair(preds, truths)
    roi = _stack(rois).astype(bool)
    return MetricsReport(
        rmse=metric_rmse(p, t, per_sample=per_sample),
        ch_pred_err=metric_channel_error(p, t, roi),
        cov_pred_err=metric_coverage_error(p, t, roi, thres),
        n_samples=int(p.shape[0]),
        n_roi_pixels=int(roi.sum()),
        threshold=float(thres),
    )
