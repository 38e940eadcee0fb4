"""Scene-flow evaluation metrics (EPE3D, Acc3DS, Acc3DR, Outliers3D, EPE2D, Acc2D)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .camera import CameraIntrinsics, project_points
from .cloud import PointCloud
from .errors import ShapeError

__all__ = ["MetricsReport", "Thresholds", "evaluate_3d", "evaluate_2d", "evaluate"]

REL_EPS = 1e-12


@dataclass(frozen=True)
class Thresholds:
    """Absolute / relative cut-offs of the standard metric suite.

    A point is accurate when *either* its absolute or its relative error is
    under the cut-off; it is an outlier when either exceeds the outlier
    cut-offs.
    """

    strict_abs: float = 0.05
    strict_rel: float = 0.05
    relaxed_abs: float = 0.1
    relaxed_rel: float = 0.1
    outlier_abs: float = 0.3
    outlier_rel: float = 0.1
    px_abs: float = 3.0
    px_rel: float = 0.05


DEFAULT_THRESHOLDS = Thresholds()


@dataclass
class MetricsReport:
    epe3d: float
    acc3ds: float
    acc3dr: float
    outliers3d: float
    n_points: int
    epe2d: Optional[float] = None
    acc2d: Optional[float] = None

    def as_dict(self) -> dict:
        """JSON-ready dict; 2-D fields are omitted when not computed."""
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}

    def table(self) -> str:
        rows = [
            ("EPE3D (m)", self.epe3d),
            ("Acc3DS", self.acc3ds),
            ("Acc3DR", self.acc3dr),
            ("Outliers3D", self.outliers3d),
        ]
        if self.epe2d is not None:
            rows += [("EPE2D (px)", self.epe2d), ("Acc2D", self.acc2d)]
        lines = [f"{name:<12}{value:>12.4f}" for name, value in rows]
        lines.append(f"{'points':<12}{self.n_points:>12d}")
        return "\n".join(lines)


def _flows(pred, gt):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise ShapeError(f"predicted flow has {len(pred)} vectors, ground truth {len(gt)}")
    if len(gt) == 0:
        raise ShapeError("cannot evaluate an empty flow field")
    return pred, gt


def evaluate_3d(pred, gt, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> MetricsReport:
    pred, gt = _flows(pred, gt)
    err = np.linalg.norm(pred - gt, axis=1)
    rel = err / np.maximum(np.linalg.norm(gt, axis=1), REL_EPS)
    t = thresholds
    return MetricsReport(
        epe3d=float(err.mean()),
        acc3ds=float(((err < t.strict_abs) | (rel < t.strict_rel)).mean()),
        acc3dr=float(((err < t.relaxed_abs) | (rel < t.relaxed_rel)).mean()),
        outliers3d=float(((err > t.outlier_abs) | (rel > t.outlier_rel)).mean()),
        n_points=len(gt),
    )


def evaluate_2d(pred, gt, source, intr: CameraIntrinsics, thresholds: Thresholds = DEFAULT_THRESHOLDS):
    """Image-plane end-point error of the projected flow.

    Returns ``(epe2d, acc2d)``; ``acc2d`` counts points under 3 px or 5 %
    relative to the projected ground-truth flow.
    """
    pred, gt = _flows(pred, gt)
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(gt):
        raise ShapeError(f"source has {len(src)} points, flow has {len(gt)}")
    p0 = project_points(src, intr)[:, :2]
    p_pred = project_points(src + pred, intr)[:, :2]
    p_gt = project_points(src + gt, intr)[:, :2]
    err = np.linalg.norm(p_pred - p_gt, axis=1)
    rel = err / np.maximum(np.linalg.norm(p_gt - p0, axis=1), REL_EPS)
    acc = (err < thresholds.px_abs) | (rel < thresholds.px_rel)
    return float(err.mean()), float(acc.mean())


def evaluate(pred, gt, source=None, intr: CameraIntrinsics | None = None,
             thresholds: Thresholds = DEFAULT_THRESHOLDS) -> MetricsReport:
    """3-D metrics, plus 2-D metrics when both ``source`` and ``intr`` are given."""
    report = evaluate_3d(pred, gt, thresholds)
    if source is not None and intr is not None:
        report.epe2d, report.acc2d = evaluate_2d(pred, gt, source, intr, thresholds)
    return report
