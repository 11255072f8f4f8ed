"""Masked reconstruction loss and the seven standard depth metrics.

Every quantity is computed over the ground truth's valid pixel set P
and nowhere else; invalid pixels can hold garbage without changing a
single bit of output. Inverse metrics (iMAE, iRMSE) and the log RMSE
need strictly positive predictions on P, and refuse to silently produce
infinities when that fails.

Inverse metrics are reported in reciprocal depth units as-is; the 1/km
convention some benchmarks print is a pure display-time scaling.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, EvaluationError


@dataclass
class MetricsReport:
    rel: float
    mae: float
    imae: float
    rmse: float
    irmse: float
    rmselog: float
    delta1: float
    delta2: float
    delta3: float

    def values(self):
        return [getattr(self, f.name) for f in fields(self)]

    @staticmethod
    def field_names():
        return [f.name for f in fields(MetricsReport)]


def _valid_pair(pred, gt):
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} != ground truth {gt.shape}")
    if not gt.valid.any():
        raise EvaluationError("ground truth has no valid pixels")
    if not pred.valid[gt.valid].all():
        raise EvaluationError("prediction is invalid at ground-truth valid pixels")
    return pred.depth[gt.valid], gt.depth[gt.valid]


def loss_recons(pred, gt):
    """Mean squared error over the ground truth's valid pixels."""
    x, y = _valid_pair(pred, gt)
    return float(np.mean((x - y) ** 2))


def loss_recons_grad(pred, gt):
    """Analytic d(loss)/d(pred): 2(X - Y)/|P| on P, zero elsewhere."""
    x, y = _valid_pair(pred, gt)
    grad = np.zeros(pred.shape)
    grad[gt.valid] = 2.0 * (x - y) / x.size
    return grad


def masked_mse(pred, target, valid):
    """Tape-differentiable form of the loss for training.

    pred is a (B, 1, H, W) tensor; target and valid are arrays of the
    same shape (valid boolean). Invalid pixels contribute nothing to the
    value or the gradient.
    """
    target = np.asarray(target, dtype=np.float64)
    vmask = np.asarray(valid, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != vmask.shape:
        raise DimensionError(
            f"loss shapes disagree: {pred.shape}, {target.shape}, {vmask.shape}"
        )
    count = vmask.sum()
    if count == 0:
        raise EvaluationError("loss target has no valid pixels")
    diff = ad.mul(ad.sub(pred, Tensor(target)), Tensor(vmask))
    return ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / count)


def compute_metrics(pred, gt):
    """All seven metrics over the valid set; deltas as percentages."""
    x, y = _valid_pair(pred, gt)
    if (x <= 0).any() or not np.isfinite(x).all():
        raise EvaluationError(
            "inverse and log metrics need strictly positive finite predictions "
            "at every valid pixel"
        )
    err = x - y
    ratio = np.maximum(y / x, x / y)
    deltas = [100.0 * float(np.mean(ratio < 1.25**i)) for i in (1, 2, 3)]
    return MetricsReport(
        rel=float(np.mean(np.abs(err) / y)),
        mae=float(np.mean(np.abs(err))),
        imae=float(np.mean(np.abs(1.0 / y - 1.0 / x))),
        rmse=float(np.sqrt(np.mean(err**2))),
        irmse=float(np.sqrt(np.mean((1.0 / y - 1.0 / x) ** 2))),
        rmselog=float(np.sqrt(np.mean((np.log(y) - np.log(x)) ** 2))),
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
    )


def aggregate_metrics(reports):
    """Unweighted mean of per-scene reports."""
    if not reports:
        raise EvaluationError("nothing to aggregate")
    cols = np.array([r.values() for r in reports])
    return MetricsReport(*[float(v) for v in cols.mean(axis=0)])
