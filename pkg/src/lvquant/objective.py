"""Task losses, group-lasso and phase-guided regularizers, and their assembly.

Arrays are laid out (S, F, k): S subjects, F frames, k outputs. Every
function accepts tensors (to be differentiated) or plain arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import Tensor, column_norms, hinge, roll

TASKS = ("area", "dim", "rwt", "phase")
PROB_EPS = 1e-7


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda1: float = 1e-4
    lambda2: float = 1e-2
    temporal_boundary: str = "cyclic"
    enabled_tasks: tuple = TASKS

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"lambda1/lambda2 must be >= 0, got {self.lambda1}, {self.lambda2}")
        if self.temporal_boundary not in ("cyclic", "skip_first"):
            raise ConfigError(f"temporal_boundary must be 'cyclic' or 'skip_first', got {self.temporal_boundary!r}")
        unknown = set(self.enabled_tasks) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}")

    @property
    def label(self) -> str:
        return f"{'intra' if self.lambda1 > 0 else 'N'}/{'inter' if self.lambda2 > 0 else 'N'}"


@dataclass
class ObjectiveBreakdown:
    loss_area: float
    loss_dim: float
    loss_rwt: float
    loss_phase: float
    r_intra: float
    r_inter_area: float
    r_inter_dim: float
    r_inter_rwt: float
    total: float

    CSV_HEADER = "epoch,loss_area,loss_dim,loss_rwt,loss_phase,r_intra,r_inter_area,r_inter_dim,r_inter_rwt,total"

    def csv_row(self, epoch: int) -> str:
        return ",".join([str(epoch)] + [repr(float(getattr(self, f.name))) for f in fields(self)])


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _as3d(x: Tensor) -> Tensor:
    if x.ndim == 2:
        return x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise DimensionError(f"expected (S, F, k) or (F, k), got shape {x.shape}")
    return x


def loss_regression(pred, target) -> Tensor:
    """Mean over all frames of 0.5 * ||pred - target||^2."""
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    per_frame = (diff * diff).sum(axis=-1) * 0.5
    return per_frame.mean()


def loss_phase(p_diastole, target) -> Tensor:
    """Mean cross-entropy; ``target`` is 0 for diastole and 1 for systole."""
    p = _t(p_diastole)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=p.dtype)
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} vs labels {y.shape}")
    p = p.clip(PROB_EPS, 1.0 - PROB_EPS)
    p_true = p * (1.0 - y) + (1.0 - p) * y
    return -(p_true.log().mean())


def reg_group_lasso(w_area, w_dim, w_rwt) -> Tensor:
    """Sum of column L2 norms of the three regression head weights (k x H each)."""
    total = None
    for w in (w_area, w_dim, w_rwt):
        term = column_norms(_t(w)).sum()
        total = term if total is None else total + term
    return total


def _differences(pred: Tensor, boundary: str):
    """z[f] = y[f] - y[f-1] along frames plus a mask of frames that carry a term."""
    if pred.shape[1] < 2:
        raise DimensionError(f"phase-guided penalties need at least 2 frames, got {pred.shape[1]}")
    z = pred - roll(pred, 1, axis=1)
    mask = np.ones(pred.shape[:2], dtype=pred.dtype)
    if boundary == "skip_first":
        mask[:, 0] = 0.0
    elif boundary != "cyclic":
        raise ConfigError(f"unknown temporal boundary {boundary!r}")
    return z, mask


def _phase_masks(phase, shape, dtype):
    y = np.asarray(phase.data if isinstance(phase, Tensor) else phase)
    if y.ndim == 1:
        y = y[None]
    if y.shape != shape:
        raise DimensionError(f"phase labels {y.shape} vs predictions {shape}")
    dia = (y == 0).astype(dtype)
    return dia, 1.0 - dia


def reg_phase_area(area_hat, phase, boundary: str = "cyclic") -> Tensor:
    """Hinge penalty on cavity/myocardium changes that contradict the phase.

    Diastole frames should see the cavity grow and the myocardium shrink;
    systole frames the opposite. Normalized by 2*S*F.
    """
    a = _as3d(_t(area_hat))
    if a.shape[2] != 2:
        raise DimensionError(f"area predictions need 2 columns, got {a.shape[2]}")
    z, mask = _differences(a, boundary)
    dia, sys_ = _phase_masks(phase, a.shape[:2], a.dtype)
    z_cav, z_myo = z[:, :, 0], z[:, :, 1]
    pen = (hinge(-z_cav) + hinge(z_myo)) * (dia * mask) + (hinge(z_cav) + hinge(-z_myo)) * (sys_ * mask)
    S, F = a.shape[:2]
    return pen.sum() * (1.0 / (2 * S * F))


def _mean_change_penalty(pred, phase, boundary, grow_in_diastole: bool) -> Tensor:
    x = _as3d(_t(pred))
    z, mask = _differences(x, boundary)
    zbar = z.mean(axis=2)
    dia, sys_ = _phase_masks(phase, x.shape[:2], x.dtype)
    if grow_in_diastole:
        pen = hinge(-zbar) * (dia * mask) + hinge(zbar) * (sys_ * mask)
    else:
        pen = hinge(zbar) * (dia * mask) + hinge(-zbar) * (sys_ * mask)
    S, F = x.shape[:2]
    return pen.sum() * (1.0 / (S * F))


def reg_phase_dim(dim_hat, phase, boundary: str = "cyclic") -> Tensor:
    """Penalize the mean dimension shrinking in diastole or growing in systole."""
    return _mean_change_penalty(dim_hat, phase, boundary, grow_in_diastole=True)


def reg_phase_rwt(rwt_hat, phase, boundary: str = "cyclic") -> Tensor:
    """Penalize the mean wall thickness growing in diastole or shrinking in systole."""
    return _mean_change_penalty(rwt_hat, phase, boundary, grow_in_diastole=False)


def objective_terms(preds, targets: dict, weights: dict, config: ObjectiveConfig) -> dict:
    """Every objective component as a tensor, plus ``total``.

    ``targets`` holds normalized ``area`` (S,F,2), ``dim`` (S,F,3), ``rwt``
    (S,F,6) and ``phase`` (S,F) labels; ``weights`` maps ``w_area``,
    ``w_dim``, ``w_rwt`` to the regression head weights.
    """
    enabled = set(config.enabled_tasks)
    zero = Tensor(np.zeros((), dtype=preds.area_hat.dtype))
    terms = {}
    for task in ("area", "dim", "rwt"):
        terms[f"loss_{task}"] = loss_regression(preds.regression(task), targets[task]) if task in enabled else zero
    terms["loss_phase"] = loss_phase(preds.p_diastole, targets["phase"]) if "phase" in enabled else zero

    if config.lambda2 > 0:
        missing = {"area", "dim", "rwt"} - enabled
        if missing:
            raise ConfigError(f"phase-guided penalties need the {sorted(missing)} task(s) enabled")
    if config.lambda1 > 0 or "w_area" in weights:
        terms["r_intra"] = reg_group_lasso(weights["w_area"], weights["w_dim"], weights["w_rwt"])
    else:
        terms["r_intra"] = zero
    if {"area", "dim", "rwt"} <= enabled:
        b = config.temporal_boundary
        terms["r_inter_area"] = reg_phase_area(preds.area_hat, targets["phase"], b)
        terms["r_inter_dim"] = reg_phase_dim(preds.dim_hat, targets["phase"], b)
        terms["r_inter_rwt"] = reg_phase_rwt(preds.rwt_hat, targets["phase"], b)
    else:
        terms["r_inter_area"] = terms["r_inter_dim"] = terms["r_inter_rwt"] = zero

    total = terms["loss_area"] + terms["loss_dim"] + terms["loss_rwt"] + terms["loss_phase"]
    if config.lambda1 > 0:
        total = total + terms["r_intra"] * config.lambda1
    if config.lambda2 > 0:
        total = total + (terms["r_inter_area"] + terms["r_inter_dim"] + terms["r_inter_rwt"]) * config.lambda2
    terms["total"] = total
    return terms


def breakdown(terms: dict) -> ObjectiveBreakdown:
    return ObjectiveBreakdown(**{k: float(np.asarray(v.data)) for k, v in terms.items()})


def total_objective(preds, targets: dict, params, config: ObjectiveConfig) -> ObjectiveBreakdown:
    """Evaluate the full objective and report each component.

    ``params`` is a :class:`~lvquant.model.ModelParams` or a bound parameter
    set; the group-lasso term reads its regression head weights.
    """
    tensors = params.tensors if hasattr(params, "tensors") else params.arrays
    weights = {f"w_{t}": tensors[f"heads.w_{t}"] for t in ("area", "dim", "rwt")}
    return breakdown(objective_terms(preds, targets, weights, config))
