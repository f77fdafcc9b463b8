"""Concordance correlation coefficient, its loss form, and evaluation reports.

CCC here is Lin's coefficient with population (divide-by-N) statistics:

    rho_c = 2*cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2 + eps)

with eps = 1e-12 keeping the loss differentiable when the denominator
degenerates. Identical constant series are defined as perfect agreement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS = 1e-12


class InsufficientDataError(ValueError):
    """Fewer than 2 valid elements where a correlation statistic is needed."""


def _validate(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.shape != pred.shape:
            raise ValueError(f"mask length mismatch: {mask.shape} vs {pred.shape}")
    if mask.sum() < 2:
        raise InsufficientDataError(
            f"need >= 2 valid elements, got {int(mask.sum())}")
    return pred[mask], gt[mask]


def ccc(pred, gt, mask=None) -> float:
    """Concordance correlation between two series over unmasked elements."""
    x, y = _validate(pred, gt, mask)
    if np.array_equal(x, y):
        return 1.0
    mx, my = x.mean(), y.mean()
    vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    return 2.0 * cov / (vx + vy + (mx - my) ** 2 + EPS)


def ccc_loss(pred: Tensor, gt, mask=None) -> Tensor:
    """Differentiable 1 - rho_c over unmasked frames of a (1 x K) prediction."""
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.data.shape[0] != 1 or pred.cols != gt.size:
        raise ad.DimensionError(
            f"prediction shape {pred.shape} vs {gt.size} labels")
    if mask is None:
        mask = np.ones(gt.size, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).ravel()
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        raise InsufficientDataError(
            f"need >= 2 valid frames for CCC loss, got {idx.size}")

    x = ad.select_cols(pred, idx)
    y = Tensor(gt[idx].reshape(1, -1))
    cov = ad.covariance(x, y)
    dmean = ad.sub(ad.mean(x), ad.mean(y))
    denom = ad.shift(
        ad.add(ad.add(ad.variance(x), ad.variance(y)), ad.mul(dmean, dmean)), EPS)
    rho = ad.div(ad.scale(cov, 2.0), denom)
    return ad.shift(ad.scale(rho, -1.0), 1.0)


@dataclass
class EvalResult:
    ccc_valence: float | None = None
    ccc_arousal: float | None = None
    per_sequence: list = field(default_factory=list)  # (seq id, target, ccc)
    n_frames: int = 0

    @property
    def mean(self) -> float | None:
        vals = [v for v in (self.ccc_valence, self.ccc_arousal) if v is not None]
        return sum(vals) / len(vals) if vals else None

    def to_dict(self) -> dict:
        return {
            "ccc_valence": self.ccc_valence,
            "ccc_arousal": self.ccc_arousal,
            "mean": self.mean,
            "n_frames": self.n_frames,
            "per_sequence": [
                {"id": sid, "target": target, "ccc": value}
                for sid, target, value in self.per_sequence
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def report_lines(self) -> list[str]:
        out = []
        if self.ccc_valence is not None:
            out.append(f"CCC valence: {self.ccc_valence:.6f}")
        if self.ccc_arousal is not None:
            out.append(f"CCC arousal: {self.ccc_arousal:.6f}")
        if self.mean is not None:
            out.append(f"mean:        {self.mean:.6f}")
        out.append(f"frames:      {self.n_frames}")
        for sid, target, value in self.per_sequence:
            out.append(f"  {sid} [{target}]: {value:.6f}")
        return out


def evaluate(predict_fn, windows, targets=("valence", "arousal")) -> EvalResult:
    """Global concatenated-frame CCC plus per-sequence diagnostics.

    `predict_fn(window, target)` must return a length-K array of per-frame
    predictions; frames are pooled across all windows of the partition.
    """
    if not windows:
        raise InsufficientDataError("empty partition")
    result = EvalResult()
    for target in targets:
        all_pred, all_gt = [], []
        by_seq: dict[str, tuple[list, list]] = {}
        for w in windows:
            mask = w.label_mask(target)
            if not mask.any():
                continue
            pred = np.asarray(predict_fn(w, target)).ravel()[mask]
            gt = w.labels(target)[mask]
            all_pred.append(pred)
            all_gt.append(gt)
            bucket = by_seq.setdefault(w.sequence_id, ([], []))
            bucket[0].append(pred)
            bucket[1].append(gt)
        if not all_pred:
            raise InsufficientDataError(f"no valid frames for target {target}")
        pred = np.concatenate(all_pred)
        gt = np.concatenate(all_gt)
        value = ccc(pred, gt)
        if target == "valence":
            result.ccc_valence = value
        else:
            result.ccc_arousal = value
        result.n_frames = max(result.n_frames, pred.size)
        for sid in sorted(by_seq):
            ps, gs = by_seq[sid]
            ps, gs = np.concatenate(ps), np.concatenate(gs)
            if ps.size >= 2:
                result.per_sequence.append((sid, target, ccc(ps, gs)))
    return result
