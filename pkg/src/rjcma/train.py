"""Training harness: Adam with decoupled weight decay, warm-up plus
reduce-on-plateau scheduling, early stopping, best-state reload, and the
k-fold cross-validation driver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Normalizer, SequenceRecord, WindowSpec, make_folds, window
from .fusion import FusionConfig
from .metrics import EvalResult, evaluate
from .model import RjcmaModel

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass
class TrainConfig:
    lr_init: float = 1e-5
    lr_min: float = 1e-8
    weight_decay: float = 1e-3
    batch_size: int = 12
    max_epochs: int = 100
    warmup_epochs: int = 5
    plateau_patience: int = 5
    plateau_factor: float = 0.1
    early_stop_patience: int = 15
    target: str = "valence"
    iterations: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.lr_min > self.lr_init:
            raise ValueError("lr_min must not exceed lr_init")
        if not (0.0 < self.plateau_factor < 1.0):
            raise ValueError("plateau_factor must be in (0, 1)")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: OptimizerState,
              lr: float, weight_decay: float = 0.0) -> None:
    """Bias-corrected Adam update with decoupled weight decay (applied to the
    weights directly, not folded into the gradient)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        if weight_decay:
            p.data = p.data * (1.0 - lr * weight_decay)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# scheduler


class Scheduler:
    """Per-batch linear warm-up for the first epochs, then reduce-on-plateau
    keyed on validation CCC, flooring at lr_min."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.lr_init
        self.best = -math.inf
        self.since_improvement = 0

    def batch_lr(self, epoch: int, batch_idx: int, n_batches: int) -> float:
        if epoch < self.cfg.warmup_epochs:
            frac = (batch_idx + 1) / max(1, n_batches)
            return self.cfg.lr_min + (self.lr - self.cfg.lr_min) * frac
        return self.lr

    def epoch_end(self, epoch: int, val_ccc: float) -> float:
        if val_ccc > self.best:
            self.best = val_ccc
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        if (epoch >= self.cfg.warmup_epochs
                and self.since_improvement >= self.cfg.plateau_patience):
            self.lr = max(self.lr * self.cfg.plateau_factor, self.cfg.lr_min)
            self.since_improvement = 0
        return self.lr


def scheduler_step(state: Scheduler, epoch: int, val_ccc: float) -> float:
    return state.epoch_end(epoch, val_ccc)


# ---------------------------------------------------------------------------
# fit


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_ccc: float
    lr: float


@dataclass
class FitResult:
    model: RjcmaModel
    history: list[EpochStats]
    best_val_ccc: float

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_ccc,lr"]
        for h in self.history:
            lines.append(f"{h.epoch},{h.train_loss:.10g},{h.val_ccc:.10g},{h.lr:.10g}")
        return "\n".join(lines) + "\n"


def _trainable(windows, target):
    return [w for w in windows if w.label_mask(target).sum() >= 2]


def fit(model: RjcmaModel, train_windows, val_windows, cfg: TrainConfig) -> FitResult:
    """Seeded epoch loop: shuffle, batch, per-window CCC loss averaged over the
    batch, Adam step, validation CCC, best-state snapshot and end-of-epoch
    reload, early stopping."""
    target = model.target
    train_windows = _trainable(train_windows, target)
    val_windows = _trainable(val_windows, target)
    if not train_windows or not val_windows:
        raise ValueError("train and validation partitions must be non-empty")

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = OptimizerState()
    sched = Scheduler(cfg)
    history: list[EpochStats] = []
    best_state = model.state_arrays()
    best_ccc = -math.inf
    stale = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_windows))
        n_batches = max(1, math.ceil(len(order) / cfg.batch_size))
        epoch_losses = []
        for bi in range(n_batches):
            batch = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            losses = [model.loss_on_window(train_windows[i]) for i in batch]
            total = losses[0]
            for extra in losses[1:]:
                total = ad.add(total, extra)
            loss = ad.scale(total, 1.0 / len(losses))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {bi} "
                    f"(lr={sched.batch_lr(epoch, bi, n_batches):.3g})")
            ad.zero_grads(params.values())
            ad.backward(loss, leaves=params.values())
            adam_step(params, opt, sched.batch_lr(epoch, bi, n_batches),
                      cfg.weight_decay)
            epoch_losses.append(value)

        val_ccc = _eval_target(model, val_windows)
        if val_ccc > best_ccc:
            best_ccc = val_ccc
            best_state = model.state_arrays()
            stale = 0
        else:
            stale += 1
        # paper's rule: reload the best state at the end of every epoch
        model.load_state_arrays(best_state)
        lr = sched.epoch_end(epoch, val_ccc)
        history.append(EpochStats(epoch, float(np.mean(epoch_losses)), val_ccc, lr))
        logger.debug("epoch %d: loss %.4f val_ccc %.4f lr %.2e",
                     epoch, history[-1].train_loss, val_ccc, lr)
        if stale >= cfg.early_stop_patience:
            break

    model.load_state_arrays(best_state)
    return FitResult(model=model, history=history, best_val_ccc=best_ccc)


def _eval_target(model: RjcmaModel, windows) -> float:
    res = evaluate(lambda w, t: model.predict(w, t), windows,
                   targets=(model.target,))
    return res.ccc_valence if model.target == "valence" else res.ccc_arousal


def evaluate_model(models: dict[str, RjcmaModel], windows) -> EvalResult:
    """Joint report over whichever per-target models are supplied."""
    result = EvalResult()
    for target, model in models.items():
        sub = evaluate(lambda w, t: model.predict(w, t),
                       _trainable(windows, target), targets=(target,))
        if target == "valence":
            result.ccc_valence = sub.ccc_valence
        else:
            result.ccc_arousal = sub.ccc_arousal
        result.n_frames = max(result.n_frames, sub.n_frames)
        result.per_sequence.extend(sub.per_sequence)
    return result


# ---------------------------------------------------------------------------
# cross-validation


def train_fold(records: list[SequenceRecord], val_ids: set[str],
               fusion_cfg: FusionConfig, window_spec: WindowSpec,
               cfg: TrainConfig, targets=("valence", "arousal")):
    """Train per-target models on one train/val split; returns (models, result)."""
    train_recs = [r for r in records if r.id not in val_ids]
    val_recs = [r for r in records if r.id in val_ids]
    normalizer = Normalizer().fit(train_recs)
    train_windows = [w for r in train_recs for w in window(r, window_spec)]
    val_windows = [w for r in val_recs for w in window(r, window_spec)]

    models = {}
    fits = {}
    for target in targets:
        model = RjcmaModel(fusion_cfg, target=target, seed=cfg.seed,
                           normalizer=normalizer)
        fits[target] = fit(model, train_windows, val_windows,
                           replace(cfg, target=target))
        models[target] = fits[target].model
    result = evaluate_model(models, val_windows)
    return models, result, fits


def cross_validate(records: list[SequenceRecord], n_folds: int,
                   fusion_cfg: FusionConfig, window_spec: WindowSpec,
                   cfg: TrainConfig, targets=("valence", "arousal")) -> list[dict]:
    """One row per fold, shaped {fold, valence, arousal, mean}."""
    assignment = make_folds([r.id for r in records], n_folds, cfg.seed)
    rows = []
    for fold in range(n_folds):
        val_ids = {sid for sid, f in assignment.items() if f == fold}
        _, result, _ = train_fold(records, val_ids, fusion_cfg, window_spec,
                                  cfg, targets)
        rows.append({
            "fold": fold,
            "valence": result.ccc_valence,
            "arousal": result.ccc_arousal,
            "mean": result.mean,
        })
    return rows
