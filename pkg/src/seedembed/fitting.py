"""Network-free fitting: treat a FieldStack as free parameters and descend the loss.

Parameters are the offsets, log(sigma) and logit(seed) channels, so sigma
stays positive and seeds stay inside (0, 1) at every step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .centers import CenterKind
from .embedding import object_centers
from .errors import FitDivergedError, ScheduleExhaustedError
from .grid import FieldStack
from .losses import LossWeights, total_loss

logger = logging.getLogger(__name__)

# keeps logit(seed) finite for seeds that sit exactly on 0 or 1
SEED_CLIP = 1e-6


@dataclass(frozen=True)
class FitSchedule:
    """Polynomial learning-rate decay, ``base_lr * (1 - epoch / total_epochs) ** power``."""

    base_lr: float = 5e-4
    total_epochs: int = 200
    power: float = 0.9
    steps_per_epoch: int = 1

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")


def lr_at(schedule: FitSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch >= schedule.total_epochs:
        raise ScheduleExhaustedError(
            f"schedule exhausted: epoch {epoch} >= total_epochs {schedule.total_epochs}")
    return schedule.base_lr * (1.0 - epoch / schedule.total_epochs) ** schedule.power


@dataclass
class FitResult:
    final_fieldstack: FieldStack
    loss_trace: list[dict] = field(default_factory=list)
    epochs_run: int = 0


def _to_params(fs: FieldStack):
    s = np.clip(fs.seeds, SEED_CLIP, 1.0 - SEED_CLIP)
    return fs.offsets.copy(), np.log(fs.sigmas), np.log(s) - np.log1p(-s)


def _from_params(off, log_sig, logit_s) -> FieldStack:
    return FieldStack(off, np.exp(log_sig), 1.0 / (1.0 + np.exp(-logit_s)))


def direct_fit(labels: np.ndarray, init: FieldStack, weights: LossWeights = LossWeights(),
               kind: CenterKind | str = CenterKind.MEDOID, schedule: FitSchedule = FitSchedule(),
               seed_through_phi: bool = True, callback=None) -> FitResult:
    """Plain gradient descent on (offset, log sigma, logit seed).

    Object centers come from the ground truth and are computed once. Each
    epoch runs ``steps_per_epoch`` updates at that epoch's learning rate; the
    trace records the loss summary seen at the epoch's last step (before its
    update). By default the seed regression target moves with the offsets;
    with it held fixed the seed term can rise for a while as membership
    sharpens faster than the saturated seed logits follow.
    """
    labels = np.asarray(labels)
    centers = object_centers(labels, kind)
    off, log_sig, logit_s = _to_params(init)
    fs = _from_params(off, log_sig, logit_s)
    trace: list[dict] = []
    with np.errstate(over="ignore", invalid="ignore"):
        fs = _descend(labels, kind, weights, centers, schedule, seed_through_phi, callback,
                      off, log_sig, logit_s, fs, trace)
    return FitResult(fs, trace, len(trace))


def _descend(labels, kind, weights, centers, schedule, seed_through_phi, callback,
             off, log_sig, logit_s, fs, trace) -> FieldStack:
    # overflow is expected on divergence and surfaces as FitDivergedError
    for epoch in range(schedule.total_epochs):
        lr = lr_at(schedule, epoch)
        for _ in range(schedule.steps_per_epoch):
            rep = total_loss(fs, labels, kind, weights, centers=centers,
                             seed_through_phi=seed_through_phi)
            if not np.isfinite(rep.total):
                raise FitDivergedError(f"fit diverged at epoch {epoch}: loss={rep.total}", trace)
            g = rep.gradients
            off = off - lr * g.offsets
            log_sig = log_sig - lr * g.sigmas * fs.sigmas
            logit_s = logit_s - lr * g.seeds * fs.seeds * (1.0 - fs.seeds)
            if not (np.all(np.isfinite(off)) and np.all(np.isfinite(log_sig))
                    and np.all(np.isfinite(logit_s))):
                raise FitDivergedError(f"fit diverged at epoch {epoch}: non-finite parameters", trace)
            fs = _from_params(off, log_sig, logit_s)
        trace.append({"epoch": epoch, "lr": lr, **rep.summary()})
        if callback is not None:
            callback(epoch, trace[-1])
        logger.debug("epoch %d lr=%.3g loss=%.6f", epoch, lr, rep.total)
    return fs
