"""Mini-batch training with Adadelta and best-epoch selection on validation IoU."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .losses import LossConfig, combined_loss
from .metrics import evaluate_dataset
from .model import Model
from .optim import Adadelta
from .tensor import backward

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "l_m", "l_c", "l2", "total", "val_f1", "val_iou", "val_accuracy", "val_grad_consistency")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch, self.batch, self.value = epoch, batch, value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")


@dataclass
class EpochRecord:
    epoch: int
    l_m: float
    l_c: float
    l2: float
    total: float
    val_f1: float
    val_iou: float
    val_accuracy: float
    val_grad_consistency: float


@dataclass
class FitResult:
    model: Model
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)
    optimizer: Adadelta = field(default_factory=Adadelta)

    def meta(self) -> dict:
        return {"best_epoch": self.best_epoch, "history": [asdict(r) for r in self.history]}


def train_step(model: Model, opt: Adadelta, images: np.ndarray, masks: np.ndarray, cfg: LossConfig):
    """One forward/backward/update on a batch; returns the LossReport."""
    for p in model.params.values():
        p.grad = None
    probs = model.forward(images.astype(model.dtype), training=True)
    report = combined_loss(probs, masks, images, cfg, model)
    if not np.isfinite(report.total):
        return report
    backward(report.total_tensor)
    opt.step(model.params, {name: p.grad for name, p in model.params.items() if p.grad is not None})
    return report


def fit(
    model: Model,
    train_set: Dataset,
    val_set: Dataset,
    epochs: int = 50,
    batch_size: int = 4,
    cfg: LossConfig | None = None,
    seed: int = 0,
    optimizer: Adadelta | None = None,
) -> FitResult:
    """Train ``model`` in place and return a copy holding the best validation-IoU epoch.

    Ties keep the earliest epoch. Batches are drawn from a seeded permutation
    per epoch; the final partial batch is kept.
    """
    cfg = cfg or LossConfig()
    opt = optimizer or Adadelta()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("fit needs non-empty train and validation sets")
    if epochs == 0:
        return FitResult(model.copy(), 0, [], opt)

    rng = np.random.default_rng(seed)
    images, masks = train_set.arrays()
    history: list[EpochRecord] = []
    best = (-1.0, 0, model.copy(), Adadelta())
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(images))
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, len(order), batch_size)):
            idx = order[start:start + batch_size]
            rep = train_step(model, opt, images[idx], masks[idx], cfg)
            if not np.isfinite(rep.total):
                raise TrainingDiverged(epoch, b, rep.total)
            sums += (rep.l_m, rep.l_c, rep.l2, rep.total)
            n_batches += 1
        l_m, l_c, l2, total = sums / n_batches
        val = evaluate_dataset(model, val_set, hair_class_index=cfg.hair_class_index)
        rec = EpochRecord(epoch, l_m, l_c, l2, total, val.f1, val.iou, val.accuracy, val.grad_consistency)
        history.append(rec)
        log.info("epoch %d: loss %.4f (bce %.4f, gc %.4f) val IoU %.4f", epoch, total, l_m, l_c, val.iou)
        if val.iou > best[0]:
            snap = Adadelta(opt.lr, opt.rho, opt.eps)
            snap.load_state(opt.state_arrays())
            best = (val.iou, epoch, model.copy(), snap)
    return FitResult(best[2], best[1], history, best[3])


def history_to_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(HISTORY_FIELDS)
    for r in history:
        wr.writerow([r.epoch] + [repr(float(getattr(r, k))) for k in HISTORY_FIELDS[1:]])
    return buf.getvalue()


def history_from_csv(text: str) -> list[EpochRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [EpochRecord(int(r["epoch"]), *(float(r[k]) for k in HISTORY_FIELDS[1:])) for r in rows]
