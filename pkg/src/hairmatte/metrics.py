"""Per-image segmentation metrics averaged over a test set."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .guided_filter import GuidedFilterParams, refine_mask
from .losses import gradient_consistency_score, to_grayscale
from .tensor import DimensionError

COLUMNS = ("f1", "performance", "iou", "accuracy", "grad_consistency")
HEADERS = ("F1", "Perf.", "IoU", "Acc.", "Grad-cons.")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred_prob, gt_mask, threshold: float = 0.5) -> ConfusionCounts:
    """Pixel counts with ``pred >= threshold`` counted positive."""
    pred = np.asarray(pred_prob)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise DimensionError("confusion", "shape", gt.shape, pred.shape)
    p = pred >= threshold
    g = gt >= 0.5
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, int(p.size) - tp - fp - fn)


def f1(c: ConfusionCounts) -> float:
    den = 2 * c.tp + c.fp + c.fn
    return 1.0 if den == 0 else 2 * c.tp / den


def iou(c: ConfusionCounts) -> float:
    den = c.tp + c.fp + c.fn
    return 1.0 if den == 0 else c.tp / den


def accuracy(c: ConfusionCounts) -> float:
    return 1.0 if c.total == 0 else (c.tp + c.tn) / c.total


def performance(c: ConfusionCounts) -> float | None:
    """The "Performance" score of Guo & Aarabi's hair benchmark.

    Its formula is not available to this package, so the slot is reported as
    unavailable (``None``, printed as ``NA``) rather than approximated.
    """
    return None


def grad_consistency_metric(image, pred_prob) -> float:
    """Mask-image gradient consistency of one prediction; same code path as the training loss."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[None]
    prob = np.asarray(pred_prob)
    while prob.ndim < 4:
        prob = prob[None]
    return gradient_consistency_score(to_grayscale(img).astype(prob.dtype), prob)


@dataclass
class ImageMetrics:
    f1: float
    performance: float | None
    iou: float
    accuracy: float
    grad_consistency: float


def score_image(image, pred_prob, gt_mask) -> ImageMetrics:
    prob = np.asarray(pred_prob)
    prob2d = prob.reshape(prob.shape[-2:])
    gt2d = np.asarray(gt_mask).reshape(prob2d.shape)
    c = confusion(prob2d, gt2d)
    return ImageMetrics(f1(c), performance(c), iou(c), accuracy(c), grad_consistency_metric(image, prob2d))


def _mean(values):
    vals = [v for v in values if v is not None]
    if not vals or len(vals) != len(values):
        return None
    return float(np.mean(vals))


@dataclass
class MetricsReport:
    per_image: list[ImageMetrics]
    ids: list[str] = field(default_factory=list)
    label: str = ""

    def mean(self, name: str) -> float | None:
        return _mean([getattr(m, name) for m in self.per_image])

    @property
    def f1(self):
        return self.mean("f1")

    @property
    def performance(self):
        return self.mean("performance")

    @property
    def iou(self):
        return self.mean("iou")

    @property
    def accuracy(self):
        return self.mean("accuracy")

    @property
    def grad_consistency(self):
        return self.mean("grad_consistency")

    def summary(self) -> dict[str, float | None]:
        return {k: self.mean(k) for k in COLUMNS}

    def to_csv(self) -> str:
        """One row per image plus a final ``mean`` row; columns in F1, Perf., IoU, Acc., Grad-cons. order."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(("id",) + COLUMNS)
        ids = self.ids or [str(i) for i in range(len(self.per_image))]
        for ident, m in zip(ids, self.per_image):
            wr.writerow([ident] + [_fmt(getattr(m, k)) for k in COLUMNS])
        wr.writerow(["mean"] + [_fmt(self.mean(k)) for k in COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    return "NA" if v is None else repr(float(v))


def format_table(reports: list[MetricsReport]) -> str:
    """Human-readable rows, one per report."""
    width = max([len("Model")] + [len(r.label) for r in reports])
    lines = [f"{'Model':<{width}}  " + "  ".join(f"{h:>10}" for h in HEADERS)]
    for r in reports:
        vals = ["NA" if v is None else f"{v:.4f}" for v in (r.mean(k) for k in COLUMNS)]
        lines.append(f"{r.label:<{width}}  " + "  ".join(f"{v:>10}" for v in vals))
    return "\n".join(lines)


def evaluate_predictions(images, probs, masks, ids=None, refine: GuidedFilterParams | None = None, label: str = "") -> MetricsReport:
    """Score precomputed hair probabilities ``(n, h, w)`` against binary masks."""
    rows = []
    for img, prob, gt in zip(images, probs, masks):
        if refine is not None:
            prob = refine_mask(img, prob, refine)
        rows.append(score_image(img, prob, gt))
    return MetricsReport(rows, list(ids) if ids is not None else [], label)


def evaluate_dataset(model, dataset, with_refine: GuidedFilterParams | None = None, hair_class_index: int = 1, batch_size: int = 8, label: str = "") -> MetricsReport:
    """Run ``model`` over ``dataset`` in inference mode and average per-image metrics.

    With ``with_refine`` the hair probability is guided-filtered before scoring.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    images, masks = dataset.arrays()
    probs = []
    for start in range(0, len(images), batch_size):
        out = model.predict(images[start:start + batch_size].astype(model.dtype))
        probs.append(out[:, hair_class_index])
    probs = np.concatenate(probs)
    hair_gt = (np.rint(masks[:, 0]) == hair_class_index).astype(np.float32)
    return evaluate_predictions(images, probs, hair_gt, dataset.ids, with_refine, label)


def reports_to_csv(reports: list[MetricsReport]) -> str:
    """Several reports in one table, with a leading ``model`` column holding each label."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("model", "id") + COLUMNS)
    for rep in reports:
        rows = list(csv.reader(io.StringIO(rep.to_csv())))[1:]
        for row in rows:
            wr.writerow([rep.label] + row)
    return buf.getvalue()
