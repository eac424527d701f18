"""Training objectives: pixelwise BCE, mask-image gradient consistency, selective L2."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Model
from .ops import sobel_gradients
from .tensor import DimensionError, Tensor, clip, log, mean, no_grad, square, tsum, where

PROB_CLAMP = 1e-7
GRAD_EPS = 1e-6
EMPTY_EDGE_MASS = 1e-8
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class LossConfig:
    w: float = 0.5
    l2_weight: float = 2e-5
    hair_class_index: int = 1

    def __post_init__(self):
        if self.w < 0 or self.l2_weight < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    l_m: float
    l_c: float
    l2: float
    w: float
    total: float
    total_tensor: Tensor | None = None

    def as_dict(self) -> dict:
        return {"l_m": self.l_m, "l_c": self.l_c, "l2": self.l2, "w": self.w, "total": self.total}


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _as_nchw(x: Tensor) -> Tensor:
    if x.ndim == 2:
        return x.reshape(1, 1, *x.shape)
    if x.ndim == 3:
        return x.reshape(x.shape[0], 1, *x.shape[1:])
    return x


def to_grayscale(image) -> np.ndarray:
    """Luminosity grayscale of an ``(n, 3, h, w)`` array, returned as ``(n, 1, h, w)``."""
    img = np.asarray(image)
    if img.ndim == 4 and img.shape[1] == 1:
        return img
    if img.ndim != 4 or img.shape[1] != 3:
        raise DimensionError("to_grayscale", "channels", 3, img.shape)
    return np.einsum("nchw,c->nhw", img, LUMA.astype(img.dtype))[:, None]


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """Integer label map ``(n, 1, h, w)`` or ``(n, h, w)`` to ``(n, C, h, w)``."""
    lab = np.asarray(labels)
    if lab.ndim == 4:
        lab = lab[:, 0]
    lab = np.rint(lab).astype(np.int64)
    return (lab[:, None] == np.arange(num_classes)[None, :, None, None]).astype(dtype)


def bce_loss(pred_probs, target) -> Tensor:
    """Mean over pixels and classes of ``-[t log p + (1 - t) log(1 - p)]``.

    ``target`` may match ``pred_probs`` in shape, or be a single-channel label
    map that is expanded to one-hot when the prediction has several channels.
    """
    p = _t(pred_probs)
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    if t.shape != p.shape:
        if p.ndim == 4 and t.ndim in (3, 4) and t.shape[-2:] == p.shape[-2:] and (t.ndim == 3 or t.shape[1] == 1):
            t = one_hot(t, p.shape[1], p.dtype)
        else:
            raise DimensionError("bce_loss", "shape", p.shape, t.shape)
    t = Tensor(t.astype(p.dtype))
    pc = clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = t * log(pc) + (1.0 - t) * log(1.0 - pc)
    return -mean(ll)


def gradient_consistency_loss(image_gray, hair_prob, eps: float = GRAD_EPS) -> Tensor:
    """Mask-edge / image-edge alignment penalty in ``[0, 1]``.

    For normalized Sobel gradients of image and mask, every pixel contributes
    ``|grad M| * (1 - <dI, dM>^2)``; the sum is divided by the total mask
    gradient magnitude. Images without mask edges score 0. Batches are scored
    per image and averaged.
    """
    img = _as_nchw(_t(image_gray)).detach()
    m = _as_nchw(_t(hair_prob))
    if img.shape[1] != 1 or m.shape[1] != 1:
        raise DimensionError("gradient_consistency_loss", "channels", 1, (img.shape[1], m.shape[1]))
    if img.shape != m.shape:
        raise DimensionError("gradient_consistency_loss", "size", img.shape, m.shape)
    img = img.astype(m.dtype) if img.dtype != m.dtype else img
    gi = sobel_gradients(img, normalize=True, eps=eps)
    gm = sobel_gradients(m, normalize=True, eps=eps)
    dot = gi.gx * gm.gx + gi.gy * gm.gy
    num = tsum(gm.mag * (1.0 - square(dot)), axis=(1, 2, 3))
    den = tsum(gm.mag, axis=(1, 2, 3))
    valid = den.data >= EMPTY_EDGE_MASS
    per_image = where(valid, num / where(valid, den, 1.0), 0.0)
    return mean(per_image)


def l2_penalty(model: Model, l2_weight: float) -> Tensor:
    """``l2_weight * sum ||W||^2`` over dense, pointwise and adapter kernels only."""
    terms = [tsum(square(model.params[f"{ly.name}.kernel"])) for ly in model.conv_layers() if ly.regularized]
    if not terms or l2_weight == 0:
        return Tensor(np.zeros((), dtype=model.dtype))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * l2_weight


def combined_loss(model_output, target, image, cfg: LossConfig, model: Model | None = None) -> LossReport:
    """``L_M + w * L_C (+ L2)``; only the hair channel enters the consistency term."""
    probs = _t(model_output)
    n_classes = probs.shape[1]
    if not 0 <= cfg.hair_class_index < n_classes:
        raise DimensionError("combined_loss", "hair_class_index", f"< {n_classes}", cfg.hair_class_index)
    l_m = bce_loss(probs, target)
    gray = to_grayscale(np.asarray(image.data if isinstance(image, Tensor) else image))
    hair = probs[:, cfg.hair_class_index:cfg.hair_class_index + 1]
    l_c = gradient_consistency_loss(gray, hair)
    total = l_m + l_c * cfg.w if cfg.w else l_m
    if model is not None:
        l2 = l2_penalty(model, cfg.l2_weight)
        total = total + l2
        l2_val = l2.item()
    else:
        l2_val = 0.0
    return LossReport(l_m.item(), l_c.item(), l2_val, cfg.w, total.item(), total)


def gradient_consistency_score(image_gray, hair_prob) -> float:
    """Inference-only evaluation of :func:`gradient_consistency_loss`."""
    with no_grad():
        return gradient_consistency_loss(image_gray, hair_prob).item()
