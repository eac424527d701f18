"""Guided Filter (He et al.) with exact shrinking-window box means.

All window sums come from integral images, so the cost per pixel does not
depend on the radius.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LUMA


class GuidedFilterError(ValueError):
    pass


@dataclass
class GuidedFilterParams:
    radius: int = 4
    eps: float = 1e-3
    guide_mode: str = "gray"

    def __post_init__(self):
        if self.radius < 1:
            raise GuidedFilterError(f"radius must be >= 1, got {self.radius}")
        if not self.eps > 0:
            raise GuidedFilterError(f"eps must be > 0, got {self.eps}")
        if self.guide_mode not in ("gray", "rgb"):
            raise GuidedFilterError(f"guide_mode must be 'gray' or 'rgb', got {self.guide_mode!r}")


def _window_bounds(n: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n)
    return np.maximum(idx - r, 0), np.minimum(idx + r, n - 1) + 1


def box_filter(x, r: int) -> np.ndarray:
    """Mean over the ``(2r+1)^2`` window clipped to the image, for the last two axes."""
    if r < 1:
        raise GuidedFilterError(f"radius must be >= 1, got {r}")
    a = np.asarray(x, dtype=np.float64)
    h, w = a.shape[-2:]
    lo_h, hi_h = _window_bounds(h, r)
    lo_w, hi_w = _window_bounds(w, r)
    pad = [(0, 0)] * (a.ndim - 2) + [(1, 0), (0, 0)]
    cs = np.cumsum(np.pad(a, pad), axis=-2)
    rows = cs[..., hi_h, :] - cs[..., lo_h, :]
    pad[-2], pad[-1] = (0, 0), (1, 0)
    cs = np.cumsum(np.pad(rows, pad), axis=-1)
    sums = cs[..., hi_w] - cs[..., lo_w]
    counts = (hi_h - lo_h)[:, None] * (hi_w - lo_w)[None, :]
    return sums / counts


def _gray_guide(guide: np.ndarray) -> np.ndarray:
    g = np.asarray(guide, dtype=np.float64)
    if g.ndim == 3 and g.shape[0] == 3:
        return np.einsum("chw,c->hw", g, LUMA)
    if g.ndim == 3 and g.shape[0] == 1:
        return g[0]
    if g.ndim != 2:
        raise GuidedFilterError(f"gray guide must be (h, w), (1, h, w) or (3, h, w); got {g.shape}")
    return g


def guided_filter(guide, src, params: GuidedFilterParams) -> np.ndarray:
    """Edge-preserving smoothing of ``src`` (h, w) steered by ``guide``.

    ``guide`` is (h, w) for gray mode (an RGB guide is converted with luma
    weights) or (3, h, w) for rgb mode.
    """
    p = np.asarray(src, dtype=np.float64)
    if p.ndim == 3 and p.shape[0] == 1:
        p = p[0]
    if p.ndim != 2:
        raise GuidedFilterError(f"filter input must be single-channel (h, w); got {p.shape}")
    r, eps = params.radius, params.eps
    out_dtype = np.asarray(src).dtype if np.asarray(src).dtype.kind == "f" else np.float64

    if params.guide_mode == "gray":
        g = _gray_guide(guide)
        if g.shape != p.shape:
            raise GuidedFilterError(f"guide {g.shape} and input {p.shape} differ in size")
        mean_i = box_filter(g, r)
        mean_p = box_filter(p, r)
        var_i = box_filter(g * g, r) - mean_i * mean_i
        cov_ip = box_filter(g * p, r) - mean_i * mean_p
        a = cov_ip / (var_i + eps)
        b = mean_p - a * mean_i
        q = box_filter(a, r) * g + box_filter(b, r)
        return q.astype(out_dtype)

    g = np.asarray(guide, dtype=np.float64)
    if g.ndim != 3 or g.shape[0] != 3:
        raise GuidedFilterError(f"rgb guide must be (3, h, w); got {g.shape}")
    if g.shape[1:] != p.shape:
        raise GuidedFilterError(f"guide {g.shape[1:]} and input {p.shape} differ in size")
    mean_i = box_filter(g, r)  # (3, h, w)
    mean_p = box_filter(p, r)
    cov_ip = box_filter(g * p[None], r) - mean_i * mean_p[None]
    corr = box_filter(g[:, None] * g[None, :], r)  # (3, 3, h, w)
    sigma = corr - mean_i[:, None] * mean_i[None, :]
    sigma = np.moveaxis(sigma, (0, 1), (-2, -1)) + eps * np.eye(3)
    try:
        a = np.linalg.solve(sigma, np.moveaxis(cov_ip, 0, -1)[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise GuidedFilterError(f"singular guide covariance despite eps={eps}") from exc
    a = np.moveaxis(a, -1, 0)  # (3, h, w)
    b = mean_p - np.einsum("chw,chw->hw", a, mean_i)
    q = np.einsum("chw,chw->hw", box_filter(a, r), g) + box_filter(b, r)
    return q.astype(out_dtype)


def refine_mask(image, coarse_prob, params: GuidedFilterParams | None = None) -> np.ndarray:
    """Guided-filter a hair probability map with the image as guide, clamped to [0, 1].

    ``image`` is (3, h, w) in [0, 1]; ``coarse_prob`` is (h, w) or (1, h, w).
    """
    params = params or GuidedFilterParams()
    prob = np.asarray(coarse_prob)
    squeeze = prob.ndim == 3
    q = guided_filter(image, prob[0] if squeeze else prob, params)
    q = np.clip(q, 0.0, 1.0).astype(prob.dtype if prob.dtype.kind == "f" else np.float64)
    return q[None] if squeeze else q
