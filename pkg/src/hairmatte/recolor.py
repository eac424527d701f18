"""Hair recoloring by luminance-preserving chroma transfer.

For a pixel with luma ``Y`` and a target colour ``t`` with luma ``Y_t`` the
recoloured value is ``Y + k * (t - Y_t)``. The chroma offset ``t - Y_t`` has
zero luma, so any ``k`` keeps ``Y``; ``k`` is the largest value up to 1 that
keeps all three channels inside [0, 1]. The matte then blends the result
with the original: ``out = (1 - m) * img + m * shifted``.
"""
from __future__ import annotations

import numpy as np

from .losses import LUMA


class RecolorError(ValueError):
    pass


def luminance(image) -> np.ndarray:
    """Luma of a ``(3, h, w)`` image, ``(h, w)``."""
    return np.einsum("chw,c->hw", np.asarray(image, dtype=np.float64), LUMA)


def parse_color(text: str) -> np.ndarray:
    """``#rrggbb`` or ``r,g,b`` (floats in [0, 1]) to an RGB triple."""
    s = text.strip()
    if s.startswith("#") and len(s) == 7:
        try:
            return np.array([int(s[i:i + 2], 16) for i in (1, 3, 5)], dtype=np.float64) / 255.0
        except ValueError as exc:
            raise RecolorError(f"bad hex colour {text!r}") from exc
    parts = s.split(",")
    if len(parts) != 3:
        raise RecolorError(f"colour must be #rrggbb or r,g,b; got {text!r}")
    rgb = np.array([float(p) for p in parts])
    if np.any(rgb < 0) or np.any(rgb > 1):
        raise RecolorError(f"colour components must be in [0, 1]; got {text!r}")
    return rgb


def shift_chroma(image, target) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).reshape(3)
    y = luminance(img)
    chroma = t - float(LUMA @ t)  # zero-luma direction
    # largest k in [0, 1] with y + k * chroma inside [0, 1] for every channel
    k = np.ones_like(y)
    for c in chroma:
        if c > 0:
            k = np.minimum(k, (1.0 - y) / c)
        elif c < 0:
            k = np.minimum(k, y / -c)
    k = np.clip(k, 0.0, 1.0)
    return np.clip(y[None] + k[None] * chroma[:, None, None], 0.0, 1.0)


def recolor(image, matte, target) -> np.ndarray:
    """Composite ``image`` (3, h, w) toward ``target`` wherever ``matte`` (h, w) is on."""
    img = np.asarray(image)
    m = np.asarray(matte, dtype=np.float64)
    if m.ndim == 3 and m.shape[0] == 1:
        m = m[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise RecolorError(f"image must be (3, h, w); got {img.shape}")
    if m.shape != img.shape[1:]:
        raise RecolorError(f"matte {m.shape} and image {img.shape[1:]} differ in size")
    if m.min(initial=0.0) < 0 or m.max(initial=0.0) > 1:
        raise RecolorError("matte values must lie in [0, 1]")
    shifted = shift_chroma(img, target)
    out = (1.0 - m)[None] * img + m[None] * shifted
    out = np.clip(out, 0.0, 1.0).astype(img.dtype if img.dtype.kind == "f" else np.float64)
    # untouched pixels stay bit-exact
    return np.where(m[None] == 0, img, out)
