"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package's numeric code paths, so agreement with
the fast implementations is meaningful.
"""
from __future__ import annotations

import math

import numpy as np

SOBEL_X = ((-1, 0, 1), (-2, 0, 2), (-1, 0, 1))


def sobel_at(img: np.ndarray, i: int, j: int) -> tuple[float, float]:
    """Sobel (gx, gy) at pixel (i, j) with edge-replicated borders."""
    h, w = img.shape
    gx = gy = 0.0
    for di in range(3):
        for dj in range(3):
            v = float(img[min(max(i + di - 1, 0), h - 1), min(max(j + dj - 1, 0), w - 1)])
            gx += SOBEL_X[di][dj] * v
            gy += SOBEL_X[dj][di] * v
    return gx, gy


def grad_consistency_oracle(image: np.ndarray, mask: np.ndarray, eps: float = 1e-6) -> float:
    """Scalar transcription of the normalized-gradient consistency loss for one (h, w) pair."""
    h, w = image.shape
    num = den = 0.0
    for i in range(h):
        for j in range(w):
            ix, iy = sobel_at(image, i, j)
            mx, my = sobel_at(mask, i, j)
            imag = math.sqrt(ix * ix + iy * iy)
            mmag = math.sqrt(mx * mx + my * my)
            ix, iy = ix / (imag + eps), iy / (imag + eps)
            nx, ny = mx / (mmag + eps), my / (mmag + eps)
            dot = ix * nx + iy * ny
            num += mmag * (1.0 - dot * dot)
            den += mmag
    return 0.0 if den < 1e-8 else num / den


def bce_oracle(p: np.ndarray, t: np.ndarray, clamp: float = 1e-7) -> float:
    total = 0.0
    for pv, tv in zip(p.ravel(), t.ravel()):
        pv = min(max(float(pv), clamp), 1.0 - clamp)
        total -= tv * math.log(pv) + (1 - tv) * math.log(1 - pv)
    return total / p.size


def box_mean_oracle(x: np.ndarray, r: int) -> np.ndarray:
    h, w = x.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = x[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1].mean()
    return out


def guided_filter_oracle(guide: np.ndarray, src: np.ndarray, r: int, eps: float) -> np.ndarray:
    """Per-window least-squares fit ``q = a.I + b``, then average the models covering each pixel.

    ``guide`` is (h, w) or (3, h, w); each window's coefficients come from an
    explicit ridge-regularized solve on that window's pixels.
    """
    g = guide if guide.ndim == 3 else guide[None]
    c, h, w = g.shape
    a = np.zeros((c, h, w))
    b = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            win = (slice(max(i - r, 0), i + r + 1), slice(max(j - r, 0), j + r + 1))
            feats = g[(slice(None),) + win].reshape(c, -1)
            vals = src[win].reshape(-1)
            n = vals.size
            mu = feats.mean(axis=1)
            centered = feats - mu[:, None]
            cov = centered @ centered.T / n
            rhs = centered @ (vals - vals.mean()) / n
            coef = np.linalg.solve(cov + eps * np.eye(c), rhs)
            a[:, i, j] = coef
            b[i, j] = vals.mean() - coef @ mu
    q = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            win = (slice(max(i - r, 0), i + r + 1), slice(max(j - r, 0), j + r + 1))
            q[i, j] = sum(a[k][win].mean() * g[k, i, j] for k in range(c)) + b[win].mean()
    return q


def adadelta_oracle(grads: list[float], x0: float, rho: float = 0.95, eps: float = 1e-7, lr: float = 1.0) -> list[float]:
    """Scalar Adadelta trajectory for a fixed gradient sequence."""
    eg2 = edx2 = 0.0
    x = x0
    out = []
    for g in grads:
        eg2 = rho * eg2 + (1 - rho) * g * g
        dx = -math.sqrt(edx2 + eps) / math.sqrt(eg2 + eps) * g
        edx2 = rho * edx2 + (1 - rho) * dx * dx
        x += lr * dx
        out.append(x)
    return out


def naive_conv(x, w, stride=1, dilation=1, groups=1, pad=(0, 0, 0, 0)):
    """Direct loop over the convolution definition (cross-correlation)."""
    pt, pb, pl, pr = pad
    x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    og = o // groups
    oh = (h - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for oc in range(o):
            g = oc // og
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[oc, ic, u, v] * x[b, g * cg + ic, i * stride + u * dilation, j * stride + v * dilation]
                    out[b, oc, i, j] = acc
    return out


def zero_insert(w, d):
    o, c, kh, kw = w.shape
    big = np.zeros((o, c, d * (kh - 1) + 1, d * (kw - 1) + 1))
    big[:, :, ::d, ::d] = w
    return big
