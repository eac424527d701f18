"""Differentiable image/CNN primitives on NCHW tensors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor, hypot, make_node, relu  # noqa: F401  (relu re-exported)


@dataclass
class ConvParams:
    """Kernel plus the geometry of a (possibly grouped/dilated) 2-D convolution.

    ``kernel`` has shape ``(out_c, in_c // groups, kh, kw)``. ``padding`` is
    either ``"same"`` (output size ``ceil(h / stride)``, TF convention) or an
    explicit symmetric integer.
    """

    kernel: Tensor
    bias: Tensor | None = None
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    padding: str | int = "same"

    def __post_init__(self):
        out_c = self.kernel.shape[0]
        if self.stride < 1 or self.dilation < 1 or self.groups < 1:
            raise ValueError("stride, dilation and groups must be positive")
        if out_c % self.groups:
            raise DimensionError("conv2d", "out_channels % groups", 0, out_c % self.groups)
        if self.bias is not None and self.bias.shape != (out_c,):
            raise DimensionError("conv2d", "bias", (out_c,), self.bias.shape)

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels and self.kernel.shape[1] == 1


def conv_output_size(size: int, k: int, stride: int, dilation: int, padding) -> tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` along one spatial axis."""
    keff = dilation * (k - 1) + 1
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + keff - size, 0)
        return out, total // 2, total - total // 2
    p = int(padding)
    out = (size + 2 * p - keff) // stride + 1
    return out, p, p


def conv_macs(in_c: int, out_c: int, k: int, groups: int, out_h: int, out_w: int) -> int:
    """Multiply-accumulates of one convolution (bias and activations excluded)."""
    return out_h * out_w * out_c * (in_c // groups) * k * k


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    if x.ndim != 4:
        raise DimensionError("conv2d", "rank", 4, x.ndim)
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise DimensionError("conv2d", "channels", p.in_channels, c)
    out_c, cg, kh, kw = p.kernel.shape
    s, d, groups = p.stride, p.dilation, p.groups
    oh, pt, pb = conv_output_size(h, kh, s, d, p.padding)
    ow, pl, pr = conv_output_size(w, kw, s, d, p.padding)
    if oh < 1:
        raise DimensionError("conv2d", "height", f">= {d * (kh - 1) + 1} after padding", h + pt + pb)
    if ow < 1:
        raise DimensionError("conv2d", "width", f">= {d * (kw - 1) + 1} after padding", w + pl + pr)

    xd = x.data
    if pt or pb or pl or pr:
        xp = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=xd.dtype)
        xp[:, :, pt:pt + h, pl:pl + w] = xd
    else:
        xp = xd
    wd = p.kernel.data
    og = out_c // groups
    npix = oh * ow
    depthwise = cg == 1 and og == 1
    hspan, wspan = s * (oh - 1) + 1, s * (ow - 1) + 1

    def taps():
        for i in range(kh):
            for j in range(kw):
                yield i, j, (slice(None), slice(None), slice(i * d, i * d + hspan, s), slice(j * d, j * d + wspan, s))

    out = np.zeros((n, out_c, oh, ow), dtype=xd.dtype)
    for i, j, sl in taps():
        tap = xp[sl]
        if depthwise:
            out += tap * wd[:, 0, i, j][None, :, None, None]
        elif groups == 1:
            out += np.matmul(wd[:, :, i, j], tap.reshape(n, c, npix)).reshape(n, out_c, oh, ow)
        else:
            wt = wd[:, :, i, j].reshape(groups, og, cg)
            out += np.matmul(wt, tap.reshape(n, groups, cg, npix)).reshape(n, out_c, oh, ow)
    if p.bias is not None:
        out += p.bias.data[None, :, None, None]

    def _bw(g):
        dxp = np.zeros_like(xp) if x.requires_grad else None
        dw = np.zeros_like(wd) if p.kernel.requires_grad else None
        for i, j, sl in taps():
            tap = xp[sl]
            if depthwise:
                if dw is not None:
                    dw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, tap)
                if dxp is not None:
                    dxp[sl] += g * wd[:, 0, i, j][None, :, None, None]
            elif groups == 1:
                gp = g.reshape(n, out_c, npix)
                if dw is not None:
                    dw[:, :, i, j] = np.tensordot(gp, tap.reshape(n, c, npix), axes=([0, 2], [0, 2]))
                if dxp is not None:
                    dxp[sl] += np.matmul(wd[:, :, i, j].T, gp).reshape(n, c, oh, ow)
            else:
                gp = g.reshape(n, groups, og, npix)
                tp = tap.reshape(n, groups, cg, npix)
                wt = wd[:, :, i, j].reshape(groups, og, cg)
                if dw is not None:
                    dw[:, :, i, j] = np.einsum("ngop,ngcp->goc", gp, tp).reshape(out_c, cg)
                if dxp is not None:
                    dxp[sl] += np.matmul(wt.transpose(0, 2, 1), gp).reshape(n, c, oh, ow)
        dx = None if dxp is None else dxp[:, :, pt:pt + h, pl:pl + w]
        if p.bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    parents = (x, p.kernel) if p.bias is None else (x, p.kernel, p.bias)
    return make_node(out, parents, _bw)


@dataclass
class RunningStats:
    """Per-channel running mean/variance owned by a batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype), momentum)


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running: RunningStats | None,
    training: bool,
    eps: float = 1e-3,
) -> Tensor:
    """Per-channel normalization.

    In training mode the batch statistics are used and ``running`` is updated
    (new arrays are assigned, existing ones are never written in place).
    """
    n, c, h, w = x.shape
    if scale.shape != (c,) or shift.shape != (c,):
        raise DimensionError("batch_norm", "channels", c, (scale.shape, shift.shape))
    xd = x.data
    bshape = (1, c, 1, 1)
    if training:
        count = n * h * w
        if count == 0:
            raise DimensionError("batch_norm", "batch", "non-empty batch in train mode", x.shape)
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if running is not None:
            m = running.momentum
            unbiased = var * (count / (count - 1)) if count > 1 else var
            running.mean = ((1 - m) * running.mean + m * mu).astype(running.mean.dtype)
            running.var = ((1 - m) * running.var + m * unbiased).astype(running.var.dtype)
    else:
        if running is None:
            raise ValueError("batch_norm in inference mode needs running statistics")
        mu, var = running.mean.astype(xd.dtype), running.var.astype(xd.dtype)
    invstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * invstd.reshape(bshape)
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)

    def _bw(g):
        dscale = np.einsum("nchw,nchw->c", g, xhat)
        dshift = g.sum(axis=(0, 2, 3))
        dxhat = g * scale.data.reshape(bshape)
        if training:
            count = n * h * w
            mean_d = dxhat.mean(axis=(0, 2, 3)).reshape(bshape)
            mean_dx = (dscale * scale.data / count).reshape(bshape)
            dx = (dxhat - mean_d - xhat * mean_dx) * invstd.reshape(bshape)
        else:
            dx = dxhat * invstd.reshape(bshape)
        return dx, dscale, dshift

    return make_node(out, (x, scale, shift), _bw)


def softmax_channels(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError("softmax_channels", "rank", 4, x.ndim)
    if x.shape[1] < 2:
        raise DimensionError("softmax_channels", "channels", ">= 2", x.shape[1])
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return make_node(s, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def upsample_replicate2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling: every pixel tiles a 2x2 block."""
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_node(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def pad_replicate(x: Tensor, pad: int) -> Tensor:
    """Edge-replicating padding of ``pad`` pixels on every spatial side."""
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")

    def _bw(g):
        rows = g[:, :, pad:pad + h, :].copy()
        rows[:, :, 0, :] += g[:, :, :pad, :].sum(axis=2)
        rows[:, :, -1, :] += g[:, :, pad + h:, :].sum(axis=2)
        dx = rows[:, :, :, pad:pad + w].copy()
        dx[:, :, :, 0] += rows[:, :, :, :pad].sum(axis=3)
        dx[:, :, :, -1] += rows[:, :, :, pad + w:].sum(axis=3)
        return (dx,)

    return make_node(out, (x,), _bw)


SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()


@dataclass
class GradField:
    """Per-pixel horizontal/vertical derivative plus the raw (unnormalized) magnitude."""

    gx: Tensor
    gy: Tensor
    mag: Tensor
    normalized: bool = field(default=False)


def sobel_gradients(x: Tensor, normalize: bool = False, eps: float = 1e-6) -> GradField:
    """3x3 Sobel derivatives with replicate borders.

    ``gx`` grows along columns (left to right), ``gy`` along rows (top to
    bottom). With ``normalize`` the components are divided by ``mag + eps`` so
    that ``gx**2 + gy**2 <= 1``; ``mag`` is always the raw magnitude.
    """
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionError("sobel_gradients", "channels", 1, x.shape[1] if x.ndim == 4 else x.shape)
    xp = pad_replicate(x, 1)
    # separable form (smooth 1-2-1, then central difference) keeps flat regions exactly zero
    rows = xp[:, :, :-2, :] + xp[:, :, 1:-1, :] * 2.0 + xp[:, :, 2:, :]
    gx = rows[:, :, :, 2:] - rows[:, :, :, :-2]
    cols = xp[:, :, :, :-2] + xp[:, :, :, 1:-1] * 2.0 + xp[:, :, :, 2:]
    gy = cols[:, :, 2:, :] - cols[:, :, :-2, :]
    mag = hypot(gx, gy)
    if normalize:
        denom = mag + eps
        gx, gy = gx / denom, gy / denom
    return GradField(gx, gy, mag, normalize)


def kaiming_uniform(shape: tuple[int, ...], rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
