"""Layer-level differentiable operations on NCHW tensors."""

from __future__ import annotations

import numpy as np

from .core import Tensor


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1 - out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    out = x @ weight
    return out + bias if bias is not None else out


def global_avg_pool(x: Tensor) -> Tensor:
    """N×C×H×W -> N×C."""
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)

    def backward(g):
        return (np.broadcast_to((g * scale)[:, :, None, None], (n, c, h, w)),)

    return Tensor._make(x.data.mean(axis=(2, 3)), (x,), backward)


def conv_output_size(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    extent = (k - 1) * dilation + 1
    return (size + 2 * padding - extent) // stride + 1


def same_padding(k: int, dilation: int) -> int:
    return ((k - 1) * dilation) // 2


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int | str = 0,
) -> Tensor:
    """Cross-correlation of ``x`` (N×C×H×W) with ``weight`` (F×C×kh×kw).

    Taps sit ``dilation`` pixels apart. ``padding="same"`` keeps H and W at
    stride 1 (odd kernels only).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, c_k, kh, kw = weight.shape
    if c != c_k:
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {c_k}")
    if dilation < 1 or stride < 1:
        raise ValueError("stride and dilation must be >= 1")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("'same' padding needs odd kernel sizes")
        ph, pw = same_padding(kh, dilation), same_padding(kw, dilation)
    else:
        ph = pw = int(padding)
    ho = conv_output_size(h, kh, stride, dilation, ph)
    wo = conv_output_size(w, kw, stride, dilation, pw)
    if ho < 1 or wo < 1:
        raise ValueError(f"input {h}x{w} too small for kernel {kh}x{kw} at dilation {dilation}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    one_by_one = kh == 1 and kw == 1
    p_out = ho * wo
    # columns laid out N x (C*kh*kw) x (Ho*Wo) so a batched matmul yields NCHW directly
    if one_by_one:
        xs = xp[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
        cols = xs.reshape(n, c, p_out) if stride == 1 else np.ascontiguousarray(xs).reshape(n, c, p_out)
    else:
        cols = _im2col(xp, kh, kw, ho, wo, stride, dilation)
    wmat = weight.data.reshape(f, c * kh * kw)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, f, ho, wo)

    def backward(g):
        g3 = g.reshape(n, f, p_out)
        gw = None
        if weight.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gb = g3.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g3)
            if one_by_one and stride == 1 and not (ph or pw):
                gx = gcols.reshape(x.shape)
            else:
                gxp = np.zeros_like(xp)
                if one_by_one:
                    gxp[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride] = gcols.reshape(
                        n, c, ho, wo
                    )
                else:
                    _col2im(gcols, gxp, kh, kw, ho, wo, stride, dilation)
                gx = gxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._make(out, parents, backward)


def _im2col(xp, kh, kw, ho, wo, stride, dilation):
    n, c = xp.shape[:2]
    taps = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            taps[:, :, i, j] = xp[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride]
    return taps.reshape(n, c * kh * kw, ho * wo)


def _col2im(gcols, gxp, kh, kw, ho, wo, stride, dilation):
    n, c = gxp.shape[:2]
    g = gcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            gxp[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride] += g[:, :, i, j]


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W). Updates running stats in place when training."""
    axes = (0, 2, 3)
    c = x.shape[1]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // c
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            m = x.data.size // c
            gx = (inv_std[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=axes)[None, :, None, None]
                - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
            )
        else:
            gx = gxhat * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return Tensor._make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    _check_rate(rate)
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def spatial_dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Drops whole channels of an N×C×H×W tensor."""
    _check_rate(rate)
    if not training or rate == 0.0:
        return x
    n, c = x.shape[:2]
    mask = (rng.random((n, c)) >= rate).astype(x.dtype)[:, :, None, None] / (1.0 - rate)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def gaussian_noise(x: Tensor, stddev: float, rng: np.random.Generator, training: bool) -> Tensor:
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    if not training or stddev == 0.0:
        return x
    noise = rng.normal(0.0, stddev, size=x.shape).astype(x.dtype)
    return Tensor._make(x.data + noise, (x,), lambda g: (g,))
