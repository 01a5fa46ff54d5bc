"""Neural-network layer primitives on the autodiff engine.

Convolutions use the cross-correlation convention (no kernel flip) and are
realized as one im2col copy plus one BLAS matmul; their backward passes reuse
the same machinery, so the transposed convolution is literally the adjoint of
the forward convolution with the channel roles swapped.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Node, _make


# Patch matrices smaller than this are kept alive from forward to backward
# instead of being rebuilt; raise or lower to trade memory for speed.
CONV_CACHE_LIMIT_BYTES = 64 * 1024 * 1024


def _as4d(x: Node, op: str) -> np.ndarray:
    if x.value.ndim != 4:
        raise ValueError(f"{op}: expected a 4-d (N,C,H,W) input, got shape {x.value.shape}")
    return x.value


def _im2colT(xp: np.ndarray, kh: int, kw: int, stride: int):
    """(N,C,Hp,Wp) -> ((C*kh*kw, N*Ho*Wo) patch matrix, Ho, Wo).

    The channel-major layout keeps the innermost copied runs contiguous in
    memory (rows of Wo scalars), which is what makes the one materializing
    copy here cheap.
    """
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (c, kh, kw, n, ho, wo), (sc, sh, sw, sn, sh * stride, sw * stride),
        writeable=False)
    return windows.reshape(c * kh * kw, n * ho * wo), ho, wo


def _col2im(colsT: np.ndarray, x_shape, kh, kw, stride, padding) -> np.ndarray:
    """Scatter-add (C*kh*kw, N*Ho*Wo) patch gradients back onto the input."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    colsT = colsT.reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros((n, c, hp, wp), dtype=colsT.dtype)
    for i in range(kh):
        hi = slice(i, i + stride * (ho - 1) + 1, stride)
        for j in range(kw):
            wj = slice(j, j + stride * (wo - 1) + 1, stride)
            dxp[:, :, hi, wj] += colsT[:, i, j].transpose(1, 0, 2, 3)
    if padding:
        return dxp[:, :, padding:hp - padding, padding:wp - padding].copy()
    return dxp


def _pad2d(x: np.ndarray, padding) -> np.ndarray:
    ph, pw = (padding, padding) if np.isscalar(padding) else padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _corr_value(xv: np.ndarray, wv: np.ndarray, stride: int, padding) -> np.ndarray:
    """Plain cross-correlation on arrays; the shared forward kernel."""
    n = xv.shape[0]
    k, _, kh, kw = wv.shape
    colsT, ho, wo = _im2colT(_pad2d(xv, padding), kh, kw, stride)
    out = wv.reshape(k, -1) @ colsT
    return np.ascontiguousarray(out.reshape(k, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d(x: Node, weight: Node, bias: Node | None = None,
           stride: int = 1, padding: int = 0) -> Node:
    """Cross-correlation of (N,C,H,W) with (K,C,kh,kw) kernels."""
    xv = _as4d(x, "conv2d")
    wv = weight.value
    if wv.ndim != 4:
        raise ValueError(f"conv2d: weight must be (K,C,kh,kw), got {wv.shape}")
    n, c, h, w = xv.shape
    k, cw, kh, kw = wv.shape
    if cw != c:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {cw}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}")

    if kh == 1 and kw == 1 and padding == 0:
        return _conv1x1(x, weight, bias, stride)

    colsT, ho, wo = _im2colT(_pad2d(xv, padding), kh, kw, stride)
    out = wv.reshape(k, -1) @ colsT
    out = np.ascontiguousarray(out.reshape(k, n, ho, wo).transpose(1, 0, 2, 3))
    if bias is not None:
        out += bias.value[None, :, None, None]

    wmat = wv.reshape(k, -1)
    cached = colsT if colsT.nbytes <= CONV_CACHE_LIMIT_BYTES else None
    del colsT

    def bw(g):
        gT = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(k, -1)
        colsT = cached
        if colsT is None:
            colsT, _, _ = _im2colT(_pad2d(xv, padding), kh, kw, stride)
        dw = (colsT @ gT.T).T.reshape(wv.shape)
        if stride == 1 and padding <= min(kh, kw) - 1:
            # input grad is itself a correlation with the flipped, role-swapped
            # kernel: one gemm instead of a col2im scatter
            wt = np.ascontiguousarray(wv.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            dx = _corr_value(np.ascontiguousarray(g), wt, 1,
                             (kh - 1 - padding, kw - 1 - padding))
        else:
            dx = _col2im(wmat.T @ gT, xv.shape, kh, kw, stride, padding)
        if bias is None:
            return dx, dw
        return dx, dw, gT.sum(axis=1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def _conv1x1(x: Node, weight: Node, bias: Node | None, stride: int) -> Node:
    """1x1 kernels reduce to a channel matmul; the channel-major input matrix
    is one plane-copy transpose and is kept for the weight gradient."""
    xv, wv = x.value, weight.value
    n, c, h, w = xv.shape
    k = wv.shape[0]
    xs = xv if stride == 1 else xv[:, :, ::stride, ::stride]
    ho, wo = xs.shape[2:]
    x_matT = np.ascontiguousarray(xs.transpose(1, 0, 2, 3)).reshape(c, -1)
    w2 = wv.reshape(k, c)
    out = w2 @ x_matT
    if bias is not None:
        out += bias.value[:, None]
    out = np.ascontiguousarray(out.reshape(k, n, ho, wo).transpose(1, 0, 2, 3))

    def bw(g):
        gT = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(k, -1)
        dw = (x_matT @ gT.T).T.reshape(wv.shape)
        dxm = (w2.T @ gT).reshape(c, n, ho, wo).transpose(1, 0, 2, 3)
        if stride == 1:
            dx = np.ascontiguousarray(dxm)
        else:
            dx = np.zeros_like(xv)
            dx[:, :, ::stride, ::stride] = dxm
        if bias is None:
            return dx, dw
        return dx, dw, gT.sum(axis=1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def conv2d_transpose(x: Node, weight: Node, stride: int = 1, padding: int = 0) -> Node:
    """Adjoint of conv2d: (N,C,H,W) with (C,K,kh,kw) -> (N,K,H',W').

    H' = (H-1)*stride - 2*padding + kh.
    """
    xv = _as4d(x, "conv2d_transpose")
    wv = weight.value
    if wv.ndim != 4:
        raise ValueError(f"conv2d_transpose: weight must be (C,K,kh,kw), got {wv.shape}")
    n, c, h, w = xv.shape
    cw, k, kh, kw = wv.shape
    if cw != c:
        raise ValueError(f"conv2d_transpose: input has {c} channels but weight expects {cw}")
    if stride < 1:
        raise ValueError(f"conv2d_transpose: stride must be >= 1, got {stride}")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise ValueError(
            f"conv2d_transpose: output dims {ho}x{wo} not positive "
            f"(input {h}x{w}, stride {stride}, padding {padding}, kernel {kh}x{kw})")

    wmat = wv.reshape(c, k * kh * kw)
    x_matT = np.ascontiguousarray(xv.transpose(1, 0, 2, 3)).reshape(c, -1)
    colsT = wmat.T @ x_matT
    full = _col2im_full(colsT, n, k, h, w, kh, kw, stride)
    out = full[:, :, padding:padding + ho, padding:padding + wo]

    def bw(g):
        gp = _pad2d(g, padding)
        gcolsT, gho, gwo = _im2colT(gp, kh, kw, stride)  # gho == h, gwo == w
        dx = (wmat @ gcolsT).reshape(c, n, h, w).transpose(1, 0, 2, 3)
        dw = (x_matT @ gcolsT.T).reshape(wv.shape)
        return np.ascontiguousarray(dx), dw

    return _make(np.ascontiguousarray(out), (x, weight), bw)


def _col2im_full(colsT: np.ndarray, n, k, h, w, kh, kw, stride) -> np.ndarray:
    """Scatter (K*kh*kw, N*H*W) onto the un-cropped transposed-conv canvas."""
    hf = (h - 1) * stride + kh
    wf = (w - 1) * stride + kw
    colsT = colsT.reshape(k, kh, kw, n, h, w)
    full = np.zeros((n, k, hf, wf), dtype=colsT.dtype)
    for i in range(kh):
        hi = slice(i, i + stride * (h - 1) + 1, stride)
        for j in range(kw):
            wj = slice(j, j + stride * (w - 1) + 1, stride)
            full[:, :, hi, wj] += colsT[:, i, j].transpose(1, 0, 2, 3)
    return full


def reflection_pad2d(x: Node, pad: int) -> Node:
    """Mirror-pad H and W without repeating the edge pixel."""
    xv = _as4d(x, "reflection_pad2d")
    n, c, h, w = xv.shape
    if pad < 0:
        raise ValueError(f"reflection_pad2d: pad must be >= 0, got {pad}")
    if pad >= min(h, w):
        raise ValueError(f"reflection_pad2d: pad {pad} too large for {h}x{w} input")
    if pad == 0:
        return _make(xv, (x,), lambda g: (g,))

    mi = _reflect_index(h, pad)
    mj = _reflect_index(w, pad)
    out = xv[:, :, mi[:, None], mj[None, :]]

    def bw(g):
        # fold the mirrored border rows/cols back onto their interior sources
        rows = np.zeros((n, c, h, w + 2 * pad), dtype=g.dtype)
        rows += g[:, :, pad:pad + h, :]
        for i in range(pad):
            rows[:, :, pad - i, :] += g[:, :, i, :]
            rows[:, :, h - 2 - i, :] += g[:, :, pad + h + i, :]
        dx = rows[:, :, :, pad:pad + w].copy()
        for j in range(pad):
            dx[:, :, :, pad - j] += rows[:, :, :, j]
            dx[:, :, :, w - 2 - j] += rows[:, :, :, pad + w + j]
        return (dx,)

    return _make(np.ascontiguousarray(out), (x,), bw)


def _reflect_index(size: int, pad: int) -> np.ndarray:
    t = np.arange(-pad, size + pad)
    m = np.where(t < 0, -t, t)
    return np.where(m >= size, 2 * size - 2 - m, m)


def batchnorm2d(x: Node, gamma: Node, beta: Node, running_mean: np.ndarray,
                running_var: np.ndarray, mode: str = "train",
                eps: float = 1e-5, momentum: float = 0.1) -> Node:
    """Per-channel batch normalization with an affine transform.

    Train mode normalizes by batch statistics and folds them into the running
    buffers in place (running <- (1-momentum)*running + momentum*batch, with
    the unbiased variance); eval mode normalizes by the running buffers.
    """
    xv = _as4d(x, "batchnorm2d")
    n, c, h, w = xv.shape
    gv = gamma.value.reshape(1, c, 1, 1)
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise ValueError("batchnorm2d: train mode needs N*H*W >= 2")
        mu = xv.mean(axis=(0, 2, 3))
        xhat = xv - mu.reshape(1, c, 1, 1)
        var = np.einsum("nchw,nchw->c", xhat, xhat) / m
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
        ivar = 1.0 / np.sqrt(var + eps)
        xhat *= ivar.reshape(1, c, 1, 1)
        out = gv * xhat
        out += beta.value.reshape(1, c, 1, 1)

        def bw(g):
            dgamma = np.einsum("nchw,nchw->c", g, xhat)
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gv
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dgamma * gv.reshape(-1)).reshape(1, c, 1, 1)
            dx = (ivar.reshape(1, c, 1, 1) / m) * (m * dxhat - s1 - xhat * s2)
            return dx.astype(xv.dtype, copy=False), dgamma, dbeta

        return _make(out, (x, gamma, beta), bw)

    if mode == "eval":
        ivar = (1.0 / np.sqrt(running_var + eps)).reshape(1, c, 1, 1)
        xhat = (xv - running_mean.reshape(1, c, 1, 1)) * ivar
        out = gv * xhat
        out += beta.value.reshape(1, c, 1, 1)

        def bw(g):
            return ((g * gv * ivar).astype(xv.dtype, copy=False),
                    np.einsum("nchw,nchw->c", g, xhat),
                    g.sum(axis=(0, 2, 3)))

        return _make(out, (x, gamma, beta), bw)

    raise ValueError(f"batchnorm2d: unknown mode {mode!r}")


def instance_norm2d(x: Node, eps: float = 1e-5) -> Node:
    """Per-sample, per-channel normalization over H,W; no affine, no stats."""
    xv = _as4d(x, "instance_norm2d")
    n, c, h, w = xv.shape
    m = h * w
    if m < 2:
        raise ValueError("instance_norm2d: needs H*W >= 2")
    mu = xv.mean(axis=(2, 3), keepdims=True)
    var = xv.var(axis=(2, 3), keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * ivar

    def bw(g):
        s1 = g.sum(axis=(2, 3), keepdims=True)
        s2 = (g * xhat).sum(axis=(2, 3), keepdims=True)
        dx = (ivar / m) * (m * g - s1 - xhat * s2)
        return (dx.astype(xv.dtype),)

    return _make(xhat.astype(xv.dtype), (x,), bw)


def avg_pool2d(x: Node, k: int, stride: int | None = None) -> Node:
    """Windowed average pooling."""
    xv = _as4d(x, "avg_pool2d")
    stride = k if stride is None else stride
    n, c, h, w = xv.shape
    if k > h or k > w:
        raise ValueError(f"avg_pool2d: window {k} exceeds input {h}x{w}")
    sn, sc, sh, sw = xv.strides
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    windows = np.lib.stride_tricks.as_strided(
        xv, (n, c, ho, wo, k, k), (sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False)
    out = windows.mean(axis=(4, 5))

    def bw(g):
        dxp = np.zeros_like(xv)
        gk = g / (k * k)
        for i in range(k):
            hi = slice(i, i + stride * (ho - 1) + 1, stride)
            for j in range(k):
                wj = slice(j, j + stride * (wo - 1) + 1, stride)
                dxp[:, :, hi, wj] += gk
        return (dxp,)

    return _make(np.ascontiguousarray(out), (x,), bw)


def global_avg_pool2d(x: Node) -> Node:
    """Mean over H,W -> (N, C)."""
    xv = _as4d(x, "global_avg_pool2d")
    n, c, h, w = xv.shape
    out = xv.mean(axis=(2, 3))

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), xv.shape).astype(xv.dtype),)

    return _make(out, (x,), bw)


def pool2d(kind: str, x: Node, k: int | None = None, stride: int | None = None) -> Node:
    """Dispatch pooling by kind: 'avg' (windowed) or 'global-avg'."""
    if kind == "avg":
        if k is None:
            raise ValueError("pool2d: 'avg' needs a window size k")
        return avg_pool2d(x, k, stride)
    if kind == "global-avg":
        return global_avg_pool2d(x)
    raise ValueError(f"pool2d: unknown kind {kind!r}")


def concat_channels(parts: list[Node]) -> Node:
    """Stack (N,Ci,H,W) parts along the channel axis in list order."""
    if not parts:
        raise ValueError("concat_channels: empty part list")
    vals = [_as4d(p, "concat_channels") for p in parts]
    ref = vals[0].shape
    for v in vals[1:]:
        if (v.shape[0],) + v.shape[2:] != (ref[0],) + ref[2:]:
            raise ValueError(
                f"concat_channels: batch/spatial mismatch {ref} vs {v.shape}")
    sizes = [v.shape[1] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(vals)))

    return _make(np.concatenate(vals, axis=1), tuple(parts), bw)


def linear(x: Node, weight: Node, bias: Node) -> Node:
    """x @ W + b with x (N,D), W (D,M), b (M,)."""
    xv, wv, bv = x.value, weight.value, bias.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ValueError(f"linear: dimension mismatch x{xv.shape} @ W{wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise ValueError(f"linear: bias shape {bv.shape} != ({wv.shape[1]},)")

    def bw(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0)

    return _make(xv @ wv + bv, (x, weight, bias), bw)


def dropout(x: Node, rate: float, mode: str = "train",
            rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"dropout: unknown mode {mode!r}")
    if rng is None:
        raise ValueError("dropout: train mode needs an rng")
    keep = (rng.random(x.value.shape) >= rate).astype(x.value.dtype)
    keep /= (1.0 - rate)
    return _make(x.value * keep, (x,), lambda g: (g * keep,))
