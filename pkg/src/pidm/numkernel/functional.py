"""Differentiable layer primitives built on the row kernels."""
from __future__ import annotations

import numpy as np

from . import backend
from .tensor import Tensor, _unbroadcast, make_result

_GELU_C = float(np.sqrt(2.0 / np.pi))


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    axis = axis % x.ndim
    if axis == x.ndim - 1:
        shape = x.shape
        y = backend.softmax_forward(_rows(x.data)).reshape(shape)
        return make_result(
            y, (x,), lambda g: (backend.softmax_backward(_rows(y), _rows(g)).reshape(shape),)
        )
    moved = np.moveaxis(x.data, axis, -1)
    shape = moved.shape
    y = backend.softmax_forward(_rows(moved)).reshape(shape)

    def grad_fn(g):
        gm = np.moveaxis(g, axis, -1)
        gx = backend.softmax_backward(_rows(y), _rows(gm)).reshape(shape)
        return (np.moveaxis(gx, -1, axis),)

    return make_result(np.moveaxis(y, -1, axis), (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis vector to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"gain/bias must have shape ({d},)")
    shape = x.shape
    y, xhat, rstd = backend.layernorm_forward(
        _rows(x.data), np.ascontiguousarray(gain.data), np.ascontiguousarray(bias.data), float(eps)
    )

    def grad_fn(g):
        gx, g_gain, g_bias = backend.layernorm_backward(_rows(g), xhat, rstd, np.ascontiguousarray(gain.data))
        return gx.reshape(shape), g_gain, g_bias

    return make_result(y.reshape(shape), (x, gain, bias), grad_fn)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU (smooth, so finite differences stay well-behaved)."""
    xd = x.data
    x2 = xd * xd
    t = x2 * 0.044715
    t += 1.0
    t *= xd
    t *= _GELU_C
    np.tanh(t, out=t)
    y = t + 1.0
    y *= xd
    y *= 0.5

    def grad_fn(g):
        # d/dx = 0.5 (1 + t) + 0.5 x (1 - t^2) c (1 + 3a x^2)
        inner = x2 * (3 * 0.044715 * _GELU_C)
        inner += _GELU_C
        sech2 = t * t
        np.subtract(1.0, sech2, out=sech2)
        sech2 *= xd
        sech2 *= inner
        sech2 += t
        sech2 += 1.0
        sech2 *= 0.5
        sech2 *= g
        return (sech2,)

    return make_result(y, (x,), grad_fn)


def keep_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate).

    Drop decisions come from raw 16-bit draws (four per 64-bit word), so
    the rate is realized to a granularity of 1/65536. Uniform doubles cost
    about 4x more and dominated the training step.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    n = int(np.prod(shape))
    words = rng.integers(0, 2**64 - 1, size=(n + 3) // 4, dtype=np.uint64, endpoint=True)
    threshold = int(round(rate * 65536))
    keep = words.view("<u2")[:n] >= threshold
    scale = 65536.0 / (65536 - threshold)
    return np.multiply(keep, np.dtype(dtype).type(scale), dtype=dtype).reshape(shape)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train_mode: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not train_mode or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = keep_mask(rng, x.shape, rate, x.dtype)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., k] @ w[k, n] + b[n], computed as a single 2-D GEMM."""
    k = x.shape[-1]
    if w.shape[0] != k:
        raise ValueError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, k)
    y = x2 @ w.data
    if b is not None:
        y = y + b.data
    out_shape = lead + (w.shape[1],)

    def grad_fn(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(y.reshape(out_shape), parents, grad_fn)


def linear_split(x: Tensor, ws, bs) -> list[Tensor]:
    """Several projections of the same input as one GEMM on the stacked weights."""
    k = x.shape[-1]
    widths = [w.shape[1] for w in ws]
    edges = [0]
    for n in widths:
        edges.append(edges[-1] + n)
    x2 = x.data.reshape(-1, k)
    y = x2 @ np.concatenate([w.data for w in ws], axis=1)
    y += np.concatenate([b.data for b in bs])
    lead = x.shape[:-1]

    def grad_fn(g):
        g2 = g.reshape(-1, edges[-1])
        gx = np.zeros_like(x2)
        gws, gbs = [], []
        for w, lo, hi in zip(ws, edges[:-1], edges[1:]):
            gx += g2[:, lo:hi] @ w.data.T
            gws.append(x2.T @ g2[:, lo:hi])
            gbs.append(g2[:, lo:hi].sum(axis=0))
        return (gx.reshape(x.shape), *gws, *gbs)

    packed = make_result(y.reshape(lead + (edges[-1],)), (x, *ws, *bs), grad_fn)
    return [packed[..., lo:hi] for lo, hi in zip(edges[:-1], edges[1:])]


def broadcast_add(x: Tensor, c: np.ndarray) -> Tensor:
    """Add a constant (non-differentiable) array, broadcasting."""
    shape = x.shape
    return make_result(x.data + c.astype(x.dtype, copy=False), (x,), lambda g: (_unbroadcast(g, shape),))


def attention_core(q: Tensor, k: Tensor, v: Tensor, heads: int, keep: np.ndarray | None = None) -> Tensor:
    """softmax(QK^T / sqrt(dh)) V per head, for projected q (B, Tq, d) and k, v (B, Tm, d).

    ``keep`` is an optional inverted-dropout multiplier on the attention
    weights, shape (B, heads, Tq, Tm).
    """
    B, Tq, d = q.shape
    Tm = k.shape[1]
    dh = d // heads
    scale = q.dtype.type(1.0 / np.sqrt(dh))
    # scaling q (Tq x d) is cheaper than scaling the Tq x Tm scores
    qh = q.data.reshape(B, Tq, heads, dh).transpose(0, 2, 1, 3) * scale
    kh = k.data.reshape(B, Tm, heads, dh).transpose(0, 2, 1, 3)
    vh = v.data.reshape(B, Tm, heads, dh).transpose(0, 2, 1, 3)
    scores = qh @ kh.transpose(0, 1, 3, 2)
    w = backend.softmax_forward(_rows(scores)).reshape(scores.shape)
    wd = w if keep is None else w * keep
    ctx = (wd @ vh).transpose(0, 2, 1, 3).reshape(B, Tq, d)

    def grad_fn(g):
        gh = g.reshape(B, Tq, heads, dh).transpose(0, 2, 1, 3)
        g_wd = gh @ vh.transpose(0, 1, 3, 2)
        g_vh = wd.transpose(0, 1, 3, 2) @ gh
        g_w = g_wd if keep is None else g_wd * keep
        g_s = backend.softmax_backward(_rows(w), _rows(g_w)).reshape(w.shape)
        g_qh = (g_s @ kh) * scale
        g_kh = g_s.transpose(0, 1, 3, 2) @ qh
        merge = lambda x, t: x.transpose(0, 2, 1, 3).reshape(B, t, d)  # noqa: E731
        return merge(g_qh, Tq), merge(g_kh, Tm), merge(g_vh, Tm)

    return make_result(ctx, (q, k, v), grad_fn)
