"""Transformer building blocks: attention, feed-forward, pre-norm blocks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


def uniform_param(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def ones_param(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield (dotted name, tensor) for every Tensor inside nested dataclasses/lists."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            if isinstance(child, (Tensor, list)) or dataclasses.is_dataclass(child):
                yield from named_parameters(child, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, list):
        for i, child in enumerate(obj):
            yield from named_parameters(child, f"{prefix}.{i}")


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int, dtype) -> LayerNormParams:
        return cls(ones_param((d,), dtype), zeros_param((d,), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias, 1e-5)


@dataclass
class AttentionParams:
    """Query/key/value/output projections; head i owns columns i*dh:(i+1)*dh."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    heads: int

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, heads: int, dtype=np.float32) -> AttentionParams:
        if d % heads:
            raise ValueError(f"model width {d} not divisible by {heads} heads")
        mats = []
        for _ in range(4):
            mats.append(uniform_param(rng, (d, d), d, dtype))
            mats.append(uniform_param(rng, (d,), d, dtype))
        return cls(*mats, heads=heads)

    @classmethod
    def identity(cls, d: int, heads: int = 1, dtype=np.float64) -> AttentionParams:
        eye = lambda: Tensor(np.eye(d, dtype=dtype))  # noqa: E731
        zero = lambda: Tensor(np.zeros(d, dtype=dtype))  # noqa: E731
        return cls(eye(), zero(), eye(), zero(), eye(), zero(), eye(), zero(), heads=heads)

    @property
    def width(self) -> int:
        return self.wq.shape[0]


def multi_head_attention(queries: Tensor, memory: Tensor, p: AttentionParams) -> Tensor:
    """Scaled dot-product attention of ``queries`` [(B,) Tq, d] over ``memory`` [(B,) Tm, d].

    Self-attention is ``memory is queries``; its three projections then run
    as one GEMM. Dropout lives on the residual branches of the blocks, not
    on the attention weights.
    """
    d = p.width
    if queries.shape[-1] != d or memory.shape[-1] != d:
        raise ValueError(f"attention width mismatch: expected {d}")
    if d % p.heads:
        raise ValueError(f"model width {d} not divisible by {p.heads} heads")
    squeeze = queries.ndim == 2
    self_attn = memory is queries
    if squeeze:
        queries = queries.reshape(1, *queries.shape)
        memory = queries if self_attn else memory.reshape(1, *memory.shape)
    if self_attn:
        q, k, v = F.linear_split(queries, (p.wq, p.wk, p.wv), (p.bq, p.bk, p.bv))
    else:
        q = F.linear(queries, p.wq, p.bq)
        k, v = F.linear_split(memory, (p.wk, p.wv), (p.bk, p.bv))
    out = F.linear(F.attention_core(q, k, v, p.heads), p.wo, p.bo)
    return out.reshape(*out.shape[1:]) if squeeze else out


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, d: int, ff: int, dtype) -> FeedForwardParams:
        return cls(
            uniform_param(rng, (d, ff), d, dtype),
            uniform_param(rng, (ff,), d, dtype),
            uniform_param(rng, (ff, d), ff, dtype),
            uniform_param(rng, (d,), ff, dtype),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(F.gelu(F.linear(x, self.w1, self.b1)), self.w2, self.b2)


@dataclass
class EncoderBlock:
    """Pre-norm block: x + Drop(SelfAttn(LN(x))), then x + Drop(FF(LN(x)))."""

    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    ff: FeedForwardParams

    @classmethod
    def init(cls, rng, d: int, heads: int, ff: int, dtype) -> EncoderBlock:
        return cls(
            LayerNormParams.init(d, dtype),
            AttentionParams.init(rng, d, heads, dtype),
            LayerNormParams.init(d, dtype),
            FeedForwardParams.init(rng, d, ff, dtype),
        )

    def __call__(self, x: Tensor, train_mode: bool, dropout: float, rng) -> Tensor:
        h = self.ln1(x)
        x = x + F.dropout(multi_head_attention(h, h, self.attn), dropout, rng, train_mode)
        return x + F.dropout(self.ff(self.ln2(x)), dropout, rng, train_mode)


@dataclass
class DecoderBlock:
    """Pre-norm block with self-attention, cross-attention to memory, feed-forward."""

    ln1: LayerNormParams
    self_attn: AttentionParams
    ln2: LayerNormParams
    cross_attn: AttentionParams
    ln3: LayerNormParams
    ff: FeedForwardParams

    @classmethod
    def init(cls, rng, d: int, heads: int, ff: int, dtype) -> DecoderBlock:
        return cls(
            LayerNormParams.init(d, dtype),
            AttentionParams.init(rng, d, heads, dtype),
            LayerNormParams.init(d, dtype),
            AttentionParams.init(rng, d, heads, dtype),
            LayerNormParams.init(d, dtype),
            FeedForwardParams.init(rng, d, ff, dtype),
        )

    def __call__(self, x: Tensor, memory: Tensor, train_mode: bool, dropout: float, rng) -> Tensor:
        h = self.ln1(x)
        x = x + F.dropout(multi_head_attention(h, h, self.self_attn), dropout, rng, train_mode)
        h = self.ln2(x)
        x = x + F.dropout(
            multi_head_attention(h, memory, self.cross_attn), dropout, rng, train_mode
        )
        return x + F.dropout(self.ff(self.ln3(x)), dropout, rng, train_mode)


def sinusoidal_positions(length: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos table, shape (length, d)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d)
    table = np.zeros((length, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table.astype(dtype)
