"""Numeric substrate: tensors with reverse-mode autodiff, transformer blocks, Adam."""
from .adam import AdamState, adam_step
from .backend import BACKEND
from .functional import dropout, gelu, layer_norm, linear, softmax
from .nn import (
    AttentionParams,
    DecoderBlock,
    EncoderBlock,
    multi_head_attention,
    named_parameters,
    sinusoidal_positions,
)
from .tensor import Tensor, backward, concat, matmul, no_grad

__all__ = [
    "BACKEND",
    "AdamState",
    "AttentionParams",
    "DecoderBlock",
    "EncoderBlock",
    "Tensor",
    "adam_step",
    "backward",
    "concat",
    "dropout",
    "gelu",
    "layer_norm",
    "linear",
    "matmul",
    "multi_head_attention",
    "named_parameters",
    "no_grad",
    "sinusoidal_positions",
    "softmax",
]
