import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import torch
from torch import Tensor

from bdlab.misc import ConfigurationError, DimensionError
from bdlab.util import ops


# -- MASKS -----------------------------------------------------------------------------


def causal_mask(seq_len: int) -> Tensor:
    """Additive mask with 0 on and below the diagonal and -inf above it."""
    if seq_len < 1:
        raise DimensionError("mask length must be positive, found {}".format(seq_len))
    upper = torch.ones(seq_len, seq_len, dtype=torch.bool).triu(diagonal=1)
    return torch.zeros(seq_len, seq_len, dtype=ops.DTYPE).masked_fill(upper, ops.NEG_INF)


def bidirectional_mask(seq_len: int) -> Tensor:
    if seq_len < 1:
        raise DimensionError("mask length must be positive, found {}".format(seq_len))
    return torch.zeros(seq_len, seq_len, dtype=ops.DTYPE)


def combine_padding(mask: Tensor, pad_positions: Union[Tensor, Sequence[bool]]) -> Tensor:
    """Make pad keys unattendable.

    `mask` has shape [..., seq, seq] and `pad_positions` shape [..., seq]. Columns of
    pad positions become -inf in every non-pad row. A pad row attends to itself
    only, so that no row is fully masked.

    """
    pad = torch.as_tensor(pad_positions, dtype=torch.bool)
    seq_len = mask.shape[-1]
    if mask.dim() < 2 or mask.shape[-2] != seq_len or pad.shape[-1] != seq_len:
        raise DimensionError(
            "padding flags of shape {} do not fit mask of shape {}".format(
                tuple(pad.shape), tuple(mask.shape)
            )
        )
    query_pad = pad.unsqueeze(-1)
    key_pad = pad.unsqueeze(-2)
    result = mask.masked_fill(key_pad & ~query_pad, ops.NEG_INF)
    self_only = bidirectional_mask(seq_len).masked_fill(
        ~torch.eye(seq_len, dtype=torch.bool), ops.NEG_INF
    )
    return torch.where(query_pad, self_only, result)


# -- ROTARY POSITIONS ------------------------------------------------------------------


def rope_rotate(
    x: Tensor, base: float = 10000.0, positions: Optional[Tensor] = None
) -> Tensor:
    """Rotary position embedding of `x` with shape [..., seq, d_head].

    The feature pair (2i, 2i+1) at position p is rotated by the angle
    p * base^(-2i/d_head). Positions default to 0, 1, ..., seq-1.

    """
    d_head = x.shape[-1]
    if d_head % 2 != 0:
        raise ConfigurationError(
            "rotary embeddings need an even head dimension, found {}".format(d_head)
        )
    seq_len = x.shape[-2]
    if positions is None:
        positions = torch.arange(seq_len, dtype=ops.DTYPE)
    else:
        positions = torch.as_tensor(positions, dtype=ops.DTYPE)
        if positions.shape != (seq_len,):
            raise DimensionError(
                "positions of shape {} do not fit sequence length {}".format(
                    tuple(positions.shape), seq_len
                )
            )
    inv_freq = base ** (-torch.arange(0, d_head, 2, dtype=ops.DTYPE) / d_head)
    angles = positions.unsqueeze(-1) * inv_freq  # [seq, d_head/2]
    cos, sin = torch.cos(angles), torch.sin(angles)
    x_even, x_odd = x[..., 0::2], x[..., 1::2]
    rotated = torch.stack((x_even * cos - x_odd * sin, x_even * sin + x_odd * cos), -1)
    return rotated.flatten(-2)


# -- ATTENTION -------------------------------------------------------------------------


@dataclass
class AttentionOutput:
    #: [..., seq, d_model]
    values: Tensor
    #: [..., heads, seq, seq]; rows sum to 1, masked entries are exactly 0
    weights: Tensor


def attend(
    x: Tensor,
    q_proj: Callable[[Tensor], Tensor],
    k_proj: Callable[[Tensor], Tensor],
    v_proj: Callable[[Tensor], Tensor],
    o_proj: Callable[[Tensor], Tensor],
    mask: Tensor,
    heads: int,
    rope_base: float = 10000.0,
) -> AttentionOutput:
    """Multi-head scaled dot-product attention with rotary positions.

    `x` has shape [seq, d_model] or [batch, seq, d_model]; `mask` has shape
    [seq, seq] or [batch, seq, seq] and is added to the scores of every head.
    Per head: softmax(rope(Q) rope(K)^T / sqrt(d_head) + mask) V. Heads are
    concatenated and passed through `o_proj`.

    """
    unbatched = x.dim() == 2
    if unbatched:
        x = x.unsqueeze(0)
    if x.dim() != 3:
        raise DimensionError("attention input must be [batch, seq, d_model]")
    batch_size, seq_len, d_model = x.shape
    if d_model % heads != 0:
        raise DimensionError(
            "d_model={} is not divisible by heads={}".format(d_model, heads)
        )
    if mask.shape[-2:] != (seq_len, seq_len):
        raise DimensionError(
            "mask of shape {} does not fit input of shape {}".format(
                tuple(mask.shape), tuple(x.shape)
            )
        )
    d_head = d_model // heads

    def split_heads(t: Tensor) -> Tensor:
        return ops.reshape(t, [batch_size, seq_len, heads, d_head]).transpose(1, 2)

    q = rope_rotate(split_heads(q_proj(x)), rope_base)
    k = rope_rotate(split_heads(k_proj(x)), rope_base)
    v = split_heads(v_proj(x))

    if mask.dim() == 3:
        mask = mask.unsqueeze(1)
    scores = ops.add(
        ops.scale(ops.matmul(q, ops.transpose_last_two(k)), 1.0 / math.sqrt(d_head)),
        mask,
    )
    weights = ops.softmax_lastdim(scores)
    values = ops.matmul(weights, v).transpose(1, 2)
    values = o_proj(ops.reshape(values, [batch_size, seq_len, d_model]))
    if unbatched:
        return AttentionOutput(values[0], weights[0])
    return AttentionOutput(values, weights)


class MultiHeadAttention(torch.nn.Module):
    """Rotary multi-head self-attention with bias-free projections q, k, v, o."""

    def __init__(self, d_model: int, heads: int, rope_base: float = 10000.0):
        super().__init__()
        if heads < 1 or d_model % heads != 0:
            raise ConfigurationError(
                "d_model={} is not divisible by heads={}".format(d_model, heads)
            )
        if (d_model // heads) % 2 != 0:
            raise ConfigurationError(
                "head dimension {} must be even".format(d_model // heads)
            )
        self.d_model = d_model
        self.heads = heads
        self.rope_base = rope_base
        for name in ["q", "k", "v", "o"]:
            self.add_module(
                name, torch.nn.Linear(d_model, d_model, bias=False, dtype=ops.DTYPE)
            )

    def forward(self, x: Tensor, mask: Tensor) -> AttentionOutput:
        return attend(
            x, self.q, self.k, self.v, self.o, mask, self.heads, self.rope_base
        )
