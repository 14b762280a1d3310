from typing import List, Optional

import torch
from torch import Tensor

from bdlab.misc import ConfigurationError
from bdlab.util import ops

LORA_TARGETS = ["q", "k", "v", "o"]


class LoraAdapter(torch.nn.Module):
    """Low-rank update of a frozen linear map.

    Computes ``base(x) + (alpha / rank) * dropout(x) A B`` with A of shape
    [d_in, rank] and B of shape [rank, d_out]. B starts at zero, so a freshly
    attached adapter leaves the output of `base` unchanged.

    """

    def __init__(
        self,
        base: torch.nn.Linear,
        rank: int = 16,
        alpha: float = 16.0,
        dropout: float = 0.1,
        init_std: float = 0.02,
        generator: Optional[torch.Generator] = None,
        dropout_stream: Optional[ops.DropoutStream] = None,
    ):
        super().__init__()
        if rank < 1:
            raise ConfigurationError("LoRA rank must be positive, found {}".format(rank))
        if not 0.0 <= dropout < 1.0:
            raise ConfigurationError(
                "LoRA dropout must be in [0, 1), found {}".format(dropout)
            )
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.dropout = dropout
        self.dropout_stream = (
            dropout_stream if dropout_stream is not None else ops.DropoutStream()
        )
        a = torch.empty(base.in_features, rank, dtype=ops.DTYPE)
        a.normal_(0.0, init_std, generator=generator)
        self.A = torch.nn.Parameter(a)
        self.B = torch.nn.Parameter(torch.zeros(rank, base.out_features, dtype=ops.DTYPE))

    @property
    def in_features(self) -> int:
        return self.base.in_features

    @property
    def out_features(self) -> int:
        return self.base.out_features

    def forward(self, x: Tensor) -> Tensor:
        dropped = x
        if self.training and self.dropout > 0:
            dropped = ops.dropout(x, self.dropout, self.dropout_stream.next_seed())
        delta = ops.matmul(ops.matmul(dropped, self.A), self.B)
        return ops.add(self.base(x), ops.scale(delta, self.scaling))

    def num_parameters(self) -> int:
        return self.rank * (self.in_features + self.out_features)


def attach_lora(
    model,
    targets: List[str],
    rank: int = 16,
    alpha: float = 16.0,
    dropout: float = 0.1,
    init_std: float = 0.02,
    generator: Optional[torch.Generator] = None,
):
    """Wrap the attention projections `targets` of the active layers of `model`.

    Afterwards only the adapters and the classification head are trainable.
    `model` is a :class:`bdlab.model.decoder.SLModel`.

    """
    if model.lora_attached:
        raise ConfigurationError("LoRA adapters are already attached")
    if len(targets) == 0:
        raise ConfigurationError("no LoRA targets given")
    unknown = [t for t in targets if t not in LORA_TARGETS]
    if unknown:
        raise ConfigurationError(
            "unknown LoRA targets {}; allowed values are {}".format(
                unknown, LORA_TARGETS
            )
        )

    for p in model.parameters():
        p.requires_grad_(False)
    for block in model.active_blocks():
        for target in targets:
            base = getattr(block.attention, target)
            setattr(
                block.attention,
                target,
                LoraAdapter(
                    base,
                    rank=rank,
                    alpha=alpha,
                    dropout=dropout,
                    init_std=init_std,
                    generator=generator,
                    dropout_stream=model.dropout_stream,
                ),
            )
    for p in model.cls_head.parameters():
        p.requires_grad_(True)
    model.lora_attached = True


def lora_adapters(model) -> List[LoraAdapter]:
    return [m for m in model.modules() if isinstance(m, LoraAdapter)]
