from typing import Any, Dict, List, Optional, Tuple

import torch
from torch import Tensor

from bdlab.config import Config
from bdlab.misc import ConfigurationError, DimensionError
from bdlab.model.attention import (
    MultiHeadAttention,
    bidirectional_mask,
    causal_mask,
    combine_padding,
)
from bdlab.model.lab_model import LabModel
from bdlab.model.lora import LORA_TARGETS, attach_lora, lora_adapters
from bdlab.model.masking import (
    LayerMask,
    LayerMaskConfig,
    build_mask_config,
    check_exit_layer,
    skipped_fraction,
)
from bdlab.model.repetition import (
    compact_layout,
    extract_final_instance,
    gather_positions,
    repeat_tensor,
)
from bdlab.util import ops


class RMSNorm(torch.nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = torch.nn.Parameter(torch.ones(dim, dtype=ops.DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return ops.rms_normalize(x, self.weight, self.eps)


class DecoderBlock(torch.nn.Module):
    """Pre-norm residual block: attention, then a GELU feed-forward network."""

    def __init__(
        self,
        d_model: int,
        heads: int,
        d_ff: int,
        rope_base: float,
        dropout: float,
        norm_eps: float,
        dropout_stream: ops.DropoutStream,
    ):
        super().__init__()
        self.attention_norm = RMSNorm(d_model, norm_eps)
        self.attention = MultiHeadAttention(d_model, heads, rope_base)
        self.ff_norm = RMSNorm(d_model, norm_eps)
        self.ff_in = torch.nn.Linear(d_model, d_ff, dtype=ops.DTYPE)
        self.ff_out = torch.nn.Linear(d_ff, d_model, dtype=ops.DTYPE)
        self.dropout = dropout
        self.dropout_stream = dropout_stream

    def _dropout(self, x: Tensor) -> Tensor:
        if self.training and self.dropout > 0:
            return ops.dropout(x, self.dropout, self.dropout_stream.next_seed())
        return x

    def forward(self, x: Tensor, mask: Tensor) -> Tuple[Tensor, Tensor]:
        attended = self.attention(self.attention_norm(x), mask)
        h = ops.add(x, self._dropout(attended.values))
        ff = self.ff_out(ops.gelu(self.ff_in(self.ff_norm(h))))
        return ops.add(h, self._dropout(ff)), attended.weights


class SLModel(LabModel):
    r"""Decoder-only transformer for sequence labeling.

    Token embeddings run through a stack of N :class:`DecoderBlock`, whose masks are
    chosen per layer by a :class:`LayerMaskConfig`, and a final RMS norm. The
    classification head maps hidden states to label logits, the language modeling
    head to next-token logits.

    Sequence labeling inputs can be repeated (r repetitions, k = r + 1 instances);
    logits are then read from the last instance only. With an early exit at layer
    L, only layers 1..L-1 (1-indexed) are evaluated.

    """

    def __init__(
        self,
        config: Config,
        vocab_size: int,
        n_labels: int,
        configuration_key: Optional[str] = None,
        seed: int = 0,
    ):
        super().__init__(config, vocab_size, n_labels, configuration_key)
        self.d_model = self.get_option("d_model")
        self.heads = self.get_option("heads")
        self.n_layers = self.get_option("n_layers")
        self.pad_mode = self.check_option("pad_mode", ["repeat", "compact"])
        self.max_len = config.get("dataset.max_len")
        if self.n_layers < 1:
            raise ConfigurationError(
                "number of layers must be positive, found {}".format(self.n_layers)
            )
        if vocab_size < 1 or n_labels < 1:
            raise ConfigurationError("vocabulary and label set must be non-empty")
        dropout = self.get_option("dropout")
        if not 0.0 <= dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1), found {}".format(dropout))

        self.dropout_stream = ops.DropoutStream(seed)
        self.embedding = torch.nn.Parameter(
            torch.empty(vocab_size, self.d_model, dtype=ops.DTYPE)
        )
        self.blocks = torch.nn.ModuleList(
            [
                DecoderBlock(
                    self.d_model,
                    self.heads,
                    self.get_option("d_ff"),
                    self.get_option("rope_base"),
                    dropout,
                    self.get_option("norm_eps"),
                    self.dropout_stream,
                )
                for _ in range(self.n_layers)
            ]
        )
        self.final_norm = RMSNorm(self.d_model, self.get_option("norm_eps"))
        self.cls_head = torch.nn.Linear(self.d_model, n_labels, dtype=ops.DTYPE)
        self.lm_head = torch.nn.Linear(
            self.d_model, vocab_size, bias=False, dtype=ops.DTYPE
        )
        self.exit_layer: Optional[int] = None
        self.lora_attached = False
        self.initialize(seed)

    # -- SETUP -------------------------------------------------------------------------

    def initialize(self, seed: int):
        """Normal initialization of all weight matrices; zero biases, unit gains.

        Uses a private generator, so models of different seeds can be built
        concurrently.

        """
        generator = torch.Generator().manual_seed(seed)
        std = self.get_option("initialize_std")
        with torch.no_grad():
            for name, parameter in self.named_parameters():
                if name.endswith("norm.weight"):
                    parameter.fill_(1.0)
                elif name.endswith("bias"):
                    parameter.zero_()
                else:
                    parameter.normal_(0.0, std, generator=generator)

    def reset_head(self, seed: int):
        "Fresh classification head, initialized like the rest of the model."
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.cls_head.weight.normal_(
                0.0, self.get_option("initialize_std"), generator=generator
            )
            self.cls_head.bias.zero_()

    def set_early_exit(self, exit_layer: int):
        """Evaluate layers 1..L-1 only (1-indexed); layers L..N are skipped."""
        check_exit_layer(self.n_layers, exit_layer)
        self.exit_layer = exit_layer
        self.meta["exit_layer"] = exit_layer

    def clear_early_exit(self):
        self.exit_layer = None
        self.meta.pop("exit_layer", None)

    def active_blocks(self) -> List[DecoderBlock]:
        if self.exit_layer is None:
            return list(self.blocks)
        return list(self.blocks[: self.exit_layer - 1])

    def skipped_layer_fraction(self) -> float:
        if self.exit_layer is None:
            return 0.0
        return skipped_fraction(self.n_layers, self.exit_layer)

    def parameter_reduction(self) -> float:
        "Share of the decoder block parameters that are never evaluated."
        total = sum(p.numel() for p in self.blocks.parameters())
        active = sum(p.numel() for b in self.active_blocks() for p in b.parameters())
        return (total - active) / total

    def attach_lora(
        self,
        targets: List[str] = LORA_TARGETS,
        rank: int = 16,
        alpha: float = 16.0,
        dropout: float = 0.1,
        seed: int = 0,
    ):
        """Attach low-rank adapters to the attention projections of the active layers.

        Freezes every other parameter except those of the classification head.

        """
        attach_lora(
            self,
            list(targets),
            rank=rank,
            alpha=alpha,
            dropout=dropout,
            init_std=self.get_option("initialize_std"),
            generator=torch.Generator().manual_seed(seed),
        )
        self.meta["lora"] = dict(
            targets=list(targets),
            rank=rank,
            alpha=alpha,
            dropout=dropout,
            layers=len(self.active_blocks()),
        )

    def lora_adapters(self):
        return lora_adapters(self)

    def restore_structure(self, meta: Dict[str, Any]):
        lora = meta.get("lora")
        if lora is not None:
            # adapters exist only on the layers active when they were attached
            self.exit_layer = (
                None if lora["layers"] == self.n_layers else lora["layers"] + 1
            )
            self.attach_lora(
                lora["targets"], lora["rank"], lora["alpha"], lora["dropout"]
            )
        self.exit_layer = None
        if meta.get("exit_layer"):
            self.set_early_exit(meta["exit_layer"])

    def mask_config(self, strategy: str) -> LayerMaskConfig:
        return build_mask_config(strategy, self.n_layers)

    def check_labels(self, n_labels: int):
        if n_labels != self.n_labels:
            raise ConfigurationError(
                "classification head has {} outputs, but the data has {} labels".format(
                    self.n_labels, n_labels
                )
            )

    # -- FORWARD -----------------------------------------------------------------------

    def _prepare(self, ids: Tensor, pad_flags: Optional[Tensor]):
        ids = torch.as_tensor(ids, dtype=torch.long)
        unbatched = ids.dim() == 1
        if unbatched:
            ids = ids.unsqueeze(0)
        if pad_flags is None:
            pad_flags = torch.zeros_like(ids, dtype=torch.bool)
        else:
            pad_flags = torch.as_tensor(pad_flags, dtype=torch.bool)
            if unbatched:
                pad_flags = pad_flags.unsqueeze(0)
        if ids.dim() != 2 or pad_flags.shape != ids.shape:
            raise DimensionError(
                "ids of shape {} and padding flags of shape {} do not fit".format(
                    tuple(ids.shape), tuple(pad_flags.shape)
                )
            )
        if ids.shape[1] == 0:
            raise DimensionError("empty input sequence")
        if ids.shape[1] > self.max_len:
            raise DimensionError(
                "sequence length {} exceeds maximum length {}".format(
                    ids.shape[1], self.max_len
                )
            )
        return ids, pad_flags, unbatched

    def _run(
        self,
        x: Tensor,
        pad_flags: Tensor,
        per_layer: List[LayerMask],
        blocks: List[DecoderBlock],
    ) -> Tuple[Tensor, List[Tensor]]:
        seq_len = x.shape[1]
        masks = {}
        if LayerMask.Causal in per_layer:
            masks[LayerMask.Causal] = combine_padding(causal_mask(seq_len), pad_flags)
        if LayerMask.Bidirectional in per_layer:
            masks[LayerMask.Bidirectional] = combine_padding(
                bidirectional_mask(seq_len), pad_flags
            )
        attentions = []
        for block, layer_mask in zip(blocks, per_layer):
            x, weights = block(x, masks[layer_mask])
            attentions.append(weights)
        return self.final_norm(x), attentions

    def forward_sl(
        self,
        ids: Tensor,
        pad_flags: Optional[Tensor] = None,
        mask_config: Optional[LayerMaskConfig] = None,
        r: int = 0,
        inputs_embeds: Optional[Tensor] = None,
        output_attentions: bool = False,
    ):
        """Label logits of shape [batch, n, n_labels] (or [n, n_labels]).

        The input is repeated r times (see :mod:`bdlab.model.repetition`), each
        active layer uses its configured mask combined with padding, and the logits
        of the last instance are returned. If `inputs_embeds` is given, it replaces
        the embedding lookup of `ids`. With `output_attentions`, returns a pair of
        logits and the per-layer attention weights [batch, heads, k*n, k*n].

        """
        ids, pad_flags, unbatched = self._prepare(ids, pad_flags)
        if mask_config is None:
            mask_config = build_mask_config("masked", self.n_layers)
        if len(mask_config) != self.n_layers:
            raise ConfigurationError(
                "mask configuration has {} layers, model has {}".format(
                    len(mask_config), self.n_layers
                )
            )
        if r < 0:
            raise ConfigurationError("r must be non-negative, found {}".format(r))
        batch_size, n = ids.shape
        k = r + 1

        if inputs_embeds is None:
            x = ops.embedding(self.embedding, ids)
        else:
            x = inputs_embeds.unsqueeze(0) if unbatched else inputs_embeds
            if x.shape != (batch_size, n, self.d_model):
                raise DimensionError(
                    "input embeddings of shape {} do not fit ids of shape {}".format(
                        tuple(inputs_embeds.shape), tuple(ids.shape)
                    )
                )

        final_index = None
        if r > 0 and self.pad_mode == "compact":
            source, pad_flags, final_index = compact_layout(pad_flags, k)
            x = gather_positions(x, source)
        else:
            x = repeat_tensor(x, r, dim=1)
            pad_flags = repeat_tensor(pad_flags, r, dim=1)

        blocks = self.active_blocks()
        hidden, attentions = self._run(
            x, pad_flags, mask_config.per_layer[: len(blocks)], blocks
        )
        logits = self.cls_head(hidden)
        if final_index is None:
            logits = extract_final_instance(logits, n, k, dim=1)
        else:
            logits = gather_positions(logits, final_index)
        if unbatched:
            logits = logits[0]
            attentions = [a[0] for a in attentions]
        if output_attentions:
            return logits, attentions
        return logits

    def forward_lm(self, ids: Tensor, pad_flags: Optional[Tensor] = None) -> Tensor:
        """Next-token logits [batch, n, vocab_size] under causal masking at full depth."""
        ids, pad_flags, unbatched = self._prepare(ids, pad_flags)
        x = ops.embedding(self.embedding, ids)
        blocks = list(self.blocks)
        hidden, _ = self._run(x, pad_flags, [LayerMask.Causal] * len(blocks), blocks)
        logits = self.lm_head(hidden)
        return logits[0] if unbatched else logits

    def forward(self, ids, pad_flags=None, mask_config=None, r=0, **kwargs):
        return self.forward_sl(ids, pad_flags, mask_config, r, **kwargs)
