"""Attention structure of a decoder on a repeated input.

Runs one forward pass of a random input of n tokens repeated into k instances
through an all-causal model and records the attention weights of every layer and
head, together with the block classification of each weight matrix.

"""
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import pandas as pd
import torch

from bdlab import Config
from bdlab.misc import ConfigurationError
from bdlab.model import LabModel
from bdlab.model.repetition import BlockReport, bidirectional_share, classify_blocks
from bdlab.util.io import load_checkpoint
from bdlab.util.synthetic import inventory
from bdlab.util.tokenizer import ChunkTokenizer


@dataclass
class MaskAnalysis:
    n: int
    k: int
    #: one row per (layer, head, query); key columns "0".."k*n-1"
    attention: pd.DataFrame
    #: block reports indexed by [layer][head]
    reports: List[List[BlockReport]]

    @property
    def verified(self) -> bool:
        return all(report.verified for layer in self.reports for report in layer)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "k": self.k,
            "share_bidirectional": bidirectional_share(self.k),
            "verified": self.verified,
            "layers": [[report.to_dict() for report in layer] for layer in self.reports],
        }

    def save(self, folder: str) -> List[str]:
        os.makedirs(folder, exist_ok=True)
        stem = os.path.join(folder, "attention_n{}_k{}".format(self.n, self.k))
        self.attention.to_csv(stem + ".csv", index=False, float_format="%.17g")
        with open(stem + ".json", "w", encoding="utf-8") as file:
            json.dump(self.to_dict(), file, sort_keys=True, indent=2)
            file.write("\n")
        return [stem + ".csv", stem + ".json"]


def analysis_model(config: Config, checkpoint_file: Optional[str] = None) -> LabModel:
    "Model of a checkpoint, or a random model over the synthetic vocabulary."
    if checkpoint_file:
        return LabModel.create_from(load_checkpoint(checkpoint_file))
    tokenizer = ChunkTokenizer.build(inventory(), config.get("dataset.chunk"))
    return LabModel.create(config, len(tokenizer), 2, seed=config.get("analyze.seed"))


@torch.no_grad()
def analyze_mask(
    model: LabModel,
    n: int,
    k: int,
    seed: int = 0,
    zero_tol: float = 0.0,
    positive_tol: float = 1e-300,
) -> MaskAnalysis:
    if n < 1 or k < 1:
        raise ConfigurationError("n and k must be positive, found n={}, k={}".format(n, k))
    if k * n > model.max_len:
        raise ConfigurationError(
            "repeated length k*n = {} exceeds the maximum length {}".format(
                k * n, model.max_len
            )
        )
    generator = torch.Generator().manual_seed(seed)
    ids = torch.randint(2, model.vocab_size, (n,), generator=generator)
    model.eval()
    _, attentions = model.forward_sl(
        ids, mask_config=model.mask_config("repeat"), r=k - 1, output_attentions=True
    )

    rows, reports = [], []
    for layer, weights in enumerate(attentions):
        layer_reports = []
        for head in range(weights.shape[0]):
            matrix = weights[head]
            layer_reports.append(
                classify_blocks(matrix, n, k, zero_tol, positive_tol)
            )
            for query in range(k * n):
                row = {"layer": layer, "head": head, "query": query}
                row.update(
                    {str(key): float(matrix[query, key]) for key in range(k * n)}
                )
                rows.append(row)
        reports.append(layer_reports)
    return MaskAnalysis(n, k, pd.DataFrame(rows), reports)
