"""Sequence repetition.

An input of length n is concatenated with itself so that it occurs k = r + 1 times.
Under a causal mask, tokens of the last instance attend to complete copies of the
sequence in the earlier instances. Viewed as a k x k grid of n x n blocks, the
attention weights of a causal layer are zero above the block diagonal, lower
triangular on it, and dense below it.

"""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Sequence, Tuple

import torch
from torch import Tensor

from bdlab.misc import ContractError, DimensionError


@dataclass
class RepeatedSequence:
    #: token ids of length k * n
    ids: List[int]
    #: length of one instance (pads included)
    n: int
    #: number of instances
    k: int

    @property
    def r(self) -> int:
        return self.k - 1


def repeat(ids: Sequence[int], r: int) -> RepeatedSequence:
    """Concatenate `ids` with itself r times, pads included."""
    if len(ids) == 0:
        raise DimensionError("cannot repeat an empty sequence")
    if r < 0:
        raise ValueError("number of repetitions must be non-negative, found {}".format(r))
    return RepeatedSequence(ids=list(ids) * (r + 1), n=len(ids), k=r + 1)


def repeat_tensor(x: Tensor, r: int, dim: int = 1) -> Tensor:
    "Tensor version of :func:`repeat` along dimension `dim`."
    if r < 0:
        raise ValueError("number of repetitions must be non-negative, found {}".format(r))
    if r == 0:
        return x
    return torch.cat([x] * (r + 1), dim=dim)


def compact_layout(pad_flags: Tensor, k: int) -> Tuple[Tensor, Tensor, Tensor]:
    """Index layout that repeats only the real tokens of right-padded sequences.

    For a row of length n with m real tokens, the result row has length k*n: the m
    real tokens k times, followed by all k*(n-m) pads.

    Returns ``(source, pad_flags, final_index)``: `source` [batch, k*n] holds the
    original position of every new position, `pad_flags` [batch, k*n] marks the
    pads, and `final_index` [batch, n] maps original position j to its position in
    the last instance (pads map to pad positions).

    """
    pad_flags = torch.as_tensor(pad_flags, dtype=torch.bool)
    if pad_flags.dim() != 2:
        raise DimensionError("padding flags must have shape [batch, n]")
    if (pad_flags[:, :-1] & ~pad_flags[:, 1:]).any():
        raise ContractError("compact repetition needs right-padded sequences")
    n = pad_flags.shape[1]
    lengths = (~pad_flags).sum(dim=1, keepdim=True)  # [batch, 1]
    positions = torch.arange(k * n).unsqueeze(0)  # [1, k*n]
    new_pad = positions >= k * lengths
    pad_source = (lengths + (positions - k * lengths)).clamp(max=n - 1)
    source = torch.where(new_pad, pad_source, positions % lengths.clamp(min=1))

    original = torch.arange(n).unsqueeze(0)
    final_index = torch.where(
        original < lengths,
        (k - 1) * lengths + original,
        k * lengths + (original - lengths),
    )
    return source, new_pad, final_index


def gather_positions(x: Tensor, index: Tensor) -> Tensor:
    "Rows ``x[b, index[b, j]]`` for `x` of shape [batch, seq, ...]."
    index = index.to(torch.long)
    expanded = index.reshape(index.shape + (1,) * (x.dim() - 2)).expand(
        index.shape + x.shape[2:]
    )
    return torch.gather(x, 1, expanded)


def extract_final_instance(per_position: Tensor, n: int, k: int, dim: int = 0) -> Tensor:
    """Rows (k-1)*n .. k*n-1 of dimension `dim`."""
    if n < 1 or k < 1 or per_position.shape[dim] != k * n:
        raise DimensionError(
            "dimension {} of shape {} does not hold k={} instances of length n={}".format(
                dim, tuple(per_position.shape), k, n
            )
        )
    return per_position.narrow(dim, (k - 1) * n, n)


def bidirectional_share(k: int) -> float:
    """Share of the nonzero attention blocks of a k-instance input that are dense.

    Out of k(k+1)/2 nonzero blocks, the k diagonal blocks are lower triangular, the
    rest are dense: (k(k+1)/2 - k) / (k(k+1)/2) = (k-1)/(k+1).

    """
    if k < 1:
        raise ValueError("number of instances must be positive, found {}".format(k))
    return (k - 1) / (k + 1)


# -- BLOCK STRUCTURE -------------------------------------------------------------------


class BlockClass(Enum):
    Dense = "Dense"
    LowerTriangular = "LowerTriangular"
    Zero = "Zero"
    Irregular = "Irregular"

    @staticmethod
    def expected(i: int, j: int) -> "BlockClass":
        "Class of block (i, j) under causal attention over a repeated input."
        if i < j:
            return BlockClass.Zero
        elif i == j:
            return BlockClass.LowerTriangular
        return BlockClass.Dense


@dataclass
class BlockReport:
    k: int
    n: int
    classes: List[List[BlockClass]]
    share_bidirectional: float

    @property
    def verified(self) -> bool:
        "Whether every block has the class expected for its position."
        return all(
            self.classes[i][j] == BlockClass.expected(i, j)
            for i in range(self.k)
            for j in range(self.k)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "n": self.n,
            "classes": [[c.value for c in row] for row in self.classes],
            "share_bidirectional": self.share_bidirectional,
            "verified": self.verified,
        }


def _classify(
    block: Tensor, expected: BlockClass, zero_tol: float, positive_tol: float
) -> BlockClass:
    n = block.shape[0]
    strict_upper = torch.ones(n, n, dtype=torch.bool).triu(diagonal=1)
    magnitude = block.abs()
    candidates = []
    if bool((magnitude <= zero_tol).all()):
        candidates.append(BlockClass.Zero)
    if bool((magnitude[strict_upper] <= zero_tol).all()) and bool(
        (block[~strict_upper] >= positive_tol).any()
    ):
        candidates.append(BlockClass.LowerTriangular)
    if bool((block >= positive_tol).all()):
        candidates.append(BlockClass.Dense)
    if expected in candidates:
        # only ambiguous for n == 1
        return expected
    return candidates[0] if candidates else BlockClass.Irregular


def classify_blocks(
    weights: Tensor,
    n: int,
    k: int,
    zero_tol: float = 0.0,
    positive_tol: float = 1e-300,
) -> BlockReport:
    """Partition a [k*n, k*n] weight matrix into k x k blocks and classify each.

    A block is Zero if all entries are at most `zero_tol` in magnitude,
    LowerTriangular if its strict upper triangle is Zero and some other entry is
    at least `positive_tol`, Dense if all entries are at least `positive_tol`, and
    Irregular otherwise.

    """
    if weights.dim() != 2 or n < 1 or k < 1 or weights.shape != (k * n, k * n):
        raise DimensionError(
            "weights of shape {} cannot be split into {}x{} blocks of size {}".format(
                tuple(weights.shape), k, k, n
            )
        )
    weights = weights.detach()
    classes = [
        [
            _classify(
                weights[i * n : (i + 1) * n, j * n : (j + 1) * n],
                BlockClass.expected(i, j),
                zero_tol,
                positive_tol,
            )
            for j in range(k)
        ]
        for i in range(k)
    ]
    return BlockReport(
        k=k, n=n, classes=classes, share_bidirectional=bidirectional_share(k)
    )
