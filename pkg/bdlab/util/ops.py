"""Tensor primitives of the laboratory.

All tensors are 64-bit (``torch.float64``) and take part in PyTorch's reverse-mode
autodiff graph. The functions below wrap the corresponding torch operations and
enforce the contracts the rest of the code base relies on: shape errors name
both operands, masked softmax entries are exactly zero, a loss over zero active
positions is an error, and backward starts from a scalar.

"""
import threading
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from bdlab.misc import ContractError, DimensionError, EmptyLossError

DTYPE = torch.float64

#: additive mask value of unattendable positions
NEG_INF = float("-inf")


def tensor(data, requires_grad: bool = False) -> Tensor:
    "Create a fresh 64-bit leaf tensor from (nested) numbers or an array."
    result = torch.as_tensor(data, dtype=DTYPE).clone()
    return result.requires_grad_(requires_grad)


def _shape(x: Tensor):
    return tuple(x.shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor, batch_only=False):
    shape_a = a.shape[:-2] if batch_only else a.shape
    shape_b = b.shape[:-2] if batch_only else b.shape
    try:
        torch.broadcast_shapes(shape_a, shape_b)
    except RuntimeError:
        raise DimensionError(
            "cannot {} tensors of shape {} and {}".format(op, _shape(a), _shape(b))
        )


# -- ARITHMETIC ------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two dimensions, broadcasting leading ones."""
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            "cannot multiply tensors of shape {} and {}".format(_shape(a), _shape(b))
        )
    _broadcast_check("multiply", a, b, batch_only=True)
    return torch.matmul(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    return a + b


def multiply(a: Tensor, b: Tensor) -> Tensor:
    "Elementwise product."
    _broadcast_check("multiply elementwise", a, b)
    return a * b


def scale(x: Tensor, c: float) -> Tensor:
    return x * c


def transpose_last_two(x: Tensor) -> Tensor:
    if x.dim() < 2:
        raise DimensionError("cannot transpose tensor of shape {}".format(_shape(x)))
    return x.transpose(-2, -1)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        return x.reshape(tuple(shape))
    except RuntimeError:
        raise DimensionError(
            "cannot reshape tensor of shape {} to {}".format(_shape(x), tuple(shape))
        )


def concat(tensors: Sequence[Tensor], dim: int = 0) -> Tensor:
    if len(tensors) == 0:
        raise DimensionError("cannot concatenate an empty list of tensors")
    try:
        return torch.cat(list(tensors), dim=dim)
    except RuntimeError:
        raise DimensionError(
            "cannot concatenate tensors of shapes {} along dim {}".format(
                [_shape(t) for t in tensors], dim
            )
        )


def slice_along(x: Tensor, dim: int, start: int, length: int) -> Tensor:
    "Rows ``start .. start+length-1`` of dimension `dim`."
    if start < 0 or length < 0 or start + length > x.shape[dim]:
        raise DimensionError(
            "slice [{}, {}) out of range for dim {} of tensor of shape {}".format(
                start, start + length, dim, _shape(x)
            )
        )
    return x.narrow(dim, start, length)


def embedding(table: Tensor, ids: Tensor) -> Tensor:
    "Gather rows of `table` (shape [vocab, dim]) for integer `ids` of any shape."
    if table.dim() != 2:
        raise DimensionError(
            "embedding table must be 2-dimensional, found {}".format(_shape(table))
        )
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() > 0 and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            "token id out of range [0, {}): {}".format(
                table.shape[0], ids[(ids < 0) | (ids >= table.shape[0])][0].item()
            )
        )
    return F.embedding(ids, table)


# -- NONLINEARITIES AND NORMALIZATION --------------------------------------------------


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last dimension.

    Entries equal to -inf map to exactly 0. A row consisting of -inf only has no
    distribution and raises :class:`ContractError`.

    """
    masked = torch.isneginf(x)
    if masked.all(dim=-1).any():
        raise ContractError("softmax over a fully masked row")
    # torch.softmax subtracts the row maximum before exponentiating
    return torch.softmax(x, dim=-1).masked_fill(masked, 0.0)


def rms_normalize(
    x: Tensor, weight: Optional[Tensor] = None, eps: float = 1e-6
) -> Tensor:
    "x / sqrt(mean(x^2) + eps) over the last dimension, optionally times a gain."
    result = x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps)
    if weight is not None:
        if weight.shape != x.shape[-1:]:
            raise DimensionError(
                "norm gain of shape {} does not fit input of shape {}".format(
                    _shape(weight), _shape(x)
                )
            )
        result = result * weight
    return result


def gelu(x: Tensor) -> Tensor:
    "Exact (erf-based) GELU."
    return F.gelu(x)


def dropout(x: Tensor, p: float, seed: int, training: bool = True) -> Tensor:
    """Inverted dropout whose mask is a pure function of `seed`.

    Identity when not training or ``p == 0``.

    """
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1), found {}".format(p))
    if not training or p == 0.0:
        return x
    generator = torch.Generator().manual_seed(seed)
    keep = torch.rand(x.shape, generator=generator, dtype=DTYPE) >= p
    return x * keep / (1.0 - p)


class DropoutStream:
    """Counter-based source of dropout seeds.

    The i-th call of :meth:`next_seed` on a stream created with seed s returns the
    same value in every run, independently of other streams.

    """

    def __init__(self, seed: int = 0):
        self._lock = threading.Lock()
        self.reset(seed)

    def reset(self, seed: int):
        with self._lock:
            self.seed = seed
            self.counter = 0

    def next_seed(self) -> int:
        with self._lock:
            counter = self.counter
            self.counter += 1
        state = np.random.SeedSequence([self.seed, counter]).generate_state(
            1, dtype=np.uint64
        )
        return int(state[0])


# -- LOSS AND BACKWARD -----------------------------------------------------------------


def cross_entropy(
    logits: Tensor,
    targets: Union[Tensor, Sequence[int]],
    active: Union[Tensor, Sequence[bool]],
    reduction: str = "mean",
) -> Tensor:
    """Cross-entropy over the active positions.

    `logits` has shape [..., c]; `targets` and `active` have the leading shape of
    `logits`. Inactive positions contribute nothing to the value or the gradient.
    With ``reduction="sum"`` the summed negative log-likelihood is returned.

    """
    targets = torch.as_tensor(targets, dtype=torch.long)
    active = torch.as_tensor(active, dtype=torch.bool)
    if targets.shape != logits.shape[:-1] or active.shape != logits.shape[:-1]:
        raise DimensionError(
            "logits of shape {} do not fit targets {} and active mask {}".format(
                _shape(logits), _shape(targets), _shape(active)
            )
        )
    num_classes = logits.shape[-1]
    flat_active = active.reshape(-1)
    if not flat_active.any():
        raise EmptyLossError("cross-entropy over zero active positions")
    selected = logits.reshape(-1, num_classes)[flat_active]
    selected_targets = targets.reshape(-1)[flat_active]
    if selected_targets.min() < 0 or selected_targets.max() >= num_classes:
        raise ContractError(
            "target outside [0, {}) at an active position".format(num_classes)
        )
    nll = -torch.log_softmax(selected, dim=-1).gather(
        1, selected_targets.unsqueeze(1)
    ).squeeze(1)
    if reduction == "mean":
        return nll.mean()
    elif reduction == "sum":
        return nll.sum()
    raise ValueError("unknown reduction {}".format(reduction))


def backward(root: Tensor, retain_graph: bool = True):
    """Populate ``.grad`` of all leaves that require gradients.

    Gradients accumulate over repeated calls until they are zeroed.

    """
    if root.numel() != 1:
        raise ContractError(
            "backward needs a scalar root, found shape {}".format(_shape(root))
        )
    if root.grad_fn is None and not root.requires_grad:
        raise ContractError("backward root is not part of a recorded graph")
    root.backward(retain_graph=retain_graph)


# -- GRAPH INSPECTION ------------------------------------------------------------------


@dataclass
class GraphNode:
    #: name of the recorded operation (e.g. "MmBackward0", "AccumulateGrad")
    name: str
    #: positions of the input nodes in :attr:`Graph.nodes`
    inputs: List[int] = field(default_factory=list)
    #: the autograd node; its backward rule maps output gradients to inputs
    fn: Any = None


class Graph:
    """Topologically ordered view of the autograd graph that produced a tensor.

    Every node appears once and after all of its inputs. Leaves that require
    gradients appear as ``AccumulateGrad`` nodes.

    """

    def __init__(self, nodes: List[GraphNode]):
        self.nodes = nodes

    @staticmethod
    def record(root: Tensor) -> "Graph":
        if root.grad_fn is None:
            return Graph([])

        def children(fn):
            return [child for child, _ in fn.next_functions if child is not None]

        index = {}
        nodes: List[GraphNode] = []
        visited = {id(root.grad_fn)}
        stack = [(root.grad_fn, iter(children(root.grad_fn)))]
        while stack:
            fn, pending = stack[-1]
            child = next(pending, None)
            if child is None:
                stack.pop()
                index[id(fn)] = len(nodes)
                nodes.append(
                    GraphNode(
                        name=fn.name(),
                        inputs=[index[id(c)] for c in children(fn)],
                        fn=fn,
                    )
                )
            elif id(child) not in visited:
                visited.add(id(child))
                stack.append((child, iter(children(child))))
        return Graph(nodes)

    def __len__(self):
        return len(self.nodes)

    def backward_order(self) -> List[GraphNode]:
        "Nodes in the order a backward pass visits them."
        return list(reversed(self.nodes))

    def leaves(self) -> List[GraphNode]:
        return [node for node in self.nodes if len(node.inputs) == 0]
