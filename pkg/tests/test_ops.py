import math

import pytest
import torch

from bdlab.misc import ContractError, DimensionError, EmptyLossError
from bdlab.util import ops
from bdlab.util.gradcheck import fd_check, numerical_grad


def _randn(generator, *shape):
    return torch.randn(*shape, generator=generator, dtype=ops.DTYPE)


def _matmul_oracle(a, b):
    m, p = a.shape
    _, q = b.shape
    result = [[0.0] * q for _ in range(m)]
    for i in range(m):
        for j in range(q):
            s = 0.0
            for t in range(p):
                s += float(a[i, t]) * float(b[t, j])
            result[i][j] = s
    return torch.tensor(result, dtype=ops.DTYPE)


class TestMatmul:
    def test_identity(self):
        x = ops.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert torch.equal(ops.matmul(torch.eye(3, dtype=ops.DTYPE), x), x)

    def test_hand_arithmetic(self):
        a = ops.tensor([[1.0, 2.0], [3.0, 4.0]])
        b = ops.tensor([[1.0], [1.0]])
        assert ops.matmul(a, b).tolist() == [[3.0], [7.0]]

    def test_matches_triple_loop(self):
        g = torch.Generator().manual_seed(0)
        a = torch.rand(4, 5, generator=g, dtype=ops.DTYPE) * 20 - 10
        b = torch.rand(5, 3, generator=g, dtype=ops.DTYPE) * 20 - 10
        assert torch.allclose(ops.matmul(a, b), _matmul_oracle(a, b), rtol=0, atol=1e-12)

    def test_broadcasts_batch_dimensions(self):
        g = torch.Generator().manual_seed(1)
        a = _randn(g, 2, 3, 4, 5)
        b = _randn(g, 5, 2)
        assert ops.matmul(a, b).shape == (2, 3, 4, 2)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError) as e:
            ops.matmul(torch.zeros(2, 3, dtype=ops.DTYPE), torch.zeros(4, 5, dtype=ops.DTYPE))
        assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)

    def test_batch_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(torch.zeros(2, 3, 4, dtype=ops.DTYPE), torch.zeros(3, 4, 5, dtype=ops.DTYPE))


class TestSoftmax:
    def test_symmetric(self):
        assert ops.softmax_lastdim(ops.tensor([0.0, 0.0])).tolist() == [0.5, 0.5]

    def test_masked_entry_is_exact_zero(self):
        y = ops.softmax_lastdim(ops.tensor([5.0, ops.NEG_INF]))
        assert y[0].item() == 1.0
        assert y[1].item() == 0.0

    def test_matches_formula(self):
        x = [1.0, 2.0, 3.0]
        denominator = sum(math.exp(v) for v in x)
        expected = torch.tensor([math.exp(v) / denominator for v in x], dtype=ops.DTYPE)
        assert torch.allclose(ops.softmax_lastdim(ops.tensor(x)), expected, rtol=0, atol=1e-12)

    def test_rows_sum_to_one(self):
        g = torch.Generator().manual_seed(2)
        x = _randn(g, 6, 7) * 30
        mask = torch.rand(6, 7, generator=g) < 0.4
        mask[:, 0] = False
        x = x.masked_fill(mask, ops.NEG_INF)
        y = ops.softmax_lastdim(x)
        assert torch.all((y >= 0) & (y <= 1))
        assert torch.allclose(y.sum(-1), torch.ones(6, dtype=ops.DTYPE), rtol=0, atol=1e-12)
        assert torch.all(y[mask] == 0.0)

    def test_fully_masked_row(self):
        with pytest.raises(ContractError):
            ops.softmax_lastdim(ops.tensor([[0.0, 1.0], [ops.NEG_INF, ops.NEG_INF]]))

    def test_large_logits_are_stable(self):
        y = ops.softmax_lastdim(ops.tensor([1000.0, 1000.0]))
        assert y.tolist() == [0.5, 0.5]


class TestCrossEntropy:
    def test_certain_prediction(self):
        logits = ops.tensor([[0.0, 1e4, 0.0]])
        assert ops.cross_entropy(logits, [1], [True]).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform(self):
        loss = ops.cross_entropy(torch.zeros(3, 4, dtype=ops.DTYPE), [0, 1, 3], [True] * 3)
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_inactive_positions_are_ignored(self):
        logits = ops.tensor([[0.3, -0.2], [1e6, -1e6], [0.1, 0.7]]).requires_grad_(True)
        loss = ops.cross_entropy(logits, [0, 1, 1], [True, False, True])
        reference = ops.cross_entropy(logits[[0, 2]].detach(), [0, 1], [True, True])
        assert loss.item() == reference.item()
        ops.backward(loss)
        assert torch.all(logits.grad[1] == 0.0)

    def test_sum_reduction(self):
        logits = torch.zeros(2, 4, dtype=ops.DTYPE)
        loss = ops.cross_entropy(logits, [0, 1], [True, True], reduction="sum")
        assert loss.item() == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_no_active_positions(self):
        with pytest.raises(EmptyLossError):
            ops.cross_entropy(torch.zeros(2, 3, dtype=ops.DTYPE), [0, 0], [False, False])

    def test_target_out_of_range(self):
        with pytest.raises(ContractError):
            ops.cross_entropy(torch.zeros(1, 3, dtype=ops.DTYPE), [3], [True])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.cross_entropy(torch.zeros(2, 3, dtype=ops.DTYPE), [0], [True, True])


class TestBackward:
    def test_sum_gives_ones(self):
        x = ops.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], requires_grad=True)
        ops.backward(x.sum())
        assert torch.equal(x.grad, torch.ones(2, 3, dtype=ops.DTYPE))

    def test_square(self):
        x = ops.tensor([1.0, 2.0], requires_grad=True)
        ops.backward(ops.multiply(x, x).sum())
        assert x.grad.tolist() == [2.0, 4.0]

    def test_repeated_calls_accumulate(self):
        x = ops.tensor([1.0, 2.0], requires_grad=True)
        root = ops.multiply(x, x).sum()
        ops.backward(root)
        ops.backward(root)
        assert x.grad.tolist() == [4.0, 8.0]

    def test_deterministic_after_zeroing(self):
        g = torch.Generator().manual_seed(3)
        x = _randn(g, 4, 5).requires_grad_(True)
        w = _randn(g, 5, 5)
        root = ops.gelu(ops.matmul(x, w)).pow(2).sum()
        ops.backward(root)
        first = x.grad.clone()
        x.grad.zero_()
        ops.backward(root)
        assert torch.equal(first, x.grad)

    def test_non_scalar_root(self):
        x = ops.tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            ops.backward(x * 2)

    def test_root_without_graph(self):
        with pytest.raises(ContractError):
            ops.backward(ops.tensor(1.0))


class TestGraph:
    def test_inputs_precede_nodes(self):
        g = torch.Generator().manual_seed(4)
        x = _randn(g, 3, 4).requires_grad_(True)
        w = _randn(g, 4, 4).requires_grad_(True)
        h = ops.matmul(x, w)
        root = ops.add(ops.gelu(h), h).sum()
        graph = ops.Graph.record(root)
        for position, node in enumerate(graph.nodes):
            assert all(i < position for i in node.inputs)
        # h is shared but recorded once
        assert len({id(node.fn) for node in graph.nodes}) == len(graph)
        assert len(graph.leaves()) == 2
        assert graph.backward_order()[0].fn is root.grad_fn

    def test_leaf_has_empty_graph(self):
        assert len(ops.Graph.record(ops.tensor([1.0]))) == 0


class TestPrimitives:
    def test_embedding(self):
        table = ops.tensor([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        assert ops.embedding(table, torch.tensor([[2, 0]])).tolist() == [
            [[4.0, 5.0], [0.0, 1.0]]
        ]
        with pytest.raises(IndexError):
            ops.embedding(table, torch.tensor([3]))

    def test_rms_normalize(self):
        y = ops.rms_normalize(ops.tensor([3.0, 4.0]), eps=0.0)
        rms = math.sqrt((9 + 16) / 2)
        assert y.tolist() == pytest.approx([3 / rms, 4 / rms], abs=1e-15)

    def test_gelu_is_erf_based(self):
        x = 0.7
        expected = 0.5 * x * (1 + math.erf(x / math.sqrt(2)))
        assert ops.gelu(ops.tensor([x])).item() == pytest.approx(expected, abs=1e-15)

    def test_dropout_seeded(self):
        x = torch.ones(50, dtype=ops.DTYPE)
        a = ops.dropout(x, 0.5, seed=7)
        b = ops.dropout(x, 0.5, seed=7)
        c = ops.dropout(x, 0.5, seed=8)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)
        assert set(a.tolist()) <= {0.0, 2.0}
        assert torch.equal(ops.dropout(x, 0.5, seed=7, training=False), x)

    def test_dropout_stream(self):
        first = ops.DropoutStream(11)
        second = ops.DropoutStream(11)
        seeds = [first.next_seed() for _ in range(5)]
        assert seeds == [second.next_seed() for _ in range(5)]
        assert len(set(seeds)) == 5
        first.reset(11)
        assert first.next_seed() == seeds[0]

    def test_slice_and_concat(self):
        x = ops.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert ops.slice_along(x, 0, 1, 2).tolist() == [[3.0, 4.0], [5.0, 6.0]]
        assert ops.concat([x, x], dim=0).shape == (6, 2)
        with pytest.raises(DimensionError):
            ops.slice_along(x, 0, 2, 2)
        with pytest.raises(DimensionError):
            ops.concat([x, torch.zeros(2, 3, dtype=ops.DTYPE)], dim=0)

    def test_reshape_and_transpose(self):
        x = ops.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        assert ops.transpose_last_two(x).tolist() == [[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]
        assert ops.reshape(x, [3, 2]).tolist() == [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
        with pytest.raises(DimensionError):
            ops.reshape(x, [4, 2])
        with pytest.raises(DimensionError):
            ops.add(x, torch.zeros(3, 2, dtype=ops.DTYPE))


# each entry maps (x, generator) to a tensor; x has shape [3, 4]
PRIMITIVES = {
    "matmul": lambda x, g: ops.matmul(x, _randn(g, 4, 3)),
    "add": lambda x, g: ops.add(x, _randn(g, 3, 4)),
    "multiply": lambda x, g: ops.multiply(x, _randn(g, 3, 4)),
    "scale": lambda x, g: ops.scale(x, 1.7),
    "transpose": lambda x, g: ops.transpose_last_two(x),
    "reshape": lambda x, g: ops.reshape(x, [2, 6]),
    "concat": lambda x, g: ops.concat([x, ops.multiply(x, x)], dim=1),
    "slice": lambda x, g: ops.slice_along(x, 1, 1, 2),
    "embedding": lambda x, g: ops.embedding(x, torch.tensor([2, 0, 2, 1])),
    "rms_normalize": lambda x, g: ops.rms_normalize(x, weight=_randn(g, 4)),
    "gelu": lambda x, g: ops.gelu(x),
    "dropout": lambda x, g: ops.dropout(x, 0.3, seed=5),
    "softmax": lambda x, g: ops.softmax_lastdim(x),
    "cross_entropy": lambda x, g: ops.cross_entropy(
        x, [1, 3, 0], [True, False, True]
    ).reshape(1, 1),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("composition", [0, 1, 2])
def test_primitive_gradients(name, composition):
    g = torch.Generator().manual_seed(100 + composition)
    x = _randn(g, 3, 4)
    pre = _randn(g, 4, 4) * 0.5 + torch.eye(4, dtype=ops.DTYPE)
    state = g.get_state()

    def f(x):
        g.set_state(state)
        y = PRIMITIVES[name](ops.matmul(x, pre), g)
        if composition == 1:
            y = ops.gelu(y)
        elif composition == 2:
            y = ops.multiply(y, y)
        return ops.multiply(y, _randn(g, *y.shape)).sum()

    assert fd_check(f, x, h=1e-6) < 1e-5


class TestFdCheck:
    def test_sum_of_squares(self):
        g = torch.Generator().manual_seed(6)
        x = _randn(g, 5) + 3.0
        assert fd_check(lambda x: (x * x).sum(), x, h=1e-6) < 1e-7

    def test_constant(self):
        x = ops.tensor([1.0, 2.0])
        assert fd_check(lambda x: ops.tensor(3.0), x, h=1e-6) == 0.0

    def test_numerical_grad(self):
        x = ops.tensor([1.0, -2.0])
        grad = numerical_grad(lambda x: (x ** 3).sum(), x, h=1e-6)
        assert grad.tolist() == pytest.approx([3.0, 12.0], abs=1e-6)

    def test_invalid_step(self):
        with pytest.raises(ValueError):
            fd_check(lambda x: x.sum(), ops.tensor([1.0]), h=0.0)

    def test_detects_wrong_gradient(self):
        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x * 2

            @staticmethod
            def backward(ctx, grad):
                return grad * 3

        assert fd_check(lambda x: Wrong.apply(x).sum(), ops.tensor([1.0, 2.0])) > 0.1
