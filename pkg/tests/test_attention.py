import pytest
import torch

from bdlab.misc import ConfigurationError, DimensionError
from bdlab.model.attention import (
    MultiHeadAttention,
    attend,
    bidirectional_mask,
    causal_mask,
    combine_padding,
    rope_rotate,
)
from bdlab.util import ops


def _attention(seed=0, d_model=8, heads=2):
    torch.manual_seed(seed)
    module = MultiHeadAttention(d_model, heads)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.normal_(0.0, 0.5, generator=generator)
    return module


class TestMasks:
    def test_causal(self):
        mask = causal_mask(3)
        assert mask[0, 0] == 0 and mask[2, 0] == 0 and mask[1, 1] == 0
        assert mask[0, 1] == float("-inf") and mask[1, 2] == float("-inf")

    def test_bidirectional(self):
        assert torch.equal(bidirectional_mask(4), torch.zeros(4, 4, dtype=ops.DTYPE))

    def test_empty(self):
        with pytest.raises(DimensionError):
            causal_mask(0)
        with pytest.raises(DimensionError):
            bidirectional_mask(0)

    def test_padding(self):
        mask = combine_padding(bidirectional_mask(3), [False, False, True])
        assert mask[0, 2] == float("-inf") and mask[1, 2] == float("-inf")
        assert mask[0, 1] == 0
        # pad rows attend to themselves only
        assert mask[2, 2] == 0
        assert mask[2, 0] == float("-inf") and mask[2, 1] == float("-inf")

    def test_padding_shape(self):
        with pytest.raises(DimensionError):
            combine_padding(causal_mask(3), [False, True])


class TestRope:
    def test_position_zero_is_identity(self):
        x = torch.randn(1, 4, dtype=ops.DTYPE)
        assert torch.allclose(rope_rotate(x), x)

    def test_preserves_norm(self):
        x = torch.randn(5, 6, dtype=ops.DTYPE)
        assert torch.allclose(rope_rotate(x).norm(dim=-1), x.norm(dim=-1))

    def test_relative_scores(self):
        # q_p . k_s depends only on p - s
        g = torch.Generator().manual_seed(0)
        q = torch.randn(1, 8, generator=g, dtype=ops.DTYPE)
        k = torch.randn(1, 8, generator=g, dtype=ops.DTYPE)

        def score(p, s):
            return float(
                rope_rotate(q, positions=torch.tensor([float(p)]))
                @ rope_rotate(k, positions=torch.tensor([float(s)])).T
            )

        assert score(5, 3) == pytest.approx(score(12, 10), abs=1e-12)

    def test_odd_dimension(self):
        with pytest.raises(ConfigurationError):
            rope_rotate(torch.zeros(3, 5, dtype=ops.DTYPE))


class TestAttention:
    def test_rows_sum_to_one(self):
        module = _attention()
        x = torch.randn(5, 8, dtype=ops.DTYPE)
        out = module(x, causal_mask(5))
        assert out.values.shape == (5, 8)
        assert out.weights.shape == (2, 5, 5)
        assert torch.allclose(out.weights.sum(-1), torch.ones(2, 5, dtype=ops.DTYPE))

    def test_masked_entries_exactly_zero(self):
        module = _attention()
        out = module(torch.randn(6, 8, dtype=ops.DTYPE), causal_mask(6))
        upper = torch.ones(6, 6, dtype=torch.bool).triu(diagonal=1)
        assert (out.weights[:, upper] == 0.0).all()

    def test_causal_prefix_invariance(self):
        # outputs of positions < p do not depend on tokens at positions >= p
        module = _attention()
        g = torch.Generator().manual_seed(1)
        x = torch.randn(6, 8, generator=g, dtype=ops.DTYPE)
        y = x.clone()
        y[4:] = torch.randn(2, 8, generator=g, dtype=ops.DTYPE)
        a = module(x, causal_mask(6)).values
        b = module(y, causal_mask(6)).values
        assert torch.equal(a[:4], b[:4])
        assert not torch.equal(a[4:], b[4:])

    def test_bidirectional_sees_future(self):
        module = _attention()
        g = torch.Generator().manual_seed(1)
        x = torch.randn(4, 8, generator=g, dtype=ops.DTYPE)
        y = x.clone()
        y[3] += 1.0
        a = module(x, bidirectional_mask(4)).values
        b = module(y, bidirectional_mask(4)).values
        assert not torch.equal(a[0], b[0])

    def test_batched_matches_unbatched(self):
        module = _attention()
        x = torch.randn(2, 4, 8, dtype=ops.DTYPE)
        batched = module(x, causal_mask(4)).values
        for b in range(2):
            assert torch.allclose(batched[b], module(x[b], causal_mask(4)).values)

    def test_pad_keys_ignored(self):
        module = _attention()
        g = torch.Generator().manual_seed(2)
        x = torch.randn(1, 5, 8, generator=g, dtype=ops.DTYPE)
        y = x.clone()
        y[0, 3:] = torch.randn(2, 8, generator=g, dtype=ops.DTYPE)
        pad = torch.tensor([[False, False, False, True, True]])
        mask = combine_padding(bidirectional_mask(5), pad)
        a = module(x, mask).values
        b = module(y, mask).values
        assert torch.equal(a[0, :3], b[0, :3])

    def test_functional_form(self):
        module = _attention()
        x = torch.randn(3, 8, dtype=ops.DTYPE)
        out = attend(x, module.q, module.k, module.v, module.o, causal_mask(3), 2)
        assert torch.equal(out.values, module(x, causal_mask(3)).values)

    def test_shape_errors(self):
        module = _attention()
        with pytest.raises(DimensionError):
            module(torch.randn(3, 8, dtype=ops.DTYPE), causal_mask(4))

    def test_configuration_errors(self):
        with pytest.raises(ConfigurationError):
            MultiHeadAttention(10, 3)
        with pytest.raises(ConfigurationError):
            MultiHeadAttention(6, 2)
