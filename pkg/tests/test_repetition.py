from fractions import Fraction

import pytest
import torch

from bdlab.misc import ContractError, DimensionError
from bdlab.model.repetition import (
    BlockClass,
    bidirectional_share,
    classify_blocks,
    compact_layout,
    extract_final_instance,
    gather_positions,
    repeat,
    repeat_tensor,
)
from bdlab.util.analyze import analyze_mask

D, LT, Z = BlockClass.Dense, BlockClass.LowerTriangular, BlockClass.Zero


class TestRepeat:
    def test_repeat(self):
        seq = repeat([5, 6, 7], 1)
        assert seq.ids == [5, 6, 7, 5, 6, 7]
        assert (seq.n, seq.k, seq.r) == (3, 2, 1)

    def test_no_repetition(self):
        assert repeat([5, 6, 7], 0).ids == [5, 6, 7]

    def test_pads_are_repeated(self):
        assert repeat([4, 0], 2).ids == [4, 0, 4, 0, 4, 0]

    def test_errors(self):
        with pytest.raises(DimensionError):
            repeat([], 1)
        with pytest.raises(ValueError):
            repeat([1], -1)

    def test_tensor(self):
        x = torch.arange(6).reshape(2, 3)
        assert repeat_tensor(x, 1).tolist() == [[0, 1, 2, 0, 1, 2], [3, 4, 5, 3, 4, 5]]

    def test_extract_final_instance(self):
        x = torch.arange(9)
        assert extract_final_instance(x, 3, 3).tolist() == [6, 7, 8]
        with pytest.raises(DimensionError):
            extract_final_instance(x, 4, 2)


class TestCompact:
    def test_layout(self):
        pad = torch.tensor([[False, False, True], [False, False, False]])
        source, new_pad, final_index = compact_layout(pad, 2)
        assert source[0, :4].tolist() == [0, 1, 0, 1]
        assert new_pad[0].tolist() == [False] * 4 + [True] * 2
        assert final_index[0, :2].tolist() == [2, 3]
        assert source[1].tolist() == [0, 1, 2, 0, 1, 2]
        assert final_index[1].tolist() == [3, 4, 5]

    def test_gather_roundtrip(self):
        pad = torch.tensor([[False, False, True]])
        x = torch.tensor([[[10.0], [11.0], [0.0]]])
        source, _, final_index = compact_layout(pad, 3)
        repeated = gather_positions(x, source)
        assert gather_positions(repeated, final_index)[0, :2, 0].tolist() == [10.0, 11.0]

    def test_left_padding(self):
        with pytest.raises(ContractError):
            compact_layout(torch.tensor([[True, False]]), 2)


class TestShare:
    def test_formula(self):
        for k in range(1, 101):
            assert bidirectional_share(k) == (k - 1) / (k + 1)
            assert Fraction(bidirectional_share(k)).limit_denominator(1000) == Fraction(
                k - 1, k + 1
            )

    def test_increasing_below_one(self):
        shares = [bidirectional_share(k) for k in range(1, 101)]
        assert all(a < b for a, b in zip(shares, shares[1:]))
        assert shares[-1] < 1

    def test_values(self):
        assert bidirectional_share(1) == 0
        assert bidirectional_share(4) == pytest.approx(0.6)

    def test_error(self):
        with pytest.raises(ValueError):
            bidirectional_share(0)


class TestClassifyBlocks:
    def test_hand_example(self):
        w = torch.tensor(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.5, 0.5, 0.0, 0.0],
                [0.2, 0.3, 0.5, 0.0],
                [0.1, 0.2, 0.3, 0.4],
            ],
            dtype=torch.float64,
        )
        report = classify_blocks(w, 2, 2)
        assert report.classes == [[LT, Z], [D, LT]]
        assert report.verified
        assert report.to_dict()["classes"] == [
            ["LowerTriangular", "Zero"],
            ["Dense", "LowerTriangular"],
        ]

    def test_irregular(self):
        w = torch.zeros(4, 4, dtype=torch.float64)
        w[0, 3] = 1.0
        report = classify_blocks(w, 2, 2)
        assert report.classes[0][1] == BlockClass.Irregular
        assert not report.verified

    def test_shape(self):
        with pytest.raises(DimensionError):
            classify_blocks(torch.zeros(5, 5), 2, 2)

    @pytest.mark.parametrize("n", [2, 3, 5])
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_causal_model_pattern(self, model, n, k):
        analysis = analyze_mask(model, n, k, seed=n * 10 + k)
        assert analysis.verified
        expected = [[BlockClass.expected(i, j) for j in range(k)] for i in range(k)]
        for layer in analysis.reports:
            for report in layer:
                assert report.classes == expected
        # zero blocks are bit-exact
        upper_block = torch.ones(k * n, k * n, dtype=torch.bool)
        for i in range(k):
            upper_block[i * n : (i + 1) * n, : (i + 1) * n] = False
        frame = analysis.attention
        keys = [str(j) for j in range(k * n)]
        for (_, _), group in frame.groupby(["layer", "head"]):
            matrix = torch.tensor(group[keys].to_numpy())
            assert (matrix[upper_block] == 0.0).all()

    def test_analysis_shapes(self, model):
        analysis = analyze_mask(model, 3, 2)
        n_layers, heads = model.n_layers, model.heads
        assert len(analysis.attention) == n_layers * heads * 6
        assert analysis.to_dict()["share_bidirectional"] == pytest.approx(1 / 3)
