import pytest
import torch

from bdlab.misc import DimensionError
from bdlab.util import LabOptimizer
from bdlab.util.optimizer import AdamW, AdamWConfig, adamw_step, init_state


def _param(*values):
    return torch.tensor(values, dtype=torch.float64)


class TestStep:
    def test_zero_gradient_without_decay(self):
        cfg = AdamWConfig(weight_decay=0.0)
        p = _param(1.0, -2.0)
        adamw_step([p], [torch.zeros(2, dtype=torch.float64)], init_state([p]), cfg)
        assert torch.equal(p, _param(1.0, -2.0))

    def test_decay_only(self):
        cfg = AdamWConfig(lr=0.1, weight_decay=0.5)
        p = _param(1.0, -2.0)
        adamw_step([p], [torch.zeros(2, dtype=torch.float64)], init_state([p]), cfg)
        assert torch.allclose(p, _param(1.0, -2.0) * (1 - 0.1 * 0.5), atol=1e-15)

    def test_first_step_moves_by_lr(self):
        cfg = AdamWConfig(lr=1e-3, weight_decay=0.0)
        p = _param(0.0, 0.0)
        adamw_step([p], [_param(1.0, -3.0)], init_state([p]), cfg)
        assert p.tolist() == pytest.approx([-1e-3, 1e-3], rel=1e-6)

    def test_missing_gradient_is_skipped(self):
        p, q = _param(1.0), _param(2.0)
        state = init_state([p, q])
        adamw_step([p, q], [None, _param(1.0)], state, AdamWConfig())
        assert p.item() == 1.0 and q.item() != 2.0
        assert state["step"] == 1

    def test_shape_errors(self):
        p = _param(1.0, 2.0)
        with pytest.raises(DimensionError):
            adamw_step([p], [_param(1.0)], init_state([p]), AdamWConfig())
        with pytest.raises(DimensionError):
            adamw_step([p], [], init_state([p]), AdamWConfig())

    def test_invalid_settings(self):
        with pytest.raises(ValueError):
            AdamWConfig(lr=-1.0).check()
        with pytest.raises(ValueError):
            AdamWConfig(beta2=1.0).check()


def test_matches_torch_adamw():
    g = torch.Generator().manual_seed(0)
    start = torch.randn(3, 4, generator=g, dtype=torch.float64)
    ours = torch.nn.Parameter(start.clone())
    theirs = torch.nn.Parameter(start.clone())
    settings = dict(lr=1e-2, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.05)
    a = AdamW([ours], **settings)
    b = torch.optim.AdamW([theirs], **settings)
    for _ in range(5):
        grad = torch.randn(3, 4, generator=g, dtype=torch.float64)
        ours.grad, theirs.grad = grad.clone(), grad.clone()
        a.step()
        b.step()
    assert torch.allclose(ours, theirs, atol=1e-12)
    assert a.get_lr() == [1e-2]


class TestCreate:
    def test_adamw(self, config, model):
        optimizer = LabOptimizer.create(config, model)
        assert isinstance(optimizer, AdamW)
        assert optimizer.get_lr() == [config.get("train.lr")]

    def test_torch_optimizer(self, config, model):
        config.set("train.optimizer", "SGD")
        assert isinstance(LabOptimizer.create(config, model), torch.optim.SGD)

    def test_unknown(self, config, model):
        config.set("train.optimizer", "Nope")
        with pytest.raises(ValueError):
            LabOptimizer.create(config, model)

    def test_only_trainable(self, config, model):
        model.attach_lora(rank=2)
        optimizer = LabOptimizer.create(config, model)
        params = optimizer.param_groups[0]["params"]
        assert sum(p.numel() for p in params) == model.num_parameters(trainable_only=True)
        for p in model.parameters():
            p.requires_grad_(False)
        with pytest.raises(ValueError):
            LabOptimizer.create(config, model)
