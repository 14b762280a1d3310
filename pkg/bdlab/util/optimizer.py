from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import torch
from torch import Tensor
from torch.optim import Optimizer

from bdlab.config import Config
from bdlab.misc import DimensionError


@dataclass
class AdamWConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.05

    @staticmethod
    def from_config(config: Config, prefix: str = "train") -> "AdamWConfig":
        return AdamWConfig(
            lr=config.get(prefix + ".lr"),
            beta1=config.get(prefix + ".beta1"),
            beta2=config.get(prefix + ".beta2"),
            eps=config.get(prefix + ".eps"),
            weight_decay=config.get(prefix + ".weight_decay"),
        )

    def check(self):
        if not self.lr >= 0.0:
            raise ValueError("Invalid learning rate: {} - should be >= 0.0".format(self.lr))
        if not 0.0 <= self.eps:
            raise ValueError("Invalid epsilon value: {}".format(self.eps))
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError("Invalid beta parameter at index 0: {}".format(self.beta1))
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError("Invalid beta parameter at index 1: {}".format(self.beta2))
        if not 0.0 <= self.weight_decay:
            raise ValueError("Invalid weight decay: {}".format(self.weight_decay))


def init_state(params: Sequence[Tensor]) -> Dict[str, Any]:
    return {
        "step": 0,
        "exp_avg": [torch.zeros_like(p) for p in params],
        "exp_avg_sq": [torch.zeros_like(p) for p in params],
    }


@torch.no_grad()
def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[Tensor]],
    state: Dict[str, Any],
    cfg: AdamWConfig,
):
    """One AdamW update with bias correction, in place.

    Weight decay is decoupled: each parameter is first shrunk by (1 - lr * wd), then
    moved by the Adam direction. Parameters whose gradient is ``None`` are skipped.

    """
    if len(params) != len(grads):
        raise DimensionError(
            "{} parameters but {} gradients".format(len(params), len(grads))
        )
    if len(state["exp_avg"]) != len(params):
        raise DimensionError(
            "optimizer state holds {} moments for {} parameters".format(
                len(state["exp_avg"]), len(params)
            )
        )
    state["step"] += 1
    step = state["step"]
    bias_correction1 = 1.0 - cfg.beta1 ** step
    bias_correction2 = 1.0 - cfg.beta2 ** step
    for p, g, exp_avg, exp_avg_sq in zip(
        params, grads, state["exp_avg"], state["exp_avg_sq"]
    ):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(
                "gradient of shape {} does not fit parameter of shape {}".format(
                    tuple(g.shape), tuple(p.shape)
                )
            )
        p.mul_(1.0 - cfg.lr * cfg.weight_decay)
        exp_avg.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
        exp_avg_sq.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
        denom = (exp_avg_sq / bias_correction2).sqrt_().add_(cfg.eps)
        p.addcdiv_(exp_avg, denom, value=-cfg.lr / bias_correction1)


class AdamW(Optimizer):
    """AdamW with decoupled weight decay and no learning rate schedule.

    Params:
        lr: learning rate. Default: 2e-4
        betas: Adam's b1 and b2. Default: (0.9, 0.99)
        eps: Adam's epsilon. Default: 1e-8
        weight_decay: decoupled weight decay. Default: 0.05

    """

    def __init__(self, params, lr=2e-4, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.05):
        AdamWConfig(lr, betas[0], betas[1], eps, weight_decay).check()
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    def get_lr(self) -> List[float]:
        return [group["lr"] for group in self.param_groups]

    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            params = [p for p in group["params"] if p.grad is not None]
            if not params:
                continue
            for p in params:
                if p.grad.is_sparse:
                    raise RuntimeError("AdamW does not support sparse gradients")
            key = group["params"][0]
            if len(self.state[key]) == 0:
                self.state[key] = init_state(group["params"])
            cfg = AdamWConfig(
                group["lr"],
                group["betas"][0],
                group["betas"][1],
                group["eps"],
                group["weight_decay"],
            )
            adamw_step(
                group["params"], [p.grad for p in group["params"]], self.state[key], cfg
            )
        return loss


class LabOptimizer:
    """ Wraps torch optimizers """

    @staticmethod
    def create(config: Config, model: torch.nn.Module) -> Optimizer:
        """ Factory method for optimizer creation over the trainable parameters """
        name = config.get("train.optimizer")
        cfg = AdamWConfig.from_config(config)
        params = [p for p in model.parameters() if p.requires_grad]
        if len(params) == 0:
            raise ValueError("model has no trainable parameters")
        if name == "AdamW":
            return AdamW(
                params,
                lr=cfg.lr,
                betas=(cfg.beta1, cfg.beta2),
                eps=cfg.eps,
                weight_decay=cfg.weight_decay,
            )
        try:
            optimizer = getattr(torch.optim, name)
        except AttributeError:
            raise ValueError("unknown optimizer {} for key train.optimizer".format(name))
        return optimizer(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
