from typing import Callable

import torch
from torch import Tensor

from bdlab.misc import ContractError
from bdlab.util.ops import DTYPE


def numerical_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6) -> Tensor:
    """Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate i.

    Does not use autodiff; `f` is evaluated on a detached copy of `x`.

    """
    if h <= 0:
        raise ValueError("step size must be positive, found {}".format(h))
    point = x.detach().to(DTYPE).clone().contiguous()
    flat = point.view(-1)
    result = torch.empty_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + h
            f_plus = float(f(point))
            flat[i] = original - h
            f_minus = float(f(point))
            flat[i] = original
            result[i] = (f_plus - f_minus) / (2.0 * h)
    return result.view(point.shape)


def autodiff_grad(f: Callable[[Tensor], Tensor], x: Tensor) -> Tensor:
    point = x.detach().to(DTYPE).clone().requires_grad_(True)
    value = f(point)
    if value.numel() != 1:
        raise ContractError(
            "gradient check needs a scalar function, found shape {}".format(
                tuple(value.shape)
            )
        )
    if not value.requires_grad:
        # f does not depend on x
        return torch.zeros_like(point)
    (grad,) = torch.autograd.grad(value.reshape(()), point, allow_unused=True)
    if grad is None:
        return torch.zeros_like(point)
    return grad.detach()


def fd_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6) -> float:
    """Maximum relative error between autodiff and finite-difference gradients.

    Returns max_i |a_i - n_i| / (|n_i| + 1e-8), where a is the gradient of `f` at
    `x` computed by reverse-mode autodiff and n the central-difference estimate
    with step `h`. `f` must be deterministic and return a scalar.

    """
    numeric = numerical_grad(f, x, h)
    analytic = autodiff_grad(f, x)
    if numeric.numel() == 0:
        return 0.0
    error = (analytic - numeric).abs() / (numeric.abs() + 1e-8)
    return float(error.max())
