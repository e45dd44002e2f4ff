from typing import Callable, Dict

import torch

from mtpinn.network.diffnet import DTYPE, FieldEval

FieldFunction = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], Dict[str, torch.Tensor]]


class AnalyticField:
    """Hand-written value field with known derivatives"""

    def __init__(self, input_dim: int, fn: FieldFunction):
        self.input_dim = input_dim
        self.fn = fn

    def parameters(self):
        return iter(())

    def value(self, tau, x, s=None):
        return self.field(tau, x, s, second_order=False).gamma

    def field(self, tau, x, s=None, second_order=True):
        tau = torch.as_tensor(tau, dtype=DTYPE).reshape(-1)
        x = torch.as_tensor(x, dtype=DTYPE).reshape(-1)
        s = torch.zeros_like(x) if s is None else torch.as_tensor(s, dtype=DTYPE).reshape(-1)
        tau, x, s = torch.broadcast_tensors(tau, x, s)
        out = self.fn(tau, x, s)
        zero = torch.zeros_like(x)
        with_price = self.input_dim == 3 and second_order
        return FieldEval(
            gamma=out.get("gamma", zero),
            d_tau=out.get("d_tau", zero),
            d_x=out.get("d_x", zero),
            d_s=out.get("d_s", zero) if with_price else None,
            d_ss=out.get("d_ss", zero) if with_price else None,
        )


def constant_field(c: float, input_dim: int = 2) -> AnalyticField:
    return AnalyticField(input_dim, lambda tau, x, s: {"gamma": torch.full_like(x, c)})


def linear_x_field(slope: float, input_dim: int = 2) -> AnalyticField:
    return AnalyticField(input_dim, lambda tau, x, s: {"gamma": slope * x, "d_x": torch.full_like(x, slope)})


def quadratic_x_field(c: float, input_dim: int = 2) -> AnalyticField:
    return AnalyticField(input_dim, lambda tau, x, s: {"gamma": c * x * x, "d_x": 2.0 * c * x})


def product_field() -> AnalyticField:
    """Gamma = X * S"""
    return AnalyticField(3, lambda tau, x, s: {"gamma": x * s, "d_x": s, "d_s": x})


def finite_difference_grad(net: torch.nn.Module, loss: Callable[[torch.nn.Module], torch.Tensor],
                           h: float = 1e-6) -> Dict[str, torch.Tensor]:
    """Central-difference gradient of a scalar loss over every parameter"""
    grads = {}
    with torch.no_grad():
        for name, param in net.named_parameters():
            flat = param.view(-1)
            grad = torch.zeros_like(flat)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + h
                up = float(loss(net))
                flat[i] = original - h
                down = float(loss(net))
                flat[i] = original
                grad[i] = (up - down) / (2.0 * h)
            grads[name] = grad.view_as(param)
    return grads


def assert_grads_close(analytic, numeric: Dict[str, torch.Tensor], rtol: float, atol: float):
    for name, grad in analytic:
        expected = numeric[name]
        assert torch.allclose(grad, expected, rtol=rtol, atol=atol), (
            f"{name}: max deviation {float((grad - expected).abs().max()):.3e}"
        )
