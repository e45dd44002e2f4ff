from typing import Iterable, Tuple

import torch
from torch.optim import Optimizer

from mtpinn.models.training import ModelSection
from mtpinn.network.diffnet import GradientAccumulator
from mtpinn.utils.error_handlers import DomainError


class AdamW(Optimizer):
    """Adam with decoupled weight decay; decay is applied before the moment update"""

    def __init__(self, params: Iterable[torch.nn.Parameter], lr: float = 5e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, weight_decay: float = 1e-4):
        if lr <= 0:
            raise DomainError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise DomainError(f"betas must lie in [0, 1), got {betas}")
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @classmethod
    def from_config(cls, params: Iterable[torch.nn.Parameter], model: ModelSection) -> "AdamW":
        return cls(params, lr=model.learning_rate, betas=tuple(model.betas), eps=model.eps,
                   weight_decay=model.weight_decay)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            beta1, beta2 = group['betas']
            lr = group['lr']
            eps = group['eps']
            weight_decay = group['weight_decay']

            for param in group['params']:
                if param.grad is None:
                    continue
                grad = param.grad

                state = self.state[param]
                if len(state) == 0:
                    state['step'] = 0
                    state['exp_avg'] = torch.zeros_like(param)
                    state['exp_avg_sq'] = torch.zeros_like(param)

                state['step'] += 1
                step = state['step']
                exp_avg, exp_avg_sq = state['exp_avg'], state['exp_avg_sq']

                if weight_decay != 0:
                    param.mul_(1.0 - lr * weight_decay)

                exp_avg.mul_(beta1).add_(grad, alpha=1.0 - beta1)
                exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)

                bias_correction1 = 1.0 - beta1 ** step
                bias_correction2 = 1.0 - beta2 ** step
                denom = (exp_avg_sq / bias_correction2).sqrt().add_(eps)
                param.addcdiv_(exp_avg, denom, value=-lr / bias_correction1)

        return loss

    def moments_finite(self) -> bool:
        for state in self.state.values():
            for key in ('exp_avg', 'exp_avg_sq'):
                if key in state and not bool(torch.isfinite(state[key]).all()):
                    return False
        return True


def adamw_step(field, grads: GradientAccumulator, opt: AdamW) -> None:
    """Load an accumulated gradient into the parameters and take one AdamW step"""
    named = dict(field.named_parameters())
    if set(named) != {name for name, _ in grads}:
        raise DomainError("gradient accumulator does not match the network parameters")
    for name, grad in grads:
        param = named[name]
        if grad.shape != param.shape:
            raise DomainError(f"gradient shape {tuple(grad.shape)} does not match parameter '{name}' {tuple(param.shape)}")
        param.grad = grad.clone()
    opt.step()
    opt.zero_grad(set_to_none=True)
