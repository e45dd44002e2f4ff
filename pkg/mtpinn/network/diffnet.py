import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import torch
from torch import nn

from mtpinn.models.hjb import HJBConfig, StatePoint
from mtpinn.utils.error_handlers import DomainError, NonFiniteLossError

logger = logging.getLogger(__name__)

DTYPE = torch.float64


@dataclass
class FieldEval:
    """Value and input derivatives at a batch of states; d_s/d_ss only for 3-input fields"""

    gamma: torch.Tensor
    d_tau: torch.Tensor
    d_x: torch.Tensor
    d_s: Optional[torch.Tensor] = None
    d_ss: Optional[torch.Tensor] = None


@dataclass(frozen=True)
class InputScaling:
    """Affine map z -> (z - center) / half_width applied to each input column"""

    centers: Tuple[float, ...]
    half_widths: Tuple[float, ...]

    @classmethod
    def from_config(cls, cfg: HJBConfig, input_dim: int) -> "InputScaling":
        bounds = [(cfg.tau_min, cfg.horizon_T), cfg.x_range, cfg.s_range][:input_dim]
        centers = tuple(0.5 * (lo + hi) for lo, hi in bounds)
        half_widths = tuple((0.5 * (hi - lo)) or 1.0 for lo, hi in bounds)
        return cls(centers, half_widths)

    def extended(self, center: float, half_width: float) -> "InputScaling":
        return InputScaling(self.centers + (center,), self.half_widths + (half_width or 1.0,))


def _as_column(value) -> torch.Tensor:
    return torch.as_tensor(value, dtype=DTYPE).reshape(-1)


def _broadcast(*columns: torch.Tensor) -> List[torch.Tensor]:
    try:
        return list(torch.broadcast_tensors(*columns))
    except RuntimeError as exc:
        sizes = ", ".join(str(tuple(c.shape)) for c in columns)
        raise DomainError(f"input batches do not align: {sizes}") from exc


class ValueNetwork(nn.Module):
    """
    Tanh MLP value approximator with a scalar linear output

    Besides the plain forward pass, ``field`` propagates the input tangents
    d/dtau, d/dX, d/dS and the second tangent d2/dS2 through every layer, so
    one pass returns the value and every input derivative the HJB needs.
    All of it stays on the autograd tape for parameter gradients.
    """

    def __init__(self, input_dim: int, widths: Sequence[int], scaling: Optional[InputScaling] = None):
        super().__init__()
        if input_dim not in (2, 3):
            raise DomainError(f"input_dim must be 2 or 3, got {input_dim}")
        if any(int(w) <= 0 for w in widths):
            raise DomainError(f"widths must be positive integers, got {list(widths)}")
        if scaling is not None and len(scaling.centers) != input_dim:
            raise DomainError(f"input scaling has {len(scaling.centers)} columns for {input_dim} inputs")

        self.input_dim = input_dim
        self.widths = [int(w) for w in widths]
        self.scaling = scaling
        sizes = [input_dim] + self.widths + [1]
        self.layers = nn.ModuleList(
            nn.Linear(fan_in, fan_out, dtype=DTYPE) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        )

    def _inputs(self, tau: torch.Tensor, x: torch.Tensor, s: Optional[torch.Tensor]) -> torch.Tensor:
        columns = [tau, x] if self.input_dim == 2 else [tau, x, s]
        z = torch.stack(columns, dim=-1)
        if self.scaling is not None:
            centers = torch.tensor(self.scaling.centers, dtype=DTYPE)
            half_widths = torch.tensor(self.scaling.half_widths, dtype=DTYPE)
            z = (z - centers) / half_widths
        return z

    def _tangent(self, column: int) -> torch.Tensor:
        direction = torch.zeros(1, self.input_dim, dtype=DTYPE)
        scale = 1.0 if self.scaling is None else 1.0 / self.scaling.half_widths[column]
        direction[0, column] = scale
        return direction

    def _check(self, tau, x, s) -> Tuple[torch.Tensor, torch.Tensor, Optional[torch.Tensor]]:
        if self.input_dim == 3:
            if s is None:
                raise DomainError("a 3-input field needs the price coordinate S")
            tau, x, s = _broadcast(_as_column(tau), _as_column(x), _as_column(s))
            return tau, x, s
        tau, x = _broadcast(_as_column(tau), _as_column(x))
        return tau, x, None

    def forward(self, tau, x, s=None) -> torch.Tensor:
        tau, x, s = self._check(tau, x, s)
        a = self._inputs(tau, x, s)
        for layer in self.layers[:-1]:
            a = torch.tanh(layer(a))
        return self.layers[-1](a).squeeze(-1)

    def value(self, tau, x, s=None) -> torch.Tensor:
        return self.forward(tau, x, s)

    def field(self, tau, x, s=None, second_order: bool = True) -> FieldEval:
        """
        Value and input derivatives by forward tangent propagation

        Args:
            tau: Time-to-maturity batch
            x: Inventory batch
            s: Price batch (required for 3-input networks, ignored otherwise)
            second_order: Also propagate d_s and d_ss (3-input networks only)
        """
        tau, x, s = self._check(tau, x, s)
        with_price = self.input_dim == 3 and second_order

        a = self._inputs(tau, x, s)
        a_tau = self._tangent(0)
        a_x = self._tangent(1)
        a_s = self._tangent(2) if with_price else None
        a_ss = torch.zeros(1, self.input_dim, dtype=DTYPE) if with_price else None

        for layer in self.layers[:-1]:
            weight_t = layer.weight.t()
            u = layer(a)
            h = torch.tanh(u)
            h1 = 1.0 - h * h
            a_tau = h1 * (a_tau @ weight_t)
            a_x = h1 * (a_x @ weight_t)
            if with_price:
                u_s = a_s @ weight_t
                u_ss = a_ss @ weight_t
                h2 = -2.0 * h * h1
                a_s = h1 * u_s
                a_ss = h1 * u_ss + h2 * u_s * u_s
            a = h

        out = self.layers[-1]
        weight_t = out.weight.t()
        gamma = out(a).squeeze(-1)
        d_tau = (a_tau @ weight_t).squeeze(-1).expand_as(gamma)
        d_x = (a_x @ weight_t).squeeze(-1).expand_as(gamma)
        d_s = d_ss = None
        if with_price:
            d_s = (a_s @ weight_t).squeeze(-1).expand_as(gamma)
            d_ss = (a_ss @ weight_t).squeeze(-1).expand_as(gamma)
        return FieldEval(gamma=gamma, d_tau=d_tau, d_x=d_x, d_s=d_s, d_ss=d_ss)


class EvenizedField:
    """Symmetrized field 1/2 (Gamma(tau, X, S) + Gamma(tau, -X, -S))"""

    def __init__(self, base):
        self.base = base
        self.input_dim = base.input_dim

    def parameters(self) -> Iterator[nn.Parameter]:
        return self.base.parameters()

    def value(self, tau, x, s=None) -> torch.Tensor:
        x = _as_column(x)
        flipped_s = None if s is None else -_as_column(s)
        return 0.5 * (self.base.value(tau, x, s) + self.base.value(tau, -x, flipped_s))

    def field(self, tau, x, s=None, second_order: bool = True) -> FieldEval:
        x = _as_column(x)
        flipped_s = None if s is None else -_as_column(s)
        plus = self.base.field(tau, x, s, second_order=second_order)
        minus = self.base.field(tau, -x, flipped_s, second_order=second_order)
        result = FieldEval(
            gamma=0.5 * (plus.gamma + minus.gamma),
            d_tau=0.5 * (plus.d_tau + minus.d_tau),
            d_x=0.5 * (plus.d_x - minus.d_x),
        )
        if plus.d_s is not None:
            result.d_s = 0.5 * (plus.d_s - minus.d_s)
            result.d_ss = 0.5 * (plus.d_ss + minus.d_ss)
        return result


def init_params(input_dim: int, widths: Sequence[int], seed: int,
                scaling: Optional[InputScaling] = None) -> ValueNetwork:
    """
    Build a value network with seeded symmetric-uniform weights and zero biases

    Weights are drawn from U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    """
    if not widths:
        raise DomainError("widths must be a nonempty list of positive integers")
    net = ValueNetwork(input_dim, widths, scaling=scaling)
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for layer in net.layers:
            fan_out, fan_in = layer.weight.shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            draw = torch.rand(layer.weight.shape, generator=generator, dtype=DTYPE)
            layer.weight.copy_((2.0 * draw - 1.0) * bound)
            layer.bias.zero_()
    logger.debug(f"Initialized network - Inputs: {input_dim} - Widths: {net.widths} - Seed: {seed}")
    return net


def eval_field(field, tau, x, s=None, second_order: bool = True) -> FieldEval:
    """Evaluate any value field (network, evenized wrapper or closed form) on a batch"""
    return field.field(tau, x, s, second_order=second_order)


def eval_state(field, p: StatePoint) -> Dict[str, float]:
    """Scalar value and derivatives at one state"""
    s = p.s if field.input_dim == 3 else None
    result = eval_field(field, [p.tau], [p.x], None if s is None else [s])
    values = {"gamma": result.gamma, "d_tau": result.d_tau, "d_x": result.d_x,
              "d_s": result.d_s, "d_ss": result.d_ss}
    return {name: float(v[0]) for name, v in values.items() if v is not None}


class GradientAccumulator:
    """Parameter-name -> gradient tensor, in the network's parameter order"""

    def __init__(self, grads: "OrderedDict[str, torch.Tensor]"):
        self.grads = grads

    @classmethod
    def zeros_like(cls, field) -> "GradientAccumulator":
        return cls(OrderedDict((name, torch.zeros_like(p)) for name, p in _named_parameters(field)))

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.grads[name]

    def __iter__(self):
        return iter(self.grads.items())

    def __len__(self) -> int:
        return len(self.grads)

    def add_(self, other: "GradientAccumulator") -> "GradientAccumulator":
        for name in self.grads:
            self.grads[name] = self.grads[name] + other.grads[name]
        return self

    def flat(self) -> torch.Tensor:
        if not self.grads:
            return torch.zeros(0, dtype=DTYPE)
        return torch.cat([g.reshape(-1) for g in self.grads.values()])

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(g).all()) for g in self.grads.values())

    def norm(self) -> float:
        return float(torch.linalg.vector_norm(self.flat()))


def _named_parameters(field) -> List[Tuple[str, nn.Parameter]]:
    if isinstance(field, nn.Module):
        return list(field.named_parameters())
    base = getattr(field, "base", None)
    if base is not None:
        return _named_parameters(base)
    return []


LossFunction = Callable[[object], Mapping[str, torch.Tensor]]


def grad_of_loss(field, loss_fn: LossFunction,
                 weights: Optional[Mapping[str, float]] = None) -> Tuple[float, Dict[str, float], GradientAccumulator]:
    """
    Evaluate a weighted composite loss and its parameter gradient

    Reverse-mode differentiation runs through everything ``loss_fn`` built,
    including input-derivative recursions and multi-step Euler rollouts.

    Args:
        field: Value field whose parameters are differentiated
        loss_fn: Maps the field to named scalar loss terms
        weights: Weight per term (1.0 when omitted)

    Returns:
        (weighted total, raw value per term, gradient accumulator)

    Raises:
        NonFiniteLossError: Naming the first term that is not finite
    """
    terms = loss_fn(field)
    values: Dict[str, float] = {}
    total = None
    for name, term in terms.items():
        value = float(term.detach())
        if not math.isfinite(value):
            raise NonFiniteLossError(name)
        values[name] = value
        weight = 1.0 if weights is None else float(weights.get(name, 1.0))
        contribution = weight * term
        total = contribution if total is None else total + contribution

    named = _named_parameters(field)
    if total is None or not named or not total.requires_grad:
        accumulator = GradientAccumulator.zeros_like(field)
        return (0.0 if total is None else float(total.detach())), values, accumulator

    params = [p for _, p in named]
    grads = torch.autograd.grad(total, params, allow_unused=True)
    accumulator = GradientAccumulator(OrderedDict(
        (name, torch.zeros_like(p) if g is None else g.detach())
        for (name, p), g in zip(named, grads)
    ))
    if not accumulator.is_finite():
        raise NonFiniteLossError("total", "non-finite parameter gradient")
    return float(total.detach()), values, accumulator


def warm_start_1d_to_2d(net: ValueNetwork, s_range: Optional[Tuple[float, float]] = None) -> ValueNetwork:
    """
    Lift a risk-neutral (tau, X) network to (tau, X, S)

    The first layer gains a zero weight column for S; everything else is
    copied, so the lifted network equals the original for every S.
    """
    if net.input_dim != 2:
        raise DomainError(f"warm start expects a 2-input network, got {net.input_dim} inputs")

    scaling = None
    if net.scaling is not None:
        lo, hi = s_range if s_range is not None else (0.0, 2.0)
        scaling = net.scaling.extended(0.5 * (lo + hi), 0.5 * (hi - lo))

    lifted = ValueNetwork(3, net.widths, scaling=scaling)
    with torch.no_grad():
        for source, target in zip(net.layers, lifted.layers):
            if source is net.layers[0]:
                zero_column = torch.zeros(source.weight.shape[0], 1, dtype=DTYPE)
                target.weight.copy_(torch.cat([source.weight, zero_column], dim=1))
            else:
                target.weight.copy_(source.weight)
            target.bias.copy_(source.bias)
    logger.info(f"Warm-started 3-input network from 2-input network - Widths: {net.widths}")
    return lifted
