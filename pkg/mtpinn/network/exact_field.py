from typing import Iterator

import numpy as np
import torch

from mtpinn.models.hjb import HJBConfig
from mtpinn.network.diffnet import DTYPE, FieldEval
from mtpinn.oracle.closed_form import value_field_arrays
from mtpinn.utils.error_handlers import DomainError


class ExactField:
    """Closed-form value function behind the same interface as a value network"""

    def __init__(self, cfg: HJBConfig):
        self.cfg = cfg
        self.input_dim = cfg.input_dim

    def parameters(self) -> Iterator[torch.nn.Parameter]:
        return iter(())

    def value(self, tau, x, s=None) -> torch.Tensor:
        return self.field(tau, x, s, second_order=False).gamma

    def field(self, tau, x, s=None, second_order: bool = True) -> FieldEval:
        def to_numpy(value):
            if torch.is_tensor(value):
                return value.detach().cpu().numpy().reshape(-1)
            return np.asarray(value, dtype=np.float64).reshape(-1)

        if s is None and self.input_dim == 3:
            raise DomainError("a 3-input field needs the price coordinate S")
        price = 1.0 if s is None else to_numpy(s)
        values = value_field_arrays(to_numpy(tau), to_numpy(x), price, self.cfg)
        result = {name: torch.from_numpy(np.ascontiguousarray(v, dtype=np.float64)).to(DTYPE)
                  for name, v in values.items()}
        with_price = self.input_dim == 3 and second_order
        return FieldEval(
            gamma=result["gamma"],
            d_tau=result["d_tau"],
            d_x=result["d_x"],
            d_s=result["d_s"] if with_price else None,
            d_ss=result["d_ss"] if with_price else None,
        )
