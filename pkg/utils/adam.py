from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from utils.errors import DimensionError
from utils.tensor import Tensor


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: Mapping[str, Tensor], state: AdamState,
              grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
    """Bias-corrected Adam update in place, then zero the parameter grads."""
    for name, p in params.items():
        g = p.grad if grads is None else grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise DimensionError(f"adam_step[{name}]", p.shape, g.shape)

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.lr / bc1

    for name, p in params.items():
        g = p.grad if grads is None else grads[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v / bc2) + state.eps
        p.data -= (step_size * m / denom).astype(p.data.dtype)
        p.zero_grad()
