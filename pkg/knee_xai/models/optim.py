"""Adam with decoupled weight decay and serializable state."""
from __future__ import annotations
import logging
from collections import OrderedDict
from typing import Dict, List, Tuple

import numpy as np

from ..core.errors import ConfigError
from ..nn.modules import Parameter

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


class Adam:
    """Adam (0.9, 0.999, 1e-8); weight decay shrinks weights by lr * decay directly.

    Parameters are held by name so the moment buffers can be checkpointed
    and restored against a freshly built model.
    """

    def __init__(self, named_parameters: List[Tuple[str, Parameter]], lr: float, weight_decay: float = 0.0):
        self.params: "OrderedDict[str, Parameter]" = OrderedDict(named_parameters)
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - BETA1 ** self.t
        correction2 = 1.0 - BETA2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            self.m[name] = BETA1 * self.m[name] + (1.0 - BETA1) * g
            self.v[name] = BETA2 * self.v[name] + (1.0 - BETA2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            update = m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - self.lr * update).astype(p.dtype)

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Moment buffers keyed 'm/<param>' and 'v/<param>'."""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name in self.params:
            state[f"m/{name}"] = self.m[name]
            state[f"v/{name}"] = self.v[name]
        return state

    def load_state_arrays(self, state: Dict[str, np.ndarray], t: int) -> None:
        for name, p in self.params.items():
            for prefix, store in (("m", self.m), ("v", self.v)):
                key = f"{prefix}/{name}"
                if key not in state:
                    raise ConfigError(f"Optimizer state lacks '{key}'")
                store[name] = np.asarray(state[key], dtype=p.dtype).reshape(p.shape).copy()
        self.t = int(t)
