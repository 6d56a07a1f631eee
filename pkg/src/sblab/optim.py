"""Adam optimizer with bias correction.

The default betas follow the progressive-growing convention (0.0, 0.99)
used by the generator/discriminator architectures in this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import TensorNode
from .errors import ContractViolation


@dataclass
class OptimizerState:
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.99
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def ensure_moments(self, params: list[TensorNode]) -> None:
        if not self.first_moment:
            self.first_moment = [np.zeros(p.shape, dtype=p.data.dtype) for p in params]
            self.second_moment = [np.zeros(p.shape, dtype=p.data.dtype) for p in params]
        if len(self.first_moment) != len(params):
            raise ContractViolation(
                f"optimizer state holds {len(self.first_moment)} moments for {len(params)} params")


def adam_step(params: list[TensorNode], state: OptimizerState) -> None:
    """Apply one bias-corrected Adam update; gradients are zeroed afterwards."""
    state.ensure_moments(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractViolation(f"parameter {i} has no gradient")
        if p.grad.shape != p.shape:
            raise ContractViolation(f"gradient shape {p.grad.shape} != parameter {p.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data = p.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = None


class Adam:
    """Convenience wrapper binding an OptimizerState to a parameter list."""

    def __init__(self, params: list[TensorNode], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.0, 0.99), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        self.state.ensure_moments(self.params)
        out: dict[str, np.ndarray] = {}
        for i, (m, v) in enumerate(zip(self.state.first_moment, self.state.second_moment)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.state.ensure_moments(self.params)
        for i in range(len(self.params)):
            self.state.first_moment[i] = np.array(arrays[f"m{i}"], dtype=self.params[i].data.dtype)
            self.state.second_moment[i] = np.array(arrays[f"v{i}"], dtype=self.params[i].data.dtype)
        self.state.step_count = step_count
