"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """Return updated copies of ``params`` and ``state``.

    Raises FloatingPointError, leaving everything untouched, when any
    gradient holds NaN or inf.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} != grad shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; update rejected")
    if state.step < 0:
        raise ValueError("step must be non-negative")

    m_prev = state.first_moment or [np.zeros_like(p) for p in params]
    v_prev = state.second_moment or [np.zeros_like(p) for p in params]
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params, m_new, v_new = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        m_new.append(m)
        v_new.append(v)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m_new, v_new)
    return new_params, new_state


class Adam:
    """Stateful wrapper updating Tensor parameters in place."""

    def __init__(self, params: list[Tensor], lr: float = 4e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.state)
        for p, d in zip(self.params, new):
            p.data = d
