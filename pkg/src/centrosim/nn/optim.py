"""Adam optimizer acting in place on parameter tensors."""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor


@dataclasses.dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    steps: list | None = None
    m: list | None = None
    v: list | None = None


def adam_step(params: list[Tensor], state: AdamState, allow_missing: bool = False) -> None:
    """One update from the gradients currently stored on the params.

    With allow_missing, params whose grad is None are skipped and keep their
    own step counts, so bias correction stays exact for parameters that only
    participate in some steps (shared-trunk round-robin training).
    """
    if state.m is None:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
        state.steps = [0] * len(params)
    assert len(state.m) == len(params)
    state.step_count += 1
    for k, (p, m, v) in enumerate(zip(params, state.m, state.v)):
        g = p.grad
        if g is None:
            assert allow_missing, "adam_step called before backward"
            continue
        state.steps[k] += 1
        bc1 = 1.0 - state.beta1 ** state.steps[k]
        bc2 = 1.0 - state.beta2 ** state.steps[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
