"""Adam with bias correction, operating on named parameter sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ParamSet = dict[str, np.ndarray]


@dataclass
class AdamState:
    """First/second moments per parameter plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: ParamSet = field(default_factory=dict)
    v: ParamSet = field(default_factory=dict)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState) -> tuple[ParamSet, AdamState]:
    """One Adam update; returns fresh parameter and state dicts."""
    if set(grads) - set(params):
        raise ValueError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    for name, grad in grads.items():
        if grad.shape != params[name].shape:
            raise ValueError(
                f"gradient shape {grad.shape} does not match parameter {name!r} shape {params[name].shape}"
            )

    t = state.step + 1
    new_params: ParamSet = {}
    new_m: ParamSet = {}
    new_v: ParamSet = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            new_params[name] = value.copy()
            new_m[name] = state.m.get(name, np.zeros_like(value)).copy()
            new_v[name] = state.v.get(name, np.zeros_like(value)).copy()
            continue
        m = state.beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_params[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v

    new_state = AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
                          step=t, m=new_m, v=new_v)
    return new_params, new_state
