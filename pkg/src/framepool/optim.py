"""Adam and plain SGD over named parameter arrays.

Both optimizers mutate parameter arrays in place and work on (name, array)
pairs so they stay independent of the model structure.  After every update,
arrays whose name ends in ".spreads" are projected back to the positivity
floor EPS_SPREAD; keeping that constraint by projection rather than
reparameterization keeps the gradients directly checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import Model, ModelGradients, gradient_arrays, parameter_arrays
from .pooling import EPS_SPREAD

NamedArrays = list[tuple[str, np.ndarray]]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _check_gradients(grads: NamedArrays) -> None:
    for name, g in grads:
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient in {name}")


def _project_spreads(params: NamedArrays) -> None:
    for name, arr in params:
        if name.endswith(".spreads"):
            np.maximum(arr, EPS_SPREAD, out=arr)


def adam_update_arrays(params: NamedArrays, grads: NamedArrays,
                       state: AdamState, lr: float) -> None:
    """One bias-corrected Adam step, in place, then the spread projection."""
    if not lr > 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    _check_gradients(grads)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for (name, w), (gname, g) in zip(params, grads):
        if name != gname or w.shape != g.shape:
            raise ValueError(f"parameter/gradient mismatch at {name} vs {gname}")
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        w -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    _project_spreads(params)


def sgd_update_arrays(params: NamedArrays, grads: NamedArrays, lr: float) -> None:
    """w <- w - lr * g, in place, then the spread projection."""
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    _check_gradients(grads)
    for (name, w), (gname, g) in zip(params, grads):
        if name != gname or w.shape != g.shape:
            raise ValueError(f"parameter/gradient mismatch at {name} vs {gname}")
        w -= lr * g
    _project_spreads(params)


def init_adam_state(model: Model) -> AdamState:
    state = AdamState()
    for name, arr in parameter_arrays(model):
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(model: Model, grads: ModelGradients, state: AdamState, lr: float) -> None:
    adam_update_arrays(parameter_arrays(model), gradient_arrays(grads, model), state, lr)


def sgd_step(model: Model, grads: ModelGradients, lr: float) -> None:
    sgd_update_arrays(parameter_arrays(model), gradient_arrays(grads, model), lr)
