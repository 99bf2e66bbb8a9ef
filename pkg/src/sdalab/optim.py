"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sdalab.tensor import ParamSet, ShapeError


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError(f"invalid AdamW hyperparameters: {self}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1): {self}")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> OptimizerState:
        return cls(
            m={n: np.zeros_like(t.data) for n, t in params.items()},
            v={n: np.zeros_like(t.data) for n, t in params.items()},
        )


def adamw_step(params: ParamSet, grads: dict[str, np.ndarray], state: OptimizerState,
               hyper: AdamWHyper) -> tuple[ParamSet, OptimizerState]:
    """One in-place AdamW update.

    The decay shrinks each parameter by ``lr * weight_decay`` before the
    bias-corrected Adam step; it never enters the moment estimates.
    """
    b1, b2 = hyper.beta1, hyper.beta2
    t = state.step + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape or v.shape != p.shape:
            raise ShapeError("adamw_step", p.shape, g.shape, name)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        theta = p.data
        if hyper.weight_decay:
            theta = theta * (1.0 - hyper.lr * hyper.weight_decay)
        p.data = theta - hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    state.step = t
    return params, state
