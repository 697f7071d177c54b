"""Optimizer: adaptive gradient clipping followed by a LaProp update.

LaProp normalizes the raw gradient by its second-moment estimate *before*
feeding it into the momentum accumulator; clipping is applied per parameter
array relative to that array's norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def agc_clip(grad: np.ndarray, param: np.ndarray, clip: float = 0.3, eps_w: float = 1e-3) -> np.ndarray:
    """Scale grad so its norm never exceeds clip * max(||param||, eps_w)."""
    if grad.shape != param.shape:
        raise ValueError(f"shape mismatch: grad {grad.shape} vs param {param.shape}")
    gnorm = float(np.linalg.norm(grad))
    if gnorm == 0.0:
        return grad
    limit = clip * max(float(np.linalg.norm(param)), eps_w)
    scale = min(1.0, limit / gnorm)
    return grad * scale


@dataclass
class LaProp:
    """One optimizer instance per model component; state lives in the store."""

    store: "object"  # ParameterStore
    component: str
    lr: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-20
    clip: float = 0.3
    skipped: int = field(default=0)  # non-finite gradient steps, counted not applied

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            return
        for name, grad in grads.items():
            param = self.store.array(name)
            state = self.store.opt_state(name)
            if "m" not in state:
                state["m"] = np.zeros_like(param, dtype=np.float64)
                state["v"] = np.zeros_like(param, dtype=np.float64)
                state["t"] = 0
            g = agc_clip(grad.astype(np.float64), param.astype(np.float64), self.clip)
            state["t"] += 1
            t = state["t"]
            state["v"] = self.beta2 * state["v"] + (1.0 - self.beta2) * g * g
            v_hat = state["v"] / (1.0 - self.beta2**t)
            g_norm = np.where(g == 0.0, 0.0, g / (np.sqrt(v_hat) + self.eps))
            state["m"] = self.beta1 * state["m"] + (1.0 - self.beta1) * g_norm
            update = self.lr * state["m"] / (1.0 - self.beta1**t)
            self.store.set_array(name, param - update.astype(param.dtype))
