"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backward, no_grad


def numerical_grad(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f / d param by central differences, perturbing ``param.data`` in place."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def analytic_grads(f: Callable[[], Tensor], params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    with Tape():
        backward(f())
    return {name: p.grad.astype(np.float64) for name, p in params.items()}


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), with 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(f: Callable[[], Tensor], params: Mapping[str, Tensor],
                    eps: float = 1e-5) -> dict[str, float]:
    """Relative error between backward and finite-difference gradients, per parameter.

    ``f`` must rebuild the scalar loss from scratch on every call and be
    deterministic (no dropout).
    """
    got = analytic_grads(f, params)
    return {name: relative_error(got[name], numerical_grad(f, p, eps))
            for name, p in params.items()}
