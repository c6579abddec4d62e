from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def gradient_check(
    forward: Callable,
    params: Sequence[Tensor],
    inputs,
    loss_fn: Callable[[Tensor], Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``forward(inputs)`` builds the graph and ``loss_fn`` reduces it to a scalar.
    With ``max_entries`` set, each parameter is probed on a random subset of at
    most that many coordinates. Run with 64-bit parameters and dropout off.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("gradient_check requires float64 parameters")
        p.grad = None
    loss = loss_fn(forward(inputs))
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def evaluate() -> float:
        with no_grad():
            return float(loss_fn(forward(inputs)).data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = evaluate()
            flat[i] = orig - h
            f_minus = evaluate()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, float(relative_error(grad.reshape(-1)[i], numeric)))
    return worst
