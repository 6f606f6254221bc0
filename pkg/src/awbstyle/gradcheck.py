"""Central-difference gradient verification.

Meant to run on float64 tensors; the numeric side evaluates the function
twice per coordinate and never touches the reverse-mode code path.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def grad_check(fn, inputs, eps: float = 1e-4) -> float:
    """Max over coordinates of |analytic - central| / max(1, |central|).

    `fn` must map the input tensors to a scalar Tensor and rebuild its op
    graph on every call. Inputs are perturbed in place and restored.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    backward(out)

    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn(*inputs).data)
            flat[i] = orig - eps
            f_minus = float(fn(*inputs).data)
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * eps)
            err = abs(float(aflat[i]) - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst


def as_check_tensor(data) -> Tensor:
    """Float64 leaf tensor with gradients enabled, for use with grad_check."""
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
