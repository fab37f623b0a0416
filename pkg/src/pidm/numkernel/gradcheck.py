"""Central finite-difference gradient checking (64-bit)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(f: Callable[[], Tensor], tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    """d f / d tensor by central differences, perturbing ``tensor.data`` in place."""
    out = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    gflat = out.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Tensor-level error ||a - n|| / max(||a||, ||n||, floor)."""
    diff = np.linalg.norm((analytic - numeric).ravel())
    scale = max(np.linalg.norm(analytic.ravel()), np.linalg.norm(numeric.ravel()), floor)
    return float(diff / scale)


def check_gradients(
    f: Callable[[], Tensor], tensors: Sequence[Tensor], names: Sequence[str] | None = None, step: float = 1e-5
) -> dict[str, float]:
    """Return {name: relative error} of analytic vs numeric gradients for each tensor."""
    for t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError("gradient checking requires float64 tensors")
        t.zero_grad()
    backward(f())
    names = names or [f"t{i}" for i in range(len(tensors))]
    return {n: relative_error(t.grad, numeric_grad(f, t, step)) for n, t in zip(names, tensors)}
