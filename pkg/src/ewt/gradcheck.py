"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, zero when both vanish."""
    diff = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if denom == 0.0:
        return diff
    return diff / denom


def _eval(f: Callable[[], Tensor]) -> float:
    with no_grad():
        return float(f().data)


def check_gradients(
    f: Callable[[], Tensor],
    tensors: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Compare backprop gradients with central differences.

    ``f`` re-evaluates the scalar objective from the current values of
    ``tensors``.  Tensors larger than ``max_entries`` are checked on a random
    coordinate subset plus one random full-tensor direction.  Returns the
    relative error per tensor.
    """
    if not isinstance(tensors, Mapping):
        tensors = {str(i): t for i, t in enumerate(tensors)}
    for t in tensors.values():
        t.grad = None
    backward(f())
    rng = np.random.default_rng(seed)
    errors = {}
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(coords))
        for k, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = _eval(f)
            flat[idx] = orig - eps
            lo = _eval(f)
            flat[idx] = orig
            numeric[k] = (hi - lo) / (2 * eps)
        a = analytic.reshape(-1)[coords]
        err = relative_error(a, numeric)
        if max_entries is not None and flat.size > max_entries:
            direction = rng.standard_normal(t.shape).astype(t.dtype)
            direction /= np.linalg.norm(direction)
            base = t.data.copy()
            t.data[...] = base + eps * direction
            hi = _eval(f)
            t.data[...] = base - eps * direction
            lo = _eval(f)
            t.data[...] = base
            err = max(err, relative_error(np.array([np.vdot(analytic, direction)]), np.array([(hi - lo) / (2 * eps)])))
        errors[name] = err
    return errors
