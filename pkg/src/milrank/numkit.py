"""Minimal dense numeric kernel.

Vectors and matrices are plain numpy arrays.  Feature storage on disk is
float32; in-memory computation promotes to float64 so that dot products and
softmax sums accumulate in double precision.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Mapping

import numpy as np

from .errors import NumericError, ShapeError

GradientSet = Dict[str, np.ndarray]


def linear(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """w @ x + b for a single vector x.  w is (out, in), b is (out,)."""
    if w.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"linear expects matrix/vector/vector, got {w.shape}, {b.shape}, {x.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"weight {w.shape} does not accept input of length {x.shape[0]}")
    if w.shape[0] != b.shape[0]:
        raise ShapeError(f"weight {w.shape} does not match bias of length {b.shape[0]}")
    return w @ x + b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def stable_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax with max-subtraction, accumulated in float64."""
    x = np.asarray(x)
    if x.size == 0:
        raise ShapeError("softmax of an empty vector")
    shifted = x.astype(np.float64) - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")


def finite_diff_gradient(
    loss_fn: Callable[[object], float],
    params,
    h: float = 1e-3,
) -> GradientSet:
    """Central-difference gradient of a scalar loss over every parameter entry.

    ``params`` is any object exposing a ``tensors`` mapping of name -> float64
    ndarray.  The per-entry step is ``h * max(1, |theta|)``.  Entries are
    perturbed in place and restored, so ``loss_fn`` must be a pure function of
    the parameter values.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    tensors: Mapping[str, np.ndarray] = params.tensors
    grads: GradientSet = {}
    for name, tensor in tensors.items():
        flat = tensor.reshape(-1)
        g = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            step = h * max(1.0, abs(float(orig)))
            flat[i] = orig + step
            lp = float(loss_fn(params))
            flat[i] = orig - step
            lm = float(loss_fn(params))
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericError(f"non-finite loss while probing {name}[{i}]")
            g[i] = (lp - lm) / (2.0 * step)
        grads[name] = g.reshape(tensor.shape)
    return grads
