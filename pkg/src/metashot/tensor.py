"""Dense numerics substrate.

Conventions used across the engine:

* storage dtype is float32, reductions (dot products, softmax sums, losses,
  optimizer moments) run in float64;
* matrices are row-major numpy arrays, one sample/class per row;
* all functions are pure and never mutate their inputs.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DegenerateEmbeddingError, NumericError, ShapeError

DEFAULT_NORM_EPS = 1e-8


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seed gives bit-identical streams."""
    return np.random.default_rng(int(seed))


def scaled_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], float32."""
    bound = 1.0 / float(np.sqrt(fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def matmul(a: np.ndarray, b: np.ndarray, accum64: bool = False) -> np.ndarray:
    """Matrix product. With accum64 the product is computed and returned in
    float64, otherwise in float32."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    if accum64:
        return a.astype(np.float64) @ b.astype(np.float64)
    return (a.astype(np.float32) @ b.astype(np.float32)).astype(np.float32)


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction; accumulates in float64
    and returns the input's float dtype."""
    a = np.asarray(a)
    x = a.astype(np.float64)
    x = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(x)
    out = e / np.sum(e, axis=-1, keepdims=True)
    if a.dtype == np.float32:
        return out.astype(np.float32)
    return out


def l2_normalize_rows(a: np.ndarray, eps: float = DEFAULT_NORM_EPS) -> np.ndarray:
    """Scale each row to unit Euclidean norm.

    Rows whose norm falls below ``eps`` are rejected with a
    :class:`DegenerateEmbeddingError` naming the offending row.
    """
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a 2-d matrix, got {a.ndim}-d")
    norms = np.sqrt(np.sum(a.astype(np.float64) ** 2, axis=1))
    bad = np.flatnonzero(norms < eps)
    if bad.size:
        raise DegenerateEmbeddingError(
            f"row {int(bad[0])} has norm {norms[bad[0]]:.3e} < eps={eps:.1e}"
        )
    out = a.astype(np.float64) / norms[:, None]
    if a.dtype == np.float32:
        return out.astype(np.float32)
    return out


def finite_diff_grad(
    loss_fn: Callable[[np.ndarray], float], params: np.ndarray, h: float
) -> np.ndarray:
    """Central finite differences of a scalar loss, one coordinate at a time.

    Runs entirely in float64; ``loss_fn`` must be deterministic.
    """
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    p = np.asarray(params, dtype=np.float64).copy()
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        hi = float(loss_fn(p))
        p[i] = orig - h
        lo = float(loss_fn(p))
        p[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite loss at coordinate {i}: {hi}, {lo}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
