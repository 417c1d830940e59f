"""Finite-difference verification of the adapter's analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter as ad
from .tensor import finite_diff_grad, make_rng


@dataclass
class GradCheckResult:
    seed: int
    depth: int
    max_rel_error: float


def random_task(
    rng: np.random.Generator, n: int = 3, k: int = 2, d: int = 8, q: int = 6
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Random unit-norm queries/classes/support and labels for a tiny task."""

    def _unit(shape):
        x = rng.standard_normal(shape)
        flat = x.reshape(-1, shape[-1])
        flat /= np.linalg.norm(flat, axis=1, keepdims=True)
        return flat.reshape(shape)

    queries = _unit((q, d))
    classes = _unit((n, d))
    support = _unit((n, k, d))
    labels = rng.integers(0, n, size=q)
    return queries, labels, classes, support


def random_params(config: ad.AdapterConfig, rng: np.random.Generator) -> ad.AdapterParams:
    """Params with every tensor random, so no gradient path starts at zero."""
    params = ad.AdapterParams.init(config, seed=0)
    vec = 0.5 * rng.standard_normal(params.param_count())
    return params.from_vector(vec, dtype=np.float64)


def check_once(
    seed: int,
    depth: int = 1,
    *,
    n: int = 3,
    k: int = 2,
    d: int = 8,
    heads: int = 2,
    temperature: float = 20.0,
    h: float = 1e-3,
    gate_mode: str = ad.GATE_SCALAR,
    value_proj: bool = False,
    width: int = 1,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    The reported figure is the max absolute gradient difference divided by the
    largest finite-difference gradient magnitude.
    """
    rng = make_rng(seed)
    config = ad.AdapterConfig(
        dim=d, heads=heads, depth=depth, width=width, gate_mode=gate_mode, value_proj=value_proj
    )
    params = random_params(config, rng)
    queries, labels, classes, support = random_task(rng, n=n, k=k, d=d)

    _, grads = ad.loss_and_grads(queries, labels, classes, support, params, temperature)
    analytic = grads.to_vector()

    def loss_fn(vec: np.ndarray) -> float:
        live = params.from_vector(vec, dtype=np.float64)
        loss, _ = ad.loss_and_grads(queries, labels, classes, support, live, temperature)
        return loss

    numeric = finite_diff_grad(loss_fn, params.to_vector(), h=h)
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    rel = float(np.max(np.abs(analytic - numeric)) / scale)
    return GradCheckResult(seed=seed, depth=depth, max_rel_error=rel)


def run_suite(n_seeds: int = 20, base_seed: int = 0, **kwargs) -> list[GradCheckResult]:
    """Gradcheck across seeds, alternating single and two-block stacks."""
    results = []
    for i in range(n_seeds):
        depth = 1 if i % 2 == 0 else 2
        results.append(check_once(base_seed + i, depth=depth, **kwargs))
    return results
