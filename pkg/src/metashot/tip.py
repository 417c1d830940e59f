"""Training-free cache-model baseline.

Classifies by blending cosine logits with an affinity-weighted vote over a
key/value cache built from the support shots. The (alpha, beta) pair is found
by exhaustive grid search on held-out validation queries, which is exactly
the per-dataset tuning whose transfer behaviour the adapter head is compared
against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, ConfigError, ShapeError
from .tensor import l2_normalize_rows, make_rng
from .zeroshot import top1, zeroshot_logits


@dataclass(frozen=True)
class TipParams:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")


DEFAULT_ALPHAS = tuple(round(0.1 * i, 10) for i in range(0, 51))  # 0.0 .. 5.0
DEFAULT_BETAS = tuple(round(0.5 * i, 10) for i in range(1, 21))  # 0.5 .. 10.0


@dataclass
class CacheModel:
    keys: np.ndarray  # (N*K) x D, unit rows
    values: np.ndarray  # (N*K) x N, one-hot

    @classmethod
    def from_support(cls, support: np.ndarray) -> "CacheModel":
        """Build the cache from N x K x D support shots, class-major order."""
        support = np.asarray(support)
        if support.ndim != 3:
            raise ShapeError(f"support must be N x K x D, got {support.shape}")
        n, k, d = support.shape
        if n * k == 0:
            raise CacheError("empty support set")
        keys = l2_normalize_rows(support.reshape(n * k, d))
        values = np.zeros((n * k, n), dtype=np.float32)
        values[np.arange(n * k), np.repeat(np.arange(n), k)] = 1.0
        return cls(keys=keys, values=values)

    def validate(self) -> None:
        if self.keys.shape[0] == 0:
            raise CacheError("empty cache")
        if self.keys.shape[0] != self.values.shape[0]:
            raise CacheError(
                f"{self.keys.shape[0]} keys but {self.values.shape[0]} value rows"
            )
        ones = np.sum(self.values, axis=1)
        if not (np.all(ones == 1.0) and np.all((self.values == 0) | (self.values == 1))):
            raise CacheError("value rows must be one-hot")


def tip_logits(
    queries: np.ndarray,
    classes: np.ndarray,
    cache: CacheModel,
    params: TipParams,
) -> np.ndarray:
    """Cosine logits plus alpha * exp(-beta * (1 - affinity)) votes from the cache."""
    cache.validate()
    zs = zeroshot_logits(queries, classes).astype(np.float64)
    q = l2_normalize_rows(np.asarray(queries)).astype(np.float64)
    affinity = q @ cache.keys.astype(np.float64).T  # Q x (N*K)
    votes = np.exp(-params.beta * (1.0 - affinity)) @ cache.values.astype(np.float64)
    return (zs + params.alpha * votes).astype(np.float32)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(top1(logits) == np.asarray(labels)))


def holdout_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, validation) index split of n items."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must lie in (0,1), got {fraction}")
    perm = make_rng(seed).permutation(n)
    n_val = max(1, int(round(fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def search_tip(
    val_queries: np.ndarray,
    val_labels: np.ndarray,
    classes: np.ndarray,
    cache: CacheModel,
    alphas=DEFAULT_ALPHAS,
    betas=DEFAULT_BETAS,
) -> TipParams:
    """Exhaustive (alpha, beta) grid search maximizing top-1 on the validation
    queries; ties prefer the smaller alpha, then the smaller beta."""
    if len(alphas) == 0 or len(betas) == 0:
        raise ConfigError("search grid must be non-empty")
    if len(val_labels) == 0:
        raise ConfigError("validation set is empty")
    best: TipParams | None = None
    best_acc = -1.0
    for alpha in sorted(alphas):
        for beta in sorted(betas):
            p = TipParams(alpha=float(alpha), beta=float(beta))
            acc = accuracy(tip_logits(val_queries, classes, cache, p), val_labels)
            if acc > best_acc:
                best, best_acc = p, acc
    assert best is not None
    return best
