"""Zero-shot classifier: cosine similarity between queries and class embeddings."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import l2_normalize_rows, matmul


def zeroshot_logits(queries: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Q x N cosine matrix; rows and classes are normalized internally so
    unnormalized inputs are accepted. Entries lie in [-1, 1]."""
    queries = np.asarray(queries)
    classes = np.asarray(classes)
    if queries.ndim != 2 or classes.ndim != 2 or queries.shape[1] != classes.shape[1]:
        raise ShapeError(
            f"queries {queries.shape} and classes {classes.shape} must share the embed dim"
        )
    q = l2_normalize_rows(queries)
    w = l2_normalize_rows(classes)
    return matmul(q, w.T, accum64=True).astype(np.float32)


def top1(logits: np.ndarray) -> np.ndarray:
    """Per-row argmax; ties resolve to the lowest class index."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise ShapeError(f"logits must be Q x N with N >= 1, got {logits.shape}")
    return np.argmax(logits, axis=1)
