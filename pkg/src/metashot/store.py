"""On-disk task container: EMBX tensors tied together by a JSON manifest.

A task bundles one dataset split: N class (text) embeddings, K support shots
per class, and a labeled query pool. ``synth_task`` fabricates a fully
deterministic task from clustered noise so the whole engine can be exercised
without any external model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .embx import read_embx, write_embx
from .errors import DegenerateEmbeddingError, ConfigError, FormatError, SplitError
from .tensor import make_rng
from .zeroshot import top1, zeroshot_logits

MANIFEST_FIELDS = (
    "dataset_name",
    "embed_dim",
    "class_names",
    "text_embeddings",
    "support",
    "query_features",
    "query_labels",
    "shots",
)

SIDE_BASE = "base"
SIDE_NOVEL = "novel"


@dataclass
class SynthSpec:
    n_classes: int
    shots: int
    dim: int
    queries_per_class: int
    cluster_spread: float
    base_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 2 or self.shots < 1 or self.dim < 1 or self.queries_per_class < 1:
            raise ConfigError(f"invalid synthesis geometry: {self}")
        if not self.cluster_spread > 0:
            raise ConfigError(f"cluster_spread must be positive, got {self.cluster_spread}")
        if not 0.0 < self.base_fraction < 1.0:
            raise ConfigError(f"base_fraction must lie in (0,1), got {self.base_fraction}")


@dataclass
class LoadedTask:
    dataset_name: str
    embed_dim: int
    class_names: list[str]
    shots: int
    text: np.ndarray  # N x D, unit rows
    support: np.ndarray  # N x K x D, unit rows
    queries: np.ndarray  # Q x D, unit rows
    labels: np.ndarray  # Q, int64 in [0, N)
    split: list[str] | None = None  # per-class "base"/"novel", aligned with class_names
    manifest_path: Path | None = None

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def side_indices(self, side: str) -> np.ndarray:
        if side == "all":
            return np.arange(self.n_classes)
        if self.split is None:
            raise SplitError("task has no base/novel split")
        if side not in (SIDE_BASE, SIDE_NOVEL):
            raise ConfigError(f"unknown side {side!r}")
        return np.flatnonzero(np.asarray(self.split) == side)


def _renormalized(arr: np.ndarray, label: str, eps: float = 1e-8) -> np.ndarray:
    """Renormalize rows to unit length, naming file and row on failure."""
    flat = arr.reshape(-1, arr.shape[-1])
    norms = np.sqrt(np.sum(flat.astype(np.float64) ** 2, axis=1))
    bad = np.flatnonzero(norms < eps)
    if bad.size:
        raise DegenerateEmbeddingError(f"{label}: zero-norm row {int(bad[0])}")
    out = (flat.astype(np.float64) / norms[:, None]).astype(np.float32)
    return out.reshape(arr.shape)


def load_task(manifest_path: str | Path) -> LoadedTask:
    """Load and validate a task; all rows are renormalized to unit length."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: cannot parse manifest: {exc}") from exc
    missing = [k for k in MANIFEST_FIELDS if k not in doc]
    if missing:
        raise FormatError(f"{manifest_path}: missing manifest fields {missing}")

    base_dir = manifest_path.parent
    names = list(doc["class_names"])
    n = len(names)
    dim = int(doc["embed_dim"])
    shots = int(doc["shots"])

    def _load(key: str) -> tuple[np.ndarray, str]:
        path = base_dir / doc[key]
        return read_embx(path), str(path)

    text, text_path = _load("text_embeddings")
    support, support_path = _load("support")
    queries, queries_path = _load("query_features")
    labels_raw, labels_path = _load("query_labels")

    if text.shape != (n, dim):
        raise FormatError(f"{text_path}: expected shape {(n, dim)}, got {text.shape}")
    if support.shape != (n, shots, dim):
        raise FormatError(
            f"{support_path}: expected shape {(n, shots, dim)}, got {support.shape}"
        )
    if queries.ndim != 2 or queries.shape[1] != dim:
        raise FormatError(f"{queries_path}: expected Q x {dim}, got {queries.shape}")
    if labels_raw.shape != (queries.shape[0],):
        raise FormatError(
            f"{labels_path}: expected shape {(queries.shape[0],)}, got {labels_raw.shape}"
        )
    labels = labels_raw.astype(np.int64)
    if not np.array_equal(labels.astype(np.float32), labels_raw):
        raise FormatError(f"{labels_path}: labels must be integral class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise FormatError(f"{labels_path}: label out of range [0, {n})")

    split = doc.get("split")
    if split is not None:
        split = list(split)
        if len(split) != n or any(s not in (SIDE_BASE, SIDE_NOVEL) for s in split):
            raise FormatError(f"{manifest_path}: malformed split field")

    return LoadedTask(
        dataset_name=str(doc["dataset_name"]),
        embed_dim=dim,
        class_names=names,
        shots=shots,
        text=_renormalized(text, text_path),
        support=_renormalized(support, support_path),
        queries=_renormalized(queries, queries_path),
        labels=labels,
        split=split,
        manifest_path=manifest_path,
    )


def write_manifest(task: LoadedTask, out_dir: str | Path, name: str) -> Path:
    """Write a task's tensors and manifest under ``out_dir``; returns the
    manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "text_embeddings": (f"{name}.text.embx", task.text),
        "support": (f"{name}.support.embx", task.support),
        "query_features": (f"{name}.queries.embx", task.queries),
        "query_labels": (f"{name}.labels.embx", task.labels.astype(np.float32)),
    }
    doc: dict = {
        "dataset_name": task.dataset_name,
        "embed_dim": task.embed_dim,
        "class_names": task.class_names,
        "shots": task.shots,
    }
    if task.split is not None:
        doc["split"] = task.split
    for key, (fname, arr) in files.items():
        write_embx(out_dir / fname, arr)
        doc[key] = fname
    manifest_path = out_dir / f"{name}.manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def synth_task(spec: SynthSpec, out_dir: str | Path, name: str = "synth") -> Path:
    """Synthesize a clustered task, fully determined by ``spec.seed``.

    Class centers are random unit vectors; text embeddings, shots and queries
    are the centers plus isotropic Gaussian noise of per-component scale
    ``cluster_spread``, renormalized. The first ceil(base_fraction * N)
    classes are assigned to the base side.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    n, k, d, qpc = spec.n_classes, spec.shots, spec.dim, spec.queries_per_class

    centers = rng.standard_normal((n, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    def _cloud(shape) -> np.ndarray:
        noisy = centers.reshape((n,) + (1,) * (len(shape) - 2) + (d,)) + (
            spec.cluster_spread * rng.standard_normal(shape)
        )
        flat = noisy.reshape(-1, d)
        flat /= np.linalg.norm(flat, axis=1, keepdims=True)
        return flat.reshape(shape).astype(np.float32)

    text = _cloud((n, d))
    support = _cloud((n, k, d))
    queries = _cloud((n, qpc, d)).reshape(n * qpc, d)
    labels = np.repeat(np.arange(n, dtype=np.int64), qpc)

    n_base = math.ceil(spec.base_fraction * n)
    split = [SIDE_BASE if i < n_base else SIDE_NOVEL for i in range(n)]

    task = LoadedTask(
        dataset_name=name,
        embed_dim=d,
        class_names=[f"class_{i:03d}" for i in range(n)],
        shots=k,
        text=text,
        support=support,
        queries=queries,
        labels=labels,
        split=split,
    )
    return write_manifest(task, out_dir, name)


def per_class_accuracy(task: LoadedTask) -> np.ndarray:
    """Zero-shot top-1 accuracy per class over the task's query pool."""
    counts = np.bincount(task.labels, minlength=task.n_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise SplitError(
            f"class {int(empty[0])} ({task.class_names[int(empty[0])]}) has no queries"
        )
    pred = top1(zeroshot_logits(task.queries, task.text))
    hits = np.bincount(task.labels[pred == task.labels], minlength=task.n_classes)
    return hits / counts


def split_by_zeroshot(task: LoadedTask, base_fraction: float = 0.5) -> LoadedTask:
    """Assign classes to base/novel by descending zero-shot accuracy.

    The top ceil(base_fraction * N) classes become the base (easy) side, the
    rest the novel (hard) side; ties break by ascending class index.
    """
    if not 0.0 < base_fraction < 1.0:
        raise ConfigError(f"base_fraction must lie in (0,1), got {base_fraction}")
    acc = per_class_accuracy(task)
    # sort by (-accuracy, index): stable tie-break on the class index
    order = np.lexsort((np.arange(task.n_classes), -acc))
    n_base = math.ceil(base_fraction * task.n_classes)
    split = [SIDE_NOVEL] * task.n_classes
    for i in order[:n_base]:
        split[int(i)] = SIDE_BASE
    return replace(task, split=split)
