"""Evaluation protocols and reports.

Three protocols over loaded tasks: within-dataset base/novel evaluation,
cross-dataset transfer of a frozen adapter or tuned cache hyper-parameters,
and plain all-classes evaluation. Side evaluation is strictly side-local: the
classifier is rebuilt over that side's classes only, using their text
embeddings and their K shots.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adapter as ad
from .errors import ConfigError, TransferError
from .store import LoadedTask
from .tip import CacheModel, TipParams, tip_logits
from .zeroshot import top1, zeroshot_logits

METHOD_ZEROSHOT = "zeroshot"
METHOD_TIP = "tip"
METHOD_META = "meta"

CSV_HEADER = "method,source,target,shots,base,novel,hmean"


def harmonic_mean(a: float, b: float) -> float:
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


@dataclass
class EvalReport:
    method: str
    source: str
    target: str
    shots: int
    top1_base: float | None = None
    top1_novel: float | None = None
    top1_all: float | None = None
    harmonic_mean: float | None = None
    per_class_acc: dict = field(default_factory=dict)
    fingerprint: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _side_logits(
    method: str,
    task: LoadedTask,
    class_idx: np.ndarray,
    queries: np.ndarray,
    *,
    params: ad.AdapterParams | None = None,
    tip_params: TipParams | None = None,
    gate_override: float | None = None,
) -> np.ndarray:
    classes = task.text[class_idx]
    if method == METHOD_ZEROSHOT:
        return zeroshot_logits(queries, classes)
    if method == METHOD_TIP:
        if tip_params is None:
            raise ConfigError("tip evaluation requires TipParams")
        cache = CacheModel.from_support(task.support[class_idx])
        return tip_logits(queries, classes, cache, tip_params)
    if method == METHOD_META:
        if params is None:
            raise ConfigError("meta evaluation requires an adapter checkpoint")
        return ad.adapter_logits(
            queries, classes, task.support[class_idx], params, gate_override
        )
    raise ConfigError(f"unknown method {method!r}")


def eval_side(
    method: str,
    task: LoadedTask,
    side: str,
    *,
    params: ad.AdapterParams | None = None,
    tip_params: TipParams | None = None,
    gate_override: float | None = None,
) -> tuple[float, list[float]]:
    """Top-1 percent accuracy and per-class accuracies on one side.

    The classifier is |side|-way: only the side's classes, their text
    embeddings and their shots participate.
    """
    class_idx = task.side_indices(side)
    if class_idx.size == 0:
        raise ConfigError(f"side {side!r} has no classes")
    remap = -np.ones(task.n_classes, dtype=np.int64)
    remap[class_idx] = np.arange(class_idx.size)
    mask = remap[task.labels] >= 0
    queries = task.queries[mask]
    labels = remap[task.labels[mask]]
    logits = _side_logits(
        method,
        task,
        class_idx,
        queries,
        params=params,
        tip_params=tip_params,
        gate_override=gate_override,
    )
    pred = top1(logits)
    acc = float(np.mean(pred == labels)) * 100.0
    counts = np.bincount(labels, minlength=class_idx.size)
    hits = np.bincount(labels[pred == labels], minlength=class_idx.size)
    per_class = [float(x) * 100.0 for x in hits / np.maximum(counts, 1)]
    return acc, per_class


def _fingerprint(parts: dict) -> str:
    return hashlib.sha256(
        json.dumps(parts, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def eval_method(
    method: str,
    task: LoadedTask,
    *,
    source: str | None = None,
    params: ad.AdapterParams | None = None,
    tip_params: TipParams | None = None,
    gate_override: float | None = None,
    config: dict | None = None,
) -> EvalReport:
    """Evaluate one method on a task; both sides when a split is present,
    otherwise all classes."""
    config = dict(config or {})
    if tip_params is not None:
        config.setdefault("alpha", tip_params.alpha)
        config.setdefault("beta", tip_params.beta)
    if params is not None:
        config.setdefault("checkpoint_hash", ad.checkpoint_fingerprint(params))
    if gate_override is not None:
        config.setdefault("gate_override", gate_override)
    report = EvalReport(
        method=method,
        source=source or task.dataset_name,
        target=task.dataset_name,
        shots=task.shots,
        config=config,
    )
    kwargs = dict(params=params, tip_params=tip_params, gate_override=gate_override)
    if task.split is None:
        report.top1_all, report.per_class_acc["all"] = eval_side(method, task, "all", **kwargs)
    else:
        report.top1_base, report.per_class_acc["base"] = eval_side(
            method, task, "base", **kwargs
        )
        report.top1_novel, report.per_class_acc["novel"] = eval_side(
            method, task, "novel", **kwargs
        )
        report.harmonic_mean = harmonic_mean(report.top1_base, report.top1_novel)
    report.fingerprint = _fingerprint(
        {"method": method, "target": report.target, "source": report.source, **config}
    )
    return report


def cross_dataset(
    target_task: LoadedTask,
    *,
    source: str,
    params: ad.AdapterParams | None = None,
    tip_params: TipParams | None = None,
    gate_override: float | None = None,
) -> EvalReport:
    """Frozen transfer: no updates; the target's own text embeddings and shots
    drive the refinement or the cache."""
    if params is not None and params.config.dim != target_task.embed_dim:
        raise TransferError(
            f"checkpoint dim {params.config.dim} != target dim {target_task.embed_dim}"
        )
    method = METHOD_META if params is not None else METHOD_TIP
    if params is None and tip_params is None:
        raise ConfigError("transfer needs an adapter checkpoint or TipParams")
    return eval_method(
        method,
        target_task,
        source=source,
        params=params,
        tip_params=tip_params,
        gate_override=gate_override,
        config={"protocol": "cross_dataset"},
    )


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.2f}"


def emit_report(report: EvalReport, fmt: str = "json") -> str:
    """Render a report as json, markdown, or csv with stable field order."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        buf.write(
            ",".join(
                [
                    report.method,
                    report.source,
                    report.target,
                    str(report.shots),
                    _fmt(report.top1_base),
                    _fmt(report.top1_novel),
                    _fmt(report.harmonic_mean),
                ]
            )
            + "\n"
        )
        return buf.getvalue()
    if fmt == "markdown":
        lines = [
            f"| method | source | target | shots | base | novel | H | all |",
            f"|---|---|---|---|---|---|---|---|",
            "| "
            + " | ".join(
                [
                    report.method,
                    report.source,
                    report.target,
                    str(report.shots),
                    _fmt(report.top1_base),
                    _fmt(report.top1_novel),
                    _fmt(report.harmonic_mean),
                    _fmt(report.top1_all),
                ]
            )
            + " |",
        ]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}")


def report_from_dict(doc: dict) -> EvalReport:
    return EvalReport(**doc)
