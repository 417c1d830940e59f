"""Command-line entry point.

One subcommand per workflow step. Every run writes its result under
``--out-dir`` with a stable filename ({subcommand}.json or .log) and prints a
reproducibility fingerprint. An optional ``--config`` file holds key=value
lines mirroring the flags; explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .errors import ConfigError, EngineError


def _apply_thread_cap() -> None:
    cap = os.environ.get("ENGINE_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _write_json(out_dir: Path, name: str, doc: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="metashot",
        description="Few-shot classification engine over precomputed embedding files.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def _add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out-dir", default=".", help="directory for outputs")
        p.add_argument("--config", default=None, help="key=value config file; flags win")
        subparsers[name] = p
        return p

    p = _add("synth", "synthesize a deterministic fixture task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--queries-per-class", type=int, default=200)
    p.add_argument("--spread", type=float, default=0.35)
    p.add_argument("--base-fraction", type=float, default=0.5)
    p.add_argument("--name", default="synth")

    p = _add("split", "assign base/novel classes by zero-shot accuracy")
    p.add_argument("--manifest", required=True)
    p.add_argument("--base-fraction", type=float, default=0.5)
    p.add_argument("--name", default=None, help="output manifest name (default: input name)")

    p = _add("eval-zeroshot", "evaluate the zero-shot classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", default="json", choices=["json", "markdown", "csv"])

    p = _add("search-tip", "grid-search cache-model hyper-parameters")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--alphas", type=_parse_floats, default=None, help="comma-separated")
    p.add_argument("--betas", type=_parse_floats, default=None, help="comma-separated")

    p = _add("eval-tip", "evaluate the cache-model classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--format", default="json", choices=["json", "markdown", "csv"])

    p = _add("train-meta", "meta-train the adapter on the base split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-min", type=float, default=1e-6)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--temperature", type=float, default=100.0)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--width", type=int, default=1)
    p.add_argument("--gate-mode", default="scalar", choices=["scalar", "vector"])
    p.add_argument("--value-proj", action="store_true")
    p.add_argument("--support-resample", default="fixed", choices=["fixed", "per_epoch"])

    p = _add("eval-meta", "evaluate a trained adapter checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gate-override", type=float, default=None)
    p.add_argument("--format", default="json", choices=["json", "markdown", "csv"])

    p = _add("transfer", "frozen cross-dataset evaluation")
    p.add_argument("--manifest", required=True, help="target task manifest")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--source", required=True, help="source dataset name")
    p.add_argument("--gate-override", type=float, default=None)
    p.add_argument("--format", default="json", choices=["json", "markdown", "csv"])

    p = _add("gradcheck", "finite-difference check of the analytic backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="number of random tasks")
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = _add("inspect", "dump embedding container headers")
    p.add_argument("paths", nargs="+")

    return parser, subparsers


def _apply_config_file(argv: list[str], parser, subparsers) -> None:
    """Fold key=value lines from --config into subparser defaults; flags win."""
    sub_name = next((a for a in argv if not a.startswith("-")), None)
    if sub_name not in subparsers:
        return
    cfg_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif a.startswith("--config="):
            cfg_path = a.split("=", 1)[1]
    if not cfg_path:
        return
    sp = subparsers[sub_name]
    actions = {
        a.dest: a
        for a in sp._actions
        if a.dest not in ("help", "config") and a.option_strings
    }
    overrides = {}
    for line in Path(cfg_path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line is not key=value: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {sorted(actions)}"
            )
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            overrides[dest] = value.lower() in ("1", "true", "yes")
        elif action.type is not None:
            overrides[dest] = action.type(value)
        else:
            overrides[dest] = value
    sp.set_defaults(**overrides)


def _load_task(path: str):
    from .store import load_task

    return load_task(path)


def _report_outputs(args, report, name: str) -> None:
    from .evalharness import emit_report

    out_dir = Path(args.out_dir)
    _write_json(out_dir, name, report.to_dict())
    fmt = getattr(args, "format", "json")
    sys.stdout.write(emit_report(report, fmt))
    print(f"fingerprint: {report.fingerprint}")


def _cmd_synth(args) -> int:
    from .store import SynthSpec, synth_task

    spec = SynthSpec(
        n_classes=args.classes,
        shots=args.shots,
        dim=args.dim,
        queries_per_class=args.queries_per_class,
        cluster_spread=args.spread,
        base_fraction=args.base_fraction,
        seed=args.seed,
    )
    manifest = synth_task(spec, args.out_dir, name=args.name)
    doc = {"manifest": str(manifest), "spec": vars(spec)}
    doc["fingerprint"] = _fingerprint(doc)
    _write_json(Path(args.out_dir), "synth", doc)
    print(f"wrote {manifest}")
    print(f"fingerprint: {doc['fingerprint']}")
    return 0


def _cmd_split(args) -> int:
    from .store import split_by_zeroshot, write_manifest

    task = _load_task(args.manifest)
    task = split_by_zeroshot(task, base_fraction=args.base_fraction)
    name = args.name or Path(args.manifest).name.removesuffix(".manifest.json")
    manifest = write_manifest(task, args.out_dir, name)
    doc = {
        "manifest": str(manifest),
        "base_fraction": args.base_fraction,
        "split": dict(zip(task.class_names, task.split)),
    }
    doc["fingerprint"] = _fingerprint(doc)
    _write_json(Path(args.out_dir), "split", doc)
    print(f"wrote {manifest}")
    print(f"fingerprint: {doc['fingerprint']}")
    return 0


def _cmd_eval_zeroshot(args) -> int:
    from .evalharness import METHOD_ZEROSHOT, eval_method

    report = eval_method(METHOD_ZEROSHOT, _load_task(args.manifest))
    _report_outputs(args, report, "eval-zeroshot")
    return 0


def _cmd_search_tip(args) -> int:
    import numpy as np

    from .tip import (
        DEFAULT_ALPHAS,
        DEFAULT_BETAS,
        CacheModel,
        holdout_split,
        search_tip,
        tip_logits,
        accuracy,
    )
    from .trainer import base_subtask

    task = _load_task(args.manifest)
    if task.split is not None:
        classes, support, queries, labels = base_subtask(task)
    else:
        classes, support, queries, labels = task.text, task.support, task.queries, task.labels
    _, val_idx = holdout_split(queries.shape[0], args.val_fraction, args.seed)
    cache = CacheModel.from_support(support)
    alphas = args.alphas or DEFAULT_ALPHAS
    betas = args.betas or DEFAULT_BETAS
    best = search_tip(queries[val_idx], labels[val_idx], classes, cache, alphas, betas)
    val_acc = accuracy(
        tip_logits(queries[val_idx], classes, cache, best), labels[val_idx]
    )
    doc = {
        "alpha": best.alpha,
        "beta": best.beta,
        "val_top1": 100.0 * val_acc,
        "val_fraction": args.val_fraction,
        "seed": args.seed,
        "grid": {"alphas": list(alphas), "betas": list(betas)},
    }
    doc["fingerprint"] = _fingerprint(doc)
    _write_json(Path(args.out_dir), "search-tip", doc)
    print(f"alpha={best.alpha} beta={best.beta} val_top1={100.0 * val_acc:.2f}")
    print(f"fingerprint: {doc['fingerprint']}")
    return 0


def _cmd_eval_tip(args) -> int:
    from .evalharness import METHOD_TIP, eval_method
    from .tip import TipParams

    report = eval_method(
        METHOD_TIP,
        _load_task(args.manifest),
        tip_params=TipParams(alpha=args.alpha, beta=args.beta),
    )
    _report_outputs(args, report, "eval-tip")
    return 0


def _cmd_train_meta(args) -> int:
    from . import adapter as ad
    from .trainer import TrainConfig, train

    task = _load_task(args.manifest)
    adapter_config = ad.AdapterConfig(
        dim=task.embed_dim,
        heads=args.heads,
        depth=args.depth,
        width=args.width,
        gate_mode=args.gate_mode,
        value_proj=args.value_proj,
    )
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        lr_min=args.lr_min,
        weight_decay=args.weight_decay,
        temperature=args.temperature,
        seed=args.seed,
        support_resample=args.support_resample,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(task, adapter_config, config, log_path=out_dir / "train-meta.log")
    header = {
        "seed": args.seed,
        "train_config": vars(config),
        "train_fingerprint": _fingerprint({"config": vars(config), "manifest": args.manifest}),
    }
    ckpt = ad.checkpoint_save(result.params, out_dir / "checkpoint.json", header)
    print(f"wrote {ckpt}")
    print(f"final epoch loss: {result.log[-1]['mean_loss']:.6f}")
    print(f"fingerprint: {header['train_fingerprint']}")
    return 0


def _cmd_eval_meta(args) -> int:
    from . import adapter as ad
    from .evalharness import METHOD_META, eval_method

    params, _ = ad.checkpoint_load(args.checkpoint)
    report = eval_method(
        METHOD_META,
        _load_task(args.manifest),
        params=params,
        gate_override=args.gate_override,
    )
    _report_outputs(args, report, "eval-meta")
    return 0


def _cmd_transfer(args) -> int:
    from . import adapter as ad
    from .evalharness import cross_dataset
    from .tip import TipParams

    params = None
    tip_params = None
    if args.checkpoint:
        params, _ = ad.checkpoint_load(args.checkpoint)
    if args.alpha is not None and args.beta is not None:
        tip_params = TipParams(alpha=args.alpha, beta=args.beta)
    report = cross_dataset(
        _load_task(args.manifest),
        source=args.source,
        params=params,
        tip_params=tip_params,
        gate_override=args.gate_override,
    )
    _report_outputs(args, report, "transfer")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(n_seeds=args.seeds, base_seed=args.seed)
    worst = max(r.max_rel_error for r in results)
    doc = {
        "seeds": args.seeds,
        "base_seed": args.seed,
        "tolerance": args.tolerance,
        "max_rel_error": worst,
        "results": [vars(r) for r in results],
    }
    doc["fingerprint"] = _fingerprint({k: doc[k] for k in ("seeds", "base_seed", "tolerance")})
    _write_json(Path(args.out_dir), "gradcheck", doc)
    print(f"max relative error: {worst:.3e}")
    print(f"fingerprint: {doc['fingerprint']}")
    if worst > args.tolerance:
        print(f"FAIL: exceeds tolerance {args.tolerance:.1e}", file=sys.stderr)
        return 1
    return 0


def _cmd_inspect(args) -> int:
    from .embx import read_header

    headers = {}
    for path in args.paths:
        info = read_header(path)
        headers[path] = info
        print(f"{path}: dtype=f32 dims={list(info['dims'])}")
    _write_json(Path(args.out_dir), "inspect", headers)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "eval-zeroshot": _cmd_eval_zeroshot,
    "search-tip": _cmd_search_tip,
    "eval-tip": _cmd_eval_tip,
    "train-meta": _cmd_train_meta,
    "eval-meta": _cmd_eval_meta,
    "transfer": _cmd_transfer,
    "gradcheck": _cmd_gradcheck,
    "inspect": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        _apply_config_file(argv, parser, subparsers)
        args = parser.parse_args(argv)
        return _COMMANDS[args.subcommand](args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
