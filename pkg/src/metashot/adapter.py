"""Gated multi-head cross-attention head that refines class embeddings.

Each class embedding attends to its own K support shots: the class vector is
projected to a query, the shots to keys, and the attention-weighted sum of the
*raw* shot vectors (no value projection by default) is added back through a
learned sigmoid gate:

    q   = w  W2^T                 (per block)
    k   = F  W1^T
    a_h = softmax(k_h q_h / sqrt(d_head))     per head h
    Fh  = concat_h(a_h^T F_h)                 raw shot sub-vectors as values
    w  <- w + sigmoid(w . wg + bg) * Fh

Blocks can be cascaded (depth) and the projections widened (width). The
backward pass is analytic, written against the mean cross-entropy of
temperature-scaled cosine logits, and is verified against central finite
differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embx import read_embx, write_embx
from .errors import ConfigError, NumericError, ShapeError, SupportError
from .tensor import l2_normalize_rows, make_rng, scaled_uniform
from .zeroshot import zeroshot_logits

GATE_SCALAR = "scalar"
GATE_VECTOR = "vector"


@dataclass(frozen=True)
class AdapterConfig:
    dim: int
    heads: int = 8
    depth: int = 1
    width: int = 1
    gate_mode: str = GATE_SCALAR
    value_proj: bool = False

    def __post_init__(self) -> None:
        if self.dim < 1 or self.heads < 1 or self.depth < 1 or self.width < 1:
            raise ConfigError(f"invalid adapter config: {self}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.gate_mode not in (GATE_SCALAR, GATE_VECTOR):
            raise ConfigError(f"unknown gate_mode {self.gate_mode!r}")

    @property
    def proj_dim(self) -> int:
        return self.width * self.dim

    @property
    def qk_head_dim(self) -> int:
        return self.proj_dim // self.heads

    @property
    def val_head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class BlockParams:
    w1: np.ndarray  # (width*D) x D key projection
    w2: np.ndarray  # (width*D) x D query projection
    wg: np.ndarray  # (D,) scalar gate | (D, D) vector gate
    bg: np.ndarray  # () scalar gate | (D,) vector gate
    wv: np.ndarray | None = None  # D x D, only for the value-projection ablation

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("w1", self.w1), ("w2", self.w2), ("wg", self.wg), ("bg", self.bg)]
        if self.wv is not None:
            out.append(("wv", self.wv))
        return out


@dataclass
class AdapterParams:
    config: AdapterConfig
    blocks: list[BlockParams]

    @classmethod
    def init(cls, config: AdapterConfig, seed: int = 0) -> "AdapterParams":
        """Scaled-uniform projections, zero gate weights, gate bias -4 so the
        initial model is close to the zero-shot classifier."""
        rng = make_rng(seed)
        d, p = config.dim, config.proj_dim
        blocks = []
        for _ in range(config.depth):
            w1 = scaled_uniform(rng, (p, d), fan_in=d)
            w2 = scaled_uniform(rng, (p, d), fan_in=d)
            wv = scaled_uniform(rng, (d, d), fan_in=d) if config.value_proj else None
            if config.gate_mode == GATE_SCALAR:
                wg = np.zeros(d, dtype=np.float32)
                bg = np.float32(-4.0).reshape(())
            else:
                wg = np.zeros((d, d), dtype=np.float32)
                bg = np.full(d, -4.0, dtype=np.float32)
            blocks.append(BlockParams(w1=w1, w2=w2, wg=wg, bg=np.asarray(bg), wv=wv))
        return cls(config=config, blocks=blocks)

    def param_count(self) -> int:
        return sum(int(t.size) for b in self.blocks for _, t in b.tensors())

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [t.ravel().astype(np.float64) for b in self.blocks for _, t in b.tensors()]
        )

    def from_vector(self, vec: np.ndarray, dtype=np.float32) -> "AdapterParams":
        """New params with the same structure, values taken from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.param_count():
            raise ShapeError(f"vector has {vec.size} entries, expected {self.param_count()}")
        blocks = []
        off = 0
        for b in self.blocks:
            fields = {}
            for name, t in b.tensors():
                fields[name] = vec[off : off + t.size].reshape(t.shape).astype(dtype)
                off += t.size
            blocks.append(BlockParams(wv=None, **fields) if "wv" not in fields else BlockParams(**fields))
        return AdapterParams(config=self.config, blocks=blocks)

    def zeros_like(self) -> "AdapterParams":
        blocks = [
            BlockParams(
                **{name: np.zeros_like(t, dtype=np.float64) for name, t in b.tensors()},
                **({} if b.wv is not None else {"wv": None}),
            )
            for b in self.blocks
        ]
        return AdapterParams(config=self.config, blocks=blocks)


def param_count(config: AdapterConfig) -> int:
    """Closed-form parameter count; for the default scalar-gate, no-VP model
    this is depth * (2 * width * D^2 + D + 1)."""
    d = config.dim
    per_block = 2 * config.width * d * d
    per_block += d * d + d if config.gate_mode == GATE_VECTOR else d + 1
    if config.value_proj:
        per_block += d * d
    return config.depth * per_block


@dataclass
class RefinedClasses:
    refined: np.ndarray  # N x D, float32
    gate_values: np.ndarray  # depth x N (scalar gate) | depth x N x D (vector gate)
    attention: np.ndarray  # depth x N x heads x K, rows stochastic over K

    def residual(self, classes: np.ndarray) -> np.ndarray:
        return self.refined - np.asarray(classes, dtype=np.float32)


def _check_inputs(classes: np.ndarray, support: np.ndarray, config: AdapterConfig) -> None:
    if classes.ndim != 2 or support.ndim != 3:
        raise ShapeError(
            f"classes must be N x D and support N x K x D, got {classes.shape} / {support.shape}"
        )
    n, d = classes.shape
    if support.shape[0] != n or support.shape[2] != d or d != config.dim:
        raise ShapeError(
            f"support {support.shape} inconsistent with classes {classes.shape} / dim {config.dim}"
        )
    if support.shape[1] == 0:
        raise SupportError("class 0 has no support shots (K = 0)")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _forward(
    classes: np.ndarray,
    support: np.ndarray,
    params: AdapterParams,
    gate_override: float | None,
):
    """Float64 forward pass; returns the refined embeddings and a per-block
    trace with everything the backward pass needs."""
    cfg = params.config
    _check_inputs(np.asarray(classes), np.asarray(support), cfg)
    n, k, d = support.shape
    h, dq, dv = cfg.heads, cfg.qk_head_dim, cfg.val_head_dim

    w = np.asarray(classes, dtype=np.float64)
    s = np.asarray(support, dtype=np.float64)
    trace = []
    for li, blk in enumerate(params.blocks):
        w1 = blk.w1.astype(np.float64)
        w2 = blk.w2.astype(np.float64)
        q = w @ w2.T  # N x (m*D)
        kproj = np.einsum("nkd,pd->nkp", s, w1)  # N x K x (m*D)
        qh = q.reshape(n, h, dq)
        kh = kproj.reshape(n, k, h, dq)
        scores = np.einsum("nkhq,nhq->nhk", kh, qh) / np.sqrt(dq)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)  # N x H x K
        if cfg.value_proj:
            vals = np.einsum("nkd,ed->nke", s, blk.wv.astype(np.float64))
        else:
            vals = s
        vh = vals.reshape(n, k, h, dv)
        fhat = np.einsum("nhk,nkhv->nhv", attn, vh).reshape(n, d)
        if cfg.gate_mode == GATE_SCALAR:
            z = w @ blk.wg.astype(np.float64) + float(blk.bg)  # (N,)
        else:
            z = w @ blk.wg.astype(np.float64).T + blk.bg.astype(np.float64)  # N x D
        gate = np.full_like(z, float(gate_override)) if gate_override is not None else _sigmoid(z)
        g_col = gate[:, None] if cfg.gate_mode == GATE_SCALAR else gate
        w_out = w + g_col * fhat
        if not np.all(np.isfinite(w_out)):
            raise NumericError(f"non-finite refined embedding in block {li}")
        trace.append(
            {"w_in": w, "qh": qh, "kh": kh, "attn": attn, "vh": vh, "fhat": fhat, "gate": gate}
        )
        w = w_out
    return w, trace


def refine(
    classes: np.ndarray,
    support: np.ndarray,
    params: AdapterParams,
    gate_override: float | None = None,
) -> RefinedClasses:
    """Refine each class embedding from its own K support shots."""
    refined, trace = _forward(classes, support, params, gate_override)
    return RefinedClasses(
        refined=refined.astype(np.float32),
        gate_values=np.stack([t["gate"] for t in trace]),
        attention=np.stack([t["attn"] for t in trace]),
    )


def adapter_logits(
    queries: np.ndarray,
    classes: np.ndarray,
    support: np.ndarray,
    params: AdapterParams,
    gate_override: float | None = None,
) -> np.ndarray:
    """Cosine logits against the refined class embeddings, Q x N float32."""
    refined = refine(classes, support, params, gate_override).refined
    return zeroshot_logits(queries, refined)


def loss_and_grads(
    queries: np.ndarray,
    labels: np.ndarray,
    classes: np.ndarray,
    support: np.ndarray,
    params: AdapterParams,
    temperature: float,
    gate_override: float | None = None,
) -> tuple[float, AdapterParams]:
    """Mean cross-entropy of temperature-scaled cosine logits and its analytic
    gradient w.r.t. every adapter parameter. Runs entirely in float64."""
    cfg = params.config
    labels = np.asarray(labels)
    f = l2_normalize_rows(np.asarray(queries, dtype=np.float64))
    refined, trace = _forward(classes, support, params, gate_override)
    s = np.asarray(support, dtype=np.float64)
    n, k, d = s.shape
    h, dq, dv = cfg.heads, cfg.qk_head_dim, cfg.val_head_dim
    nq = f.shape[0]

    # loss over temperature-scaled cosine logits
    r = np.sqrt(np.sum(refined**2, axis=1))
    u = refined / r[:, None]
    logits = temperature * (f @ u.T)  # Q x N
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1)) + logits.max(axis=1)
    loss = float(np.mean(lse - logits[np.arange(nq), labels]))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")

    probs = np.exp(shifted) / np.sum(np.exp(shifted), axis=1, keepdims=True)
    dlogits = probs.copy()
    dlogits[np.arange(nq), labels] -= 1.0
    dlogits /= nq
    du = temperature * (dlogits.T @ f)  # N x D
    # through the row normalization u = refined / |refined|
    dw = (du - np.sum(du * u, axis=1, keepdims=True) * u) / r[:, None]

    grads = params.zeros_like()
    inv_sqrt_dq = 1.0 / np.sqrt(dq)
    for li in range(cfg.depth - 1, -1, -1):
        blk, gblk, t = params.blocks[li], grads.blocks[li], trace[li]
        w_in, attn, vh, fhat, gate = t["w_in"], t["attn"], t["vh"], t["fhat"], t["gate"]
        if cfg.gate_mode == GATE_SCALAR:
            dfhat = dw * gate[:, None]
            dgate = np.sum(dw * fhat, axis=1)  # (N,)
        else:
            dfhat = dw * gate
            dgate = dw * fhat  # N x D
        dw_in = dw.copy()  # residual path
        if gate_override is None:
            dz = dgate * gate * (1.0 - gate)
            if cfg.gate_mode == GATE_SCALAR:
                gblk.wg += w_in.T @ dz
                gblk.bg += np.sum(dz)
                dw_in += dz[:, None] * blk.wg.astype(np.float64)[None, :]
            else:
                gblk.wg += dz.T @ w_in
                gblk.bg += np.sum(dz, axis=0)
                dw_in += dz @ blk.wg.astype(np.float64)

        dfh = dfhat.reshape(n, h, dv)
        dattn = np.einsum("nhv,nkhv->nhk", dfh, vh)
        if cfg.value_proj:
            dvh = np.einsum("nhk,nhv->nkhv", attn, dfh)
            gblk.wv += np.einsum("nke,nkd->ed", dvh.reshape(n, k, d), s)
        dscores = attn * (dattn - np.sum(attn * dattn, axis=-1, keepdims=True))
        dqh = np.einsum("nhk,nkhq->nhq", dscores, t["kh"]) * inv_sqrt_dq
        dkh = np.einsum("nhk,nhq->nkhq", dscores, t["qh"]) * inv_sqrt_dq
        dq_flat = dqh.reshape(n, cfg.proj_dim)
        dk_flat = dkh.reshape(n, k, cfg.proj_dim)
        gblk.w2 += dq_flat.T @ w_in
        gblk.w1 += np.einsum("nkp,nkd->pd", dk_flat, s)
        dw_in += dq_flat @ blk.w2.astype(np.float64)
        dw = dw_in
    return loss, grads


def checkpoint_save(
    params: AdapterParams, path: str | Path, header_extra: dict | None = None
) -> Path:
    """Write a JSON header plus one EMBX container per parameter tensor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.name.removesuffix(".json")
    cfg = params.config
    tensors = {}
    for li, blk in enumerate(params.blocks):
        for name, t in blk.tensors():
            fname = f"{stem}.b{li}.{name}.embx"
            write_embx(path.parent / fname, np.atleast_1d(t))
            tensors[f"b{li}.{name}"] = fname
    header = {
        "dim": cfg.dim,
        "heads": cfg.heads,
        "depth": cfg.depth,
        "width": cfg.width,
        "gate_mode": cfg.gate_mode,
        "value_proj": cfg.value_proj,
        "tensors": tensors,
    }
    if header_extra:
        header.update(header_extra)
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def checkpoint_load(path: str | Path) -> tuple[AdapterParams, dict]:
    """Load a checkpoint written by :func:`checkpoint_save`."""
    path = Path(path)
    header = json.loads(path.read_text(encoding="utf-8"))
    cfg = AdapterConfig(
        dim=int(header["dim"]),
        heads=int(header["heads"]),
        depth=int(header["depth"]),
        width=int(header["width"]),
        gate_mode=header.get("gate_mode", GATE_SCALAR),
        value_proj=bool(header.get("value_proj", False)),
    )
    blocks = []
    for li in range(cfg.depth):
        def _read(name: str) -> np.ndarray:
            return read_embx(path.parent / header["tensors"][f"b{li}.{name}"])

        w1, w2, wg = _read("w1"), _read("w2"), _read("wg")
        bg = _read("bg")
        bg = bg.reshape(()) if cfg.gate_mode == GATE_SCALAR else bg
        wv = _read("wv") if cfg.value_proj else None
        blocks.append(BlockParams(w1=w1, w2=w2, wg=wg, bg=bg, wv=wv))
    return AdapterParams(config=cfg, blocks=blocks), header


def checkpoint_fingerprint(params: AdapterParams) -> str:
    """Stable hash over config and parameter bytes."""
    hsh = hashlib.sha256()
    hsh.update(repr(params.config).encode())
    for blk in params.blocks:
        for _, t in blk.tensors():
            hsh.update(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return hsh.hexdigest()[:16]
