"""Desk-scale decoder-only next-token model.

Parameters live in one flat vector with a named-shape manifest, which is
the unit the federated simulator exchanges and the attack/defense code
manipulates.  Forward and backward passes are written directly in numpy so
training is deterministic and the gradient can be checked against finite
differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    EmptyBatch,
    IdOutOfRange,
    InvalidConfig,
    InvalidTemperature,
    SequenceTooLong,
)
from .euler import TokenSequence
from .netlist import CircuitType
from .vocab import BOS, EOS, PAD, SPECIAL_TOKENS, Vocabulary


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    context_len: int
    vocab_size: int
    tie_output: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise InvalidConfig("d_model must be divisible by n_heads")
        if self.context_len < 2:
            raise InvalidConfig("context_len must be >= 2")
        if min(self.n_layers, self.n_heads, self.d_model, self.vocab_size) < 1:
            raise InvalidConfig("model dimensions must be positive")


def paper_preset() -> ModelConfig:
    return ModelConfig(6, 6, 384, 1024, 1029)


def desk_preset(vocab_size: int) -> ModelConfig:
    return ModelConfig(2, 2, 64, 256, vocab_size)


def manifest(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, v, ctx = config.d_model, config.vocab_size, config.context_len
    out: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (v, d)),
        ("pos_emb", (ctx, d)),
    ]
    for i in range(config.n_layers):
        out += [
            (f"l{i}.ln1_g", (d,)),
            (f"l{i}.ln1_b", (d,)),
            (f"l{i}.qkv_w", (d, 3 * d)),
            (f"l{i}.qkv_b", (3 * d,)),
            (f"l{i}.att_w", (d, d)),
            (f"l{i}.att_b", (d,)),
            (f"l{i}.ln2_g", (d,)),
            (f"l{i}.ln2_b", (d,)),
            (f"l{i}.mlp_in_w", (d, 4 * d)),
            (f"l{i}.mlp_in_b", (4 * d,)),
            (f"l{i}.mlp_out_w", (4 * d, d)),
            (f"l{i}.mlp_out_b", (d,)),
        ]
    out += [("ln_f_g", (d,)), ("ln_f_b", (d,))]
    if not config.tie_output:
        out.append(("out_w", (d, v)))
    out.append(("out_b", (v,)))
    return out


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in manifest(config))


class ModelParams:
    """Flat parameter vector plus named views into it."""

    def __init__(self, config: ModelConfig, flat: np.ndarray):
        expected = param_count(config)
        if flat.shape != (expected,):
            raise InvalidConfig(f"flat vector has {flat.shape}, manifest needs ({expected},)")
        self.config = config
        self.flat = flat
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in manifest(config):
            size = int(np.prod(shape))
            self._views[name] = flat[offset : offset + size].reshape(shape)
            offset += size

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.flat.copy())

    @property
    def out_matrix(self) -> np.ndarray:
        if self.config.tie_output:
            return self._views["tok_emb"].T
        return self._views["out_w"]


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Scaled-normal weights, unit layer-norm gains, zero biases."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    chunks = []
    for name, shape in manifest(config):
        base = name.split(".")[-1]
        if base.endswith("_b") or base == "ln_f_b":
            arr = np.zeros(shape)
        elif base in ("ln1_g", "ln2_g", "ln_f_g"):
            arr = np.ones(shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        chunks.append(arr.reshape(-1))
    return ModelParams(config, np.concatenate(chunks).astype(dtype))


def zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams(params.config, np.zeros_like(params.flat))


# ---------------------------------------------------------------------------
# forward / backward


def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + 1e-5)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


def _relu(x):
    mask = x > 0
    return x * mask, mask


def _relu_bwd(dy, mask):
    return dy * mask


def _pad_batch(batch: list[list[int]], context_len: int) -> np.ndarray:
    if not batch:
        raise EmptyBatch("batch has no sequences")
    longest = max(len(s) for s in batch)
    if longest > context_len:
        raise SequenceTooLong(f"sequence length {longest} > context_len {context_len}")
    if longest < 2:
        raise EmptyBatch("sequences must have at least 2 ids to form a prediction")
    ids = np.full((len(batch), longest), PAD, dtype=np.int64)
    for i, s in enumerate(batch):
        ids[i, : len(s)] = s
    return ids


def _forward(params: ModelParams, ids: np.ndarray, want_cache: bool):
    cfg = params.config
    B, T = ids.shape
    H, d = cfg.n_heads, cfg.d_model
    hd = d // H
    scale = 1.0 / np.sqrt(hd)

    x = params["tok_emb"][ids] + params["pos_emb"][:T]
    causal = np.triu(np.ones((T, T), dtype=bool), k=1)
    caches = []
    for i in range(cfg.n_layers):
        ln1, c_ln1 = _layernorm(x, params[f"l{i}.ln1_g"], params[f"l{i}.ln1_b"])
        qkv = ln1 @ params[f"l{i}.qkv_w"] + params[f"l{i}.qkv_b"]
        q, k, v = np.split(qkv, 3, axis=-1)
        q = q.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        k = k.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        v = v.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        att = (q @ k.transpose(0, 1, 3, 2)) * scale
        att = np.where(causal, att.dtype.type(-np.inf), att)
        att = att - att.max(-1, keepdims=True)
        expa = np.exp(att)
        probs = expa / expa.sum(-1, keepdims=True)
        ctx = probs @ v
        merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, d)
        attn_out = merged @ params[f"l{i}.att_w"] + params[f"l{i}.att_b"]
        x1 = x + attn_out
        ln2, c_ln2 = _layernorm(x1, params[f"l{i}.ln2_g"], params[f"l{i}.ln2_b"])
        hidden = ln2 @ params[f"l{i}.mlp_in_w"] + params[f"l{i}.mlp_in_b"]
        act, c_relu = _relu(hidden)
        mlp_out = act @ params[f"l{i}.mlp_out_w"] + params[f"l{i}.mlp_out_b"]
        x2 = x1 + mlp_out
        if want_cache:
            caches.append((ln1, c_ln1, q, k, v, probs, merged, x1, ln2, c_ln2, c_relu, act))
        x = x2
    ln_f, c_lnf = _layernorm(x, params["ln_f_g"], params["ln_f_b"])
    logits = ln_f @ params.out_matrix + params["out_b"]
    cache = (ids, caches, ln_f, c_lnf, x) if want_cache else None
    return logits, cache


def _loss_from_logits(logits: np.ndarray, ids: np.ndarray):
    """Masked next-token cross entropy; returns (total, count, dlogits)."""
    targets = ids[:, 1:]
    lg = logits[:, :-1, :]
    mask = targets != PAD
    count = int(mask.sum())
    if count == 0:
        raise EmptyBatch("batch contains no non-PAD predictions")
    m = lg.max(-1, keepdims=True)
    z = lg - m
    lse = np.log(np.exp(z).sum(-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    total = -(picked * mask).sum()
    probs = np.exp(logp)
    dlg = probs.copy()
    np.put_along_axis(dlg, targets[..., None], np.take_along_axis(dlg, targets[..., None], -1) - 1.0, -1)
    dlg *= mask[..., None]
    dlogits = np.zeros_like(logits)
    dlogits[:, :-1, :] = dlg
    return float(total), count, dlogits


def loss(params: ModelParams, batch: list[list[int]]) -> tuple[float, np.ndarray]:
    """Mean masked cross entropy and its gradient as a flat vector."""
    cfg = params.config
    ids = _pad_batch(batch, cfg.context_len)
    logits, cache = _forward(params, ids, want_cache=True)
    total, count, dlogits = _loss_from_logits(logits, ids)
    dlogits /= count

    grad = zeros_like(params)
    _, caches, ln_f, c_lnf, x_final = cache
    B, T = ids.shape
    H, d = cfg.n_heads, cfg.d_model
    hd = d // H
    scale = 1.0 / np.sqrt(hd)

    grad["out_b"][...] = dlogits.sum((0, 1))
    if cfg.tie_output:
        grad["tok_emb"][...] += (dlogits.reshape(-1, cfg.vocab_size).T @ ln_f.reshape(-1, d))
    else:
        grad["out_w"][...] = ln_f.reshape(-1, d).T @ dlogits.reshape(-1, cfg.vocab_size)
    dln_f = dlogits @ params.out_matrix.T
    dx, dg, db = _layernorm_bwd(dln_f, c_lnf)
    grad["ln_f_g"][...] = dg
    grad["ln_f_b"][...] = db

    for i in reversed(range(cfg.n_layers)):
        ln1, c_ln1, q, k, v, probs, merged, x1, ln2, c_ln2, c_relu, act = caches[i]
        # mlp branch
        dmlp_out = dx
        grad[f"l{i}.mlp_out_b"][...] = dmlp_out.sum((0, 1))
        grad[f"l{i}.mlp_out_w"][...] = act.reshape(-1, 4 * d).T @ dmlp_out.reshape(-1, d)
        dact = dmlp_out @ params[f"l{i}.mlp_out_w"].T
        dhidden = _relu_bwd(dact, c_relu)
        grad[f"l{i}.mlp_in_b"][...] = dhidden.sum((0, 1))
        grad[f"l{i}.mlp_in_w"][...] = ln2.reshape(-1, d).T @ dhidden.reshape(-1, 4 * d)
        dln2 = dhidden @ params[f"l{i}.mlp_in_w"].T
        dx1, dg2, db2 = _layernorm_bwd(dln2, c_ln2)
        grad[f"l{i}.ln2_g"][...] = dg2
        grad[f"l{i}.ln2_b"][...] = db2
        dx1 = dx1 + dx  # residual
        # attention branch
        dattn_out = dx1
        grad[f"l{i}.att_b"][...] = dattn_out.sum((0, 1))
        grad[f"l{i}.att_w"][...] = merged.reshape(-1, d).T @ dattn_out.reshape(-1, d)
        dmerged = dattn_out @ params[f"l{i}.att_w"].T
        dctx = dmerged.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        dprobs = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ dctx
        datt = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
        dq = (datt @ k) * scale
        dk = (datt.transpose(0, 1, 3, 2) @ q) * scale
        dqkv = np.concatenate(
            [
                dq.transpose(0, 2, 1, 3).reshape(B, T, d),
                dk.transpose(0, 2, 1, 3).reshape(B, T, d),
                dv.transpose(0, 2, 1, 3).reshape(B, T, d),
            ],
            axis=-1,
        )
        grad[f"l{i}.qkv_b"][...] = dqkv.sum((0, 1))
        grad[f"l{i}.qkv_w"][...] = ln1.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
        dln1 = dqkv @ params[f"l{i}.qkv_w"].T
        dx_ln, dg1, db1 = _layernorm_bwd(dln1, c_ln1)
        grad[f"l{i}.ln1_g"][...] = dg1
        grad[f"l{i}.ln1_b"][...] = db1
        dx = dx1 + dx_ln

    # scatter-add token gradients via a one-hot matmul (faster than ufunc.at)
    ids_flat = ids.reshape(-1)
    onehot = np.zeros((ids_flat.size, cfg.vocab_size), dtype=dx.dtype)
    onehot[np.arange(ids_flat.size), ids_flat] = 1.0
    grad["tok_emb"][...] += onehot.T @ dx.reshape(-1, d)
    grad["pos_emb"][:T] += dx.sum(0)
    return total / count, grad.flat


def eval_loss(params: ModelParams, data: list[list[int]], batch_size: int = 32) -> float:
    """Dataset mean cross entropy, weighted by prediction count."""
    total, count = 0.0, 0
    for i in range(0, len(data), batch_size):
        chunk = data[i : i + batch_size]
        ids = _pad_batch(chunk, params.config.context_len)
        logits, _ = _forward(params, ids, want_cache=False)
        t, c, _ = _loss_from_logits(logits, ids)
        total += t
        count += c
    return total / count


def train_steps(
    params: ModelParams,
    data: list[list[int]],
    steps: int,
    batch_size: int,
    lr: float,
    seed: int,
) -> tuple[ModelParams, float | None]:
    """Plain seeded mini-batch SGD; returns (new params, mean step loss)."""
    if not data:
        raise EmptyBatch("training data is empty")
    if steps == 0:
        return params.copy(), None
    rng = np.random.default_rng(seed)
    out = params.copy()
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, len(data), size=batch_size)
        batch = [data[j] for j in idx]
        step_loss, grad = loss(out, batch)
        out.flat -= np.asarray(lr, dtype=out.flat.dtype) * grad
        losses.append(step_loss)
    return out, float(np.mean(losses))


def generate(
    params: ModelParams,
    vocab: Vocabulary,
    max_len: int,
    temperature: float,
    seed: int,
    prompt_type: CircuitType | None = None,
) -> TokenSequence:
    """Sample from BOS (plus optional type tag) until EOS or max_len ids.

    temperature 0 means greedy argmax.  The returned sequence carries the
    sampled or prompted type tag as circuit_type; specials and the tag are
    stripped from the token list.
    """
    cfg = params.config
    if max_len > cfg.context_len:
        raise SequenceTooLong(f"max_len {max_len} > context_len {cfg.context_len}")
    if temperature < 0:
        raise InvalidTemperature(str(temperature))
    rng = np.random.default_rng(seed)
    lookup = vocab.token_to_id
    ids = [BOS]
    if prompt_type is not None:
        ids.append(lookup[prompt_type.tag])
    while len(ids) < max_len:
        logits, _ = _forward(params, np.array([ids], dtype=np.int64), want_cache=False)
        step = logits[0, -1].astype(np.float64)
        if temperature == 0:
            nxt = int(step.argmax())
        else:
            z = step / temperature
            z -= z.max()
            p = np.exp(z)
            p /= p.sum()
            nxt = int(rng.choice(cfg.vocab_size, p=p))
        ids.append(nxt)
        if nxt == EOS:
            break

    tag_map = {t.tag: t for t in CircuitType}
    ctype = prompt_type
    tokens = []
    for i in ids[1:]:
        tok = vocab.id_to_token[i] if 0 <= i < vocab.size else "<UNK>"
        if tok in SPECIAL_TOKENS:
            continue
        if tok in tag_map:
            if ctype is None:
                ctype = tag_map[tok]
            continue
        tokens.append(tok)
    return TokenSequence(tuple(tokens), closed=False, circuit_type=ctype)


def embed_tokens(params: ModelParams, ids) -> np.ndarray:
    """Embedding-matrix rows for the given token ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= params.config.vocab_size):
        raise IdOutOfRange("token id outside vocabulary")
    return params["tok_emb"][ids]


# ---------------------------------------------------------------------------
# checkpoints: one JSON manifest line, then little-endian float32 values


def save_checkpoint(params: ModelParams, path) -> None:
    cfg = params.config
    header = {
        "config": {
            "n_layers": cfg.n_layers,
            "n_heads": cfg.n_heads,
            "d_model": cfg.d_model,
            "context_len": cfg.context_len,
            "vocab_size": cfg.vocab_size,
            "tie_output": cfg.tie_output,
            "dtype": cfg.dtype,
        },
        "manifest": [[name, list(shape)] for name, shape in manifest(cfg)],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(params.flat.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = fh.read()
    cfg = ModelConfig(**header["config"])
    flat = np.frombuffer(raw, dtype="<f4").astype(cfg.dtype)
    return ModelParams(cfg, flat.copy())
