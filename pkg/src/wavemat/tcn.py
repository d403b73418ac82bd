"""Temporal convolutional network classifier with hand-rolled training.

Residual blocks of causal 1-D convolutions (two per block, with a 1x1
projection on the skip path when channel counts change), ReLU activations,
inverted dropout, a linear softmax head, cross-entropy loss, reverse-mode
gradients, and an Adam optimizer. Everything runs in double precision on
plain numpy arrays; every stochastic choice (init, shuffling, dropout) is
keyed off the seed, so training is exactly reproducible.

The head reads either the final-timestep feature vector (default) or the
temporal mean, selected by ``TcnParams.readout``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, MaterialClass, Waveform
from .rng import derive_seed, generator

TCN_FORMAT = "wavemat-tcn"
TCN_VERSION = 1


@dataclass(frozen=True)
class TcnParams:
    kernel_size: int = 1
    dropout: float = 0.05
    channel_sizes: tuple[int, ...] = (32, 32, 32, 64, 64, 64, 128, 128)
    batch_size: int = 32
    iterations: int = 4000
    learning_rate: float = 2e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    readout: str = "last"  # "last" or "mean"
    arch: str = "blocks"  # "blocks": two convs per level; "layers": one

    def __post_init__(self):
        object.__setattr__(self, "channel_sizes", tuple(int(c) for c in self.channel_sizes))
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not self.channel_sizes or any(c < 1 for c in self.channel_sizes):
            raise ValueError("channel_sizes must be a non-empty list of positive ints")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.readout not in ("last", "mean"):
            raise ValueError(f"readout must be 'last' or 'mean', got {self.readout!r}")
        if self.arch not in ("blocks", "layers"):
            raise ValueError(f"arch must be 'blocks' or 'layers', got {self.arch!r}")


@dataclass
class _Conv:
    w: np.ndarray  # (out_channels, in_channels, kernel)
    b: np.ndarray  # (out_channels,)


@dataclass
class _Block:
    conv1: _Conv
    conv2: _Conv | None  # None in "layers" arch
    proj: _Conv | None  # 1x1 skip projection when in/out channels differ


@dataclass
class TcnModel:
    params: TcnParams
    n_classes: int
    blocks: list[_Block]
    head_w: np.ndarray  # (n_classes, channel_sizes[-1])
    head_b: np.ndarray
    input_scale: float = 1.0  # waveforms are multiplied by this before the net
    class_table: tuple[MaterialClass, ...] | None = None
    loss_log: list[tuple[int, float]] = field(default_factory=list)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, blk in enumerate(self.blocks):
            out.append((f"block{i}.conv1.w", blk.conv1.w))
            out.append((f"block{i}.conv1.b", blk.conv1.b))
            if blk.conv2 is not None:
                out.append((f"block{i}.conv2.w", blk.conv2.w))
                out.append((f"block{i}.conv2.b", blk.conv2.b))
            if blk.proj is not None:
                out.append((f"block{i}.proj.w", blk.proj.w))
                out.append((f"block{i}.proj.b", blk.proj.b))
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out


def _init_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> _Conv:
    bound = 1.0 / np.sqrt(c_in * k)
    return _Conv(
        w=rng.uniform(-bound, bound, size=(c_out, c_in, k)),
        b=rng.uniform(-bound, bound, size=c_out),
    )


def init_tcn(params: TcnParams, n_classes: int, seed: int) -> TcnModel:
    """Scaled-uniform fan-in initialization, deterministic given the seed."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = generator(derive_seed(seed, "init"))
    blocks = []
    c_in = 1
    for c_out in params.channel_sizes:
        conv1 = _init_conv(rng, c_out, c_in, params.kernel_size)
        conv2 = _init_conv(rng, c_out, c_out, params.kernel_size) if params.arch == "blocks" else None
        proj = _init_conv(rng, c_out, c_in, 1) if c_in != c_out else None
        blocks.append(_Block(conv1, conv2, proj))
        c_in = c_out
    bound = 1.0 / np.sqrt(c_in)
    head_w = rng.uniform(-bound, bound, size=(n_classes, c_in))
    head_b = rng.uniform(-bound, bound, size=n_classes)
    return TcnModel(params, n_classes, blocks, head_w, head_b)


def _conv_forward(conv: _Conv, x: np.ndarray) -> np.ndarray:
    """Causal conv along time: output[t] sees inputs (t-k+1 .. t).

    Activations are laid out channels-first as (channels, batch, time), so a
    kernel-1 conv is a single GEMM on a free reshape.
    """
    c_out, c_in, k = conv.w.shape
    _, B, T = x.shape
    if k == 1:
        y = conv.w[:, :, 0] @ x.reshape(c_in, B * T)
        y += conv.b[:, None]
        return y.reshape(c_out, B, T)
    xp = np.pad(x, ((0, 0), (0, 0), (k - 1, 0)))
    y = np.zeros((c_out, B, T))
    for j in range(k):
        shifted = np.ascontiguousarray(xp[:, :, j : j + T]).reshape(c_in, B * T)
        y += (conv.w[:, :, j] @ shifted).reshape(c_out, B, T)
    y += conv.b[:, None, None]
    return y


def _conv_backward(conv: _Conv, x: np.ndarray, dy: np.ndarray):
    c_out, c_in, k = conv.w.shape
    _, B, T = x.shape
    db = dy.sum(axis=(1, 2))
    dw = np.zeros_like(conv.w)
    dy_mat = dy.reshape(c_out, B * T)
    if k == 1:
        dw[:, :, 0] = dy_mat @ x.reshape(c_in, B * T).T
        dx = (conv.w[:, :, 0].T @ dy_mat).reshape(c_in, B, T)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (k - 1, 0)))
        dxp = np.zeros_like(xp)
        for j in range(k):
            shifted = np.ascontiguousarray(xp[:, :, j : j + T]).reshape(c_in, B * T)
            dw[:, :, j] = dy_mat @ shifted.T
            dxp[:, :, j : j + T] += (conv.w[:, :, j].T @ dy_mat).reshape(c_in, B, T)
        dx = dxp[:, :, k - 1 :]
    return dx, dw, db


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(batch, input_scale: float) -> np.ndarray:
    """Accept a list of Waveforms or a (B, T) array; return (1, B, T)."""
    if isinstance(batch, np.ndarray):
        arr = np.asarray(batch, dtype=np.float64)
    else:
        arr = np.stack([w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64) for w in batch])
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("batch must be a non-empty (batch, time) array or list of waveforms")
    return (arr * input_scale)[None, :, :]


def _run(model: TcnModel, x: np.ndarray, train_mode: bool, dropout_seed: int, keep_cache: bool):
    p = model.params
    use_dropout = train_mode and p.dropout > 0.0
    rng = generator(derive_seed(dropout_seed, "dropout")) if use_dropout else None
    inv_keep = 1.0 / (1.0 - p.dropout) if use_dropout else 1.0

    def mask_like(a: np.ndarray) -> np.ndarray | None:
        if not use_dropout:
            return None
        return rng.random(a.shape, dtype=np.float32) >= p.dropout

    def apply_mask(a: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        if mask is None:
            return a
        out = np.multiply(a, mask)
        out *= inv_keep
        return out

    caches = []
    h = x
    for blk in model.blocks:
        a1 = _conv_forward(blk.conv1, h)
        np.maximum(a1, 0.0, out=a1)
        m1 = mask_like(a1)
        d1 = apply_mask(a1, m1)
        if blk.conv2 is not None:
            a2 = _conv_forward(blk.conv2, d1)
            np.maximum(a2, 0.0, out=a2)
            m2 = mask_like(a2)
            d2 = apply_mask(a2, m2)
        else:
            a2 = m2 = None
            d2 = d1
        if blk.proj is not None:
            out = _conv_forward(blk.proj, h)
            out += d2
        else:
            out = d2 + h
        np.maximum(out, 0.0, out=out)
        if keep_cache:
            caches.append({"h_in": h, "a1": a1, "m1": m1, "d1": d1, "a2": a2, "m2": m2, "out": out})
        h = out

    feats = h[:, :, -1].T if p.readout == "last" else h.mean(axis=2).T  # (B, C)
    logits = feats @ model.head_w.T + model.head_b[None, :]
    probs = _softmax(logits)
    return probs, feats, h.shape[2], caches


def forward(model: TcnModel, batch, train_mode: bool = False, dropout_seed: int = 0) -> np.ndarray:
    """Per-sample class probabilities, shape (batch, n_classes).

    Dropout is applied only in train mode, with masks drawn from
    ``dropout_seed``; eval mode is deterministic.
    """
    x = _as_batch(batch, model.input_scale)
    probs, _, _, _ = _run(model, x, train_mode, dropout_seed, keep_cache=False)
    return probs


def loss_and_grads(model: TcnModel, batch, labels, dropout_seed: int = 0):
    """Mean cross-entropy over the batch and gradients for every parameter.

    Runs in train mode; the dropout masks are fixed by ``dropout_seed``, so
    the loss is a deterministic (and finite-difference friendly) function of
    the parameters.
    """
    x = _as_batch(batch, model.input_scale)
    y = np.asarray(labels, dtype=np.int64)
    B = x.shape[1]
    if y.shape != (B,):
        raise ValueError("labels must align with the batch")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValueError("labels outside the class range")

    probs, feats, T, caches = _run(model, x, train_mode=True, dropout_seed=dropout_seed, keep_cache=True)
    loss = float(-np.log(probs[np.arange(B), y]).mean())

    grads: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B

    grads["head.w"] = dlogits.T @ feats
    grads["head.b"] = dlogits.sum(axis=0)
    dfeats = dlogits @ model.head_w  # (B, C)

    c_last = model.head_w.shape[1]
    if model.params.readout == "last":
        dh = np.zeros((c_last, B, T))
        dh[:, :, -1] = dfeats.T
    else:
        dh = dfeats.T[:, :, None] / T  # broadcasts against (C, B, T)

    p = model.params
    inv_keep = 1.0 / (1.0 - p.dropout) if p.dropout > 0.0 else 1.0

    def mask_backward(d: np.ndarray, mask: np.ndarray | None, act: np.ndarray) -> np.ndarray:
        # through inverted dropout, then the ReLU that preceded it
        if mask is None:
            return d * (act > 0.0)
        out = np.multiply(d, mask)
        out *= inv_keep
        np.multiply(out, act > 0.0, out=out)
        return out

    for i in range(len(model.blocks) - 1, -1, -1):
        blk = model.blocks[i]
        c = caches[i]
        ds = dh * (c["out"] > 0.0)
        if blk.conv2 is not None:
            dz2 = mask_backward(ds, c["m2"], c["a2"])
            dd1, dw2, db2 = _conv_backward(blk.conv2, c["d1"], dz2)
            grads[f"block{i}.conv2.w"] = dw2
            grads[f"block{i}.conv2.b"] = db2
        else:
            dd1 = ds
        dz1 = mask_backward(dd1, c["m1"], c["a1"])
        dh_main, dw1, db1 = _conv_backward(blk.conv1, c["h_in"], dz1)
        grads[f"block{i}.conv1.w"] = dw1
        grads[f"block{i}.conv1.b"] = db1
        if blk.proj is not None:
            dh_res, dwp, dbp = _conv_backward(blk.proj, c["h_in"], ds)
            grads[f"block{i}.proj.w"] = dwp
            grads[f"block{i}.proj.b"] = dbp
            dh_main += dh_res
        else:
            dh_main += ds
        dh = dh_main

    return loss, grads


def train_tcn(train: Dataset, params: TcnParams, a_sat: float = 1.0) -> TcnModel:
    """Adam on shuffled mini-batches for ``params.iterations`` steps.

    Waveforms are scaled by 1/a_sat into [0, 1] before the network; the
    saturation plateau maps to exactly 1.0 and stays a usable feature.
    """
    if len(train) == 0:
        raise ValueError("cannot train a TCN on an empty dataset")
    X = train.features()
    y = train.labels()
    if np.unique(y).size < 2:
        raise ValueError("training data holds a single class")
    model = init_tcn(params, train.n_classes(), params.seed)
    model.input_scale = 1.0 / a_sat
    model.class_table = train.class_table
    fit_arrays(model, X, y)
    return model


def fit_arrays(model: TcnModel, X: np.ndarray, y: np.ndarray) -> None:
    """Training loop on raw (n, T) arrays; appends to the model's loss log.

    Mini-batches are reshuffled once per epoch; the last batch of an epoch
    may be short when the batch size does not divide the sample count.
    """
    p = model.params
    n = X.shape[0]
    shuffle_rng = generator(derive_seed(p.seed, "shuffle"))
    m_state = {name: np.zeros_like(arr) for name, arr in model.named_parameters()}
    v_state = {name: np.zeros_like(arr) for name, arr in model.named_parameters()}
    arrays = dict(model.named_parameters())

    order: list[int] = []
    for step in range(1, p.iterations + 1):
        if not order:
            order = list(shuffle_rng.permutation(n))
        take = order[: p.batch_size]
        order = order[p.batch_size :]
        loss, grads = loss_and_grads(model, X[take], y[take], derive_seed(p.seed, "drop", step))
        lr_t = p.learning_rate * np.sqrt(1.0 - p.adam_beta2**step) / (1.0 - p.adam_beta1**step)
        for name, g in grads.items():
            m_state[name] = p.adam_beta1 * m_state[name] + (1.0 - p.adam_beta1) * g
            v_state[name] = p.adam_beta2 * v_state[name] + (1.0 - p.adam_beta2) * g**2
            arrays[name] -= lr_t * m_state[name] / (np.sqrt(v_state[name]) + p.adam_eps)
        model.loss_log.append((step, loss))


def predict_tcn(model: TcnModel, w: "Waveform | np.ndarray") -> MaterialClass:
    """Eval-mode argmax; probability ties break toward the lowest class id."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    probs = forward(model, x[None, :], train_mode=False)
    idx = int(np.argmax(probs[0]))
    if model.class_table is not None:
        return model.class_table[idx]
    return MaterialClass(idx, f"class_{idx}")


def predict_many(model: TcnModel, X: np.ndarray) -> np.ndarray:
    probs = forward(model, np.asarray(X, dtype=np.float64), train_mode=False)
    return np.argmax(probs, axis=1)


def save_tcn(model: TcnModel, path: str | Path) -> None:
    """Versioned npz checkpoint with exact weight round-trip."""
    meta = {
        "format": TCN_FORMAT,
        "version": TCN_VERSION,
        "params": {
            "kernel_size": model.params.kernel_size,
            "dropout": model.params.dropout,
            "channel_sizes": list(model.params.channel_sizes),
            "batch_size": model.params.batch_size,
            "iterations": model.params.iterations,
            "learning_rate": model.params.learning_rate,
            "adam_beta1": model.params.adam_beta1,
            "adam_beta2": model.params.adam_beta2,
            "adam_eps": model.params.adam_eps,
            "seed": model.params.seed,
            "readout": model.params.readout,
            "arch": model.params.arch,
        },
        "n_classes": model.n_classes,
        "input_scale": model.input_scale,
        "classes": [[c.id, c.name] for c in (model.class_table or ())],
    }
    arrays = {name: arr for name, arr in model.named_parameters()}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_tcn(path: str | Path) -> TcnModel:
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != TCN_FORMAT or meta.get("version") != TCN_VERSION:
            raise ValueError(f"{path}: not a version-{TCN_VERSION} {TCN_FORMAT} checkpoint")
        params = TcnParams(**{**meta["params"], "channel_sizes": tuple(meta["params"]["channel_sizes"])})
        model = init_tcn(params, int(meta["n_classes"]), params.seed)
        model.input_scale = float(meta["input_scale"])
        if meta["classes"]:
            model.class_table = tuple(MaterialClass(int(i), str(n)) for i, n in meta["classes"])
        for name, arr in model.named_parameters():
            arr[...] = data[name]
    return model
