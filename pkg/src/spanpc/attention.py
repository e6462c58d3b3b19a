"""A small Transformer encoder that emits attention-weight tensors for one einsum layer."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, DimensionError, ContractError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    d_model: int = 2
    heads: int = 1
    n_stacks: int = 2
    d_ff: int = 16
    patch_size: int | None = None
    positional_bias: bool = False
    pooling: str = "mean"  # "mean" or "flatten"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model < 1 or self.heads < 1 or self.d_model % self.heads:
            raise ContractError(f"heads={self.heads} must divide d_model={self.d_model}")
        if self.n_stacks < 1 or self.d_ff < 1:
            raise ContractError("n_stacks and d_ff must be >= 1")
        if self.pooling not in ("mean", "flatten"):
            raise ContractError(f"unknown pooling {self.pooling!r}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# embeddings


def embed_binary(batch) -> Tensor:
    """Two-hot token per variable: 1 -> (1, 0), 0 -> (0, 1)."""
    x = np.asarray(batch)
    if x.size and not np.isin(x, (0, 1)).all():
        raise DataError("embed_binary needs 0/1 entries")
    x = np.atleast_2d(x).astype(np.float64)
    return Tensor(np.stack([x, 1.0 - x], axis=-1))


def embed_patches(images, p: int) -> Tensor:
    """Non-overlapping ``p x p`` patches in raster order, each flattened channel-last."""
    im = np.asarray(images, dtype=np.float64)
    if im.ndim != 4:
        raise DataError(f"expected b x H x W x C images, got shape {im.shape}")
    b, H, W, C = im.shape
    if p < 1 or H % p or W % p:
        raise DataError(f"patch size {p} does not divide image size {H}x{W}")
    tiles = im.reshape(b, H // p, p, W // p, p, C).transpose(0, 1, 3, 2, 4, 5)
    return Tensor(tiles.reshape(b, (H // p) * (W // p), p * p * C))


# --------------------------------------------------------------------------
# attention blocks


def sdp_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"sdp_attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = T.scale(T.matmul(q, T.transpose_last2(k)), 1.0 / math.sqrt(q.shape[-1]))
    return T.matmul(T.softmax(scores, axes=(-1,)), v)


def multi_head(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor) -> Tensor:
    """Self-attention with ``h`` heads.

    ``wq``/``wk``/``wv`` are stacked per head as ``(h, d_model, d_k)`` and
    ``wo`` as ``(h, d_k, d_model)``, i.e. the row blocks of the usual
    ``(h*d_k, d_model)`` output projection, so ``sum_i head_i @ wo[i]`` equals
    the concatenate-then-project form.
    """
    if x.shape[-1] != wq.shape[-2]:
        raise DimensionError(f"multi_head: input width {x.shape[-1]} vs projection {wq.shape}")
    b, n, d = x.shape
    xh = T.reshape(x, (b, 1, n, d))
    heads = sdp_attention(T.matmul(xh, wq), T.matmul(xh, wk), T.matmul(xh, wv))  # (b, h, n, d_k)
    return T.sum(T.matmul(heads, wo), axis=1)


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return T.matmul(T.relu(T.matmul(x, w1) + b1), w2) + b2


def encoder_forward(tokens: Tensor, params: dict[str, Tensor], config: EncoderConfig) -> Tensor:
    """Residual + layer-norm stacks followed by pooling over tokens."""
    x = tokens
    if config.positional_bias:
        x = x + params["pos"]
    eps = config.ln_eps
    for s in range(config.n_stacks):
        p = lambda name: params[f"s{s}.{name}"]  # noqa: E731
        x = T.layer_norm(x + multi_head(x, p("wq"), p("wk"), p("wv"), p("wo")), p("ln1.g"), p("ln1.b"), eps)
        x = T.layer_norm(x + feed_forward(x, p("w1"), p("b1"), p("w2"), p("b2")), p("ln2.g"), p("ln2.b"), eps)
    if config.pooling == "mean":
        return T.mean(x, axis=1)
    return T.reshape(x, (x.shape[0], -1))


def attention_weight_head(pooled: Tensor, w: Tensor, b: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Linear map to logits, reshaped to ``(batch,) + shape``; no softmax."""
    logits = T.matmul(pooled, w) + b
    return T.reshape(logits, (pooled.shape[0],) + tuple(shape))


# --------------------------------------------------------------------------
# parameters


class Encoder:
    """Parameters of one encoder plus its projection head.

    ``head_shape`` is ``(P, Ko, K, K)`` for the einsum layer it gates; the
    head is zero-initialized so the emitted attention weights start uniform.
    """

    def __init__(self, config: EncoderConfig, n_tokens: int, head_shape: tuple[int, ...], rng=None):
        self.config = config
        self.n_tokens = n_tokens
        self.head_shape = tuple(int(s) for s in head_shape)
        rng = np.random.default_rng(rng)
        d, h, dk, ff = config.d_model, config.heads, config.d_k, config.d_ff
        params: dict[str, np.ndarray] = {}
        if config.positional_bias:
            params["pos"] = np.zeros((n_tokens, d))
        std = 1.0 / math.sqrt(d)
        for s in range(config.n_stacks):
            params[f"s{s}.wq"] = rng.normal(0.0, std, (h, d, dk))
            params[f"s{s}.wk"] = rng.normal(0.0, std, (h, d, dk))
            params[f"s{s}.wv"] = rng.normal(0.0, std, (h, d, dk))
            params[f"s{s}.wo"] = rng.normal(0.0, std, (h, dk, d))
            params[f"s{s}.ln1.g"] = np.ones(d)
            params[f"s{s}.ln1.b"] = np.zeros(d)
            params[f"s{s}.w1"] = rng.normal(0.0, std, (d, ff))
            params[f"s{s}.b1"] = np.zeros(ff)
            params[f"s{s}.w2"] = rng.normal(0.0, 1.0 / math.sqrt(ff), (ff, d))
            params[f"s{s}.b2"] = np.zeros(d)
            params[f"s{s}.ln2.g"] = np.ones(d)
            params[f"s{s}.ln2.b"] = np.zeros(d)
        pooled = d if config.pooling == "mean" else d * n_tokens
        params["head.w"] = np.zeros((pooled, int(np.prod(self.head_shape))))
        params["head.b"] = np.zeros(int(np.prod(self.head_shape)))
        self.params = params

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def gate_logits(self, tokens: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        """``(b,) + head_shape`` logits whose softmax over the last two axes is ``W^A``."""
        params = self.tensors() if params is None else params
        if tokens.shape[1] != self.n_tokens or tokens.shape[2] != self.config.d_model:
            raise DimensionError(f"encoder expects (b, {self.n_tokens}, {self.config.d_model}) tokens, "
                                 f"got {tokens.shape}")
        pooled = encoder_forward(tokens, params, self.config)
        return attention_weight_head(pooled, params["head.w"], params["head.b"], self.head_shape)

    def attention_weights(self, tokens: Tensor) -> np.ndarray:
        return T.softmax(self.gate_logits(tokens), axes=(-2, -1)).data

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())
