"""Pure numpy implementation of the einsum-layer kernels.

Shapes: ``left``/``right`` are ``(B, P, K)`` log-densities of the two child
regions of ``P`` partitions; ``weights`` are probability-space tensors of
shape ``(B, P, Ko, K, K)`` (a broadcast view is fine for shared weights).

The forward sum is formed as an explicit elementwise product followed by a
row reduction, so a broadcast weight view and a materialised per-sample copy
of the same values give bit-identical results.
"""

import numpy as np

NAME = "numpy"

# bound on the (B, P, Ko, K, K) temporaries
_CHUNK_ELEMS = 1 << 21


def _chunks(B, per_sample):
    step = max(1, _CHUNK_ELEMS // max(1, per_sample))
    for lo in range(0, B, step):
        yield lo, min(B, lo + step)


def _shift(x):
    m = x.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.exp(x - m), m[..., 0]


def log_einsum_forward(left, right, weights):
    B, P, K = left.shape
    Ko = weights.shape[2]
    a, ml = _shift(left)
    c, mr = _shift(right)
    s = np.empty((B, P, Ko))
    for lo, hi in _chunks(B, P * Ko * K * K):
        prod = weights[lo:hi] * a[lo:hi, :, None, :, None]
        prod = prod * c[lo:hi, :, None, None, :]
        s[lo:hi] = prod.reshape(hi - lo, P, Ko, K * K).sum(axis=-1)
    with np.errstate(divide="ignore"):
        out = np.log(s) + (ml + mr)[:, :, None]
    return out, a, c, s


def log_einsum_backward(grad, a, c, s, weights, per_sample):
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(s > 0, grad / np.where(s > 0, s, 1.0), 0.0)
    dleft = a * np.einsum("bpk,bpkij,bpj->bpi", q, weights, c, optimize=True)
    dright = c * np.einsum("bpk,bpkij,bpi->bpj", q, weights, a, optimize=True)
    if per_sample:
        dw = q[:, :, :, None, None] * a[:, :, None, :, None] * c[:, :, None, None, :]
    else:
        dw = np.einsum("bpk,bpi,bpj->pkij", q, a, c, optimize=True)
    return dleft, dright, dw


def log_einsum_max(left, right, log_weights):
    """Max-product analogue: returns (max log value, flat argmax i*K+j)."""
    B, P, K = left.shape
    Ko = log_weights.shape[2]
    out = np.empty((B, P, Ko))
    arg = np.empty((B, P, Ko), dtype=np.int64)
    for lo, hi in _chunks(B, P * Ko * K * K):
        v = log_weights[lo:hi] + left[lo:hi, :, None, :, None]
        v = v + right[lo:hi, :, None, None, :]
        v = v.reshape(hi - lo, P, Ko, K * K)
        arg[lo:hi] = v.argmax(axis=-1)
        out[lo:hi] = np.take_along_axis(v, arg[lo:hi, ..., None], axis=-1)[..., 0]
    return out, arg
