"""Hot kernels for einsum layers, with a compiled core and a numpy fallback.

The compiled module is used when it imports; set ``SPANPC_PURE_PYTHON=1`` to
force the fallback.  Both backends honour the same contracts, and within a
backend a shared ``(P, Ko, K, K)`` weight tensor gives bit-identical results
to the same values materialised per sample.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _pykernels

_BACKENDS = {"numpy": _pykernels}
try:
    if os.environ.get("SPANPC_PURE_PYTHON"):
        raise ImportError("disabled by SPANPC_PURE_PYTHON")
    from . import _ckernels  # type: ignore[attr-defined]

    _BACKENDS["cython"] = _ckernels
    _active = _ckernels
except ImportError:
    _active = _pykernels


def backend() -> str:
    return _active.NAME


def available_backends() -> list[str]:
    return list(_BACKENDS)


def set_backend(name: str) -> None:
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}") from None


@contextlib.contextmanager
def using(name: str):
    prev = _active.NAME
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _as5d(weights: np.ndarray, batch: int) -> np.ndarray:
    if weights.ndim == 4:
        return np.broadcast_to(weights, (batch,) + weights.shape)
    return weights


def log_einsum_forward(left, right, weights):
    """``out[b,p,k] = log sum_ij W[(b),p,k,i,j] exp(left[b,p,i] + right[b,p,j])``.

    Returns ``(out, a, c, s)``; the last three are the cache for the backward
    pass (shifted exponentials and the probability-space sums).
    """
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    return _active.log_einsum_forward(left, right, _as5d(np.asarray(weights, dtype=np.float64), left.shape[0]))


def log_einsum_backward(grad, a, c, s, weights):
    """Gradients w.r.t. ``left``, ``right`` and the probability-space weights.

    The weight gradient has the same rank as ``weights``: per sample for a
    5-d input, summed over the batch for a shared 4-d input.
    """
    per_sample = weights.ndim == 5
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    return _active.log_einsum_backward(grad, a, c, s, _as5d(weights, a.shape[0]), per_sample)


def log_einsum_max(left, right, log_weights):
    """Max-product version of the forward pass; returns values and flat argmax."""
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    return _active.log_einsum_max(left, right, _as5d(np.asarray(log_weights, dtype=np.float64), left.shape[0]))
