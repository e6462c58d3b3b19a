"""Slow reference implementations used as test oracles.

Nothing here calls the vectorized forward pass: densities are computed by
plain recursion over the region graph in probability space.
"""

from __future__ import annotations

import itertools

import numpy as np


def _softmax_slices(logits):
    flat = logits.reshape(logits.shape[:-2] + (-1,))
    e = np.exp(flat - flat.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).reshape(logits.shape)


def layer_lookup(circuit):
    """region id -> (layer index, partition index)."""
    out = {}
    for d, layer in enumerate(circuit.layers):
        for p, r in enumerate(layer.regions):
            out[int(r)] = (d, p)
    return out


def naive_density(circuit, x, observed=None, weights=None):
    """``p(x)`` with unobserved variables summed out, by recursion."""
    N = circuit.N
    x = np.asarray(x).reshape(N)
    observed = np.ones(N, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    ws = weights if weights is not None else [_softmax_slices(l.logits) for l in circuit.layers]
    where = layer_lookup(circuit)
    leaf_index = {int(r): i for i, r in enumerate(circuit.leaf_regions)}
    g = circuit.graph
    K = circuit.K

    def region(r):
        if r in leaf_index:
            li = leaf_index[r]
            vals = np.ones(K)
            for s, v in enumerate(circuit.leaf_vars[li]):
                if not circuit.leaf_valid[li, s] or not observed[v]:
                    continue
                th = circuit.theta[li, :, s]
                vals = vals * (th if x[v] == 1 else 1.0 - th)
            return vals
        part = g.partitions[g.partition_of(r)]
        left, right = region(part.left), region(part.right)
        d, p = where[r]
        w = ws[d][p]
        out = np.zeros(w.shape[0])
        for k in range(w.shape[0]):
            for i in range(K):
                for j in range(K):
                    out[k] += w[k, i, j] * left[i] * right[j]
        return out

    roots = np.concatenate([region(r) for r in g.roots])
    mix = np.exp(circuit.mix_logits - circuit.mix_logits.max())
    mix = mix / mix.sum()
    return float((roots * mix).sum())


def all_assignments(N):
    return np.array(list(itertools.product((0, 1), repeat=N)), dtype=np.int8)


def joint_table(circuit, weights=None):
    grid = all_assignments(circuit.N)
    return grid, np.array([naive_density(circuit, x, weights=weights) for x in grid])


def naive_marginal(circuit, x, mask):
    """Brute-force sum over completions of the masked variables."""
    x = np.asarray(x, dtype=np.int8).copy()
    free = np.flatnonzero(mask)
    total = 0.0
    for bits in itertools.product((0, 1), repeat=free.size):
        x[free] = bits
        total += naive_density(circuit, x)
    return total


def central_difference(f, arr, h=1e-6):
    """Gradient of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def em_targets(circuit, x, h=1e-6):
    """Full-batch EM targets for the einsum weights from ``W * dLL/dW``."""
    base = [_softmax_slices(l.logits) for l in circuit.layers]

    def total():
        return float(circuit.log_likelihood(x, weights=base).sum())

    out = []
    for w in base:
        g = central_difference(total, w, h)
        n = w * g
        out.append(n / n.sum(axis=(-1, -2), keepdims=True))
    return out


def logsumexp(v):
    m = np.max(v)
    return m + np.log(np.sum(np.exp(v - m)))


def five_point_difference(f, arr, h=3e-4):
    """Fourth-order central stencil; truncation O(h^4), roundoff ~eps/h."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        vals = []
        for s in (2, 1, -1, -2):
            arr[idx] = old + s * h
            vals.append(f())
        arr[idx] = old
        g[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return g
