"""Einsum-network probabilistic circuits over randomized binary-tree region graphs.

A circuit holds

* one Bernoulli leaf layer: per leaf region ``K`` factorized densities,
* one einsum layer per tree depth: each partition combines the ``K``-vectors
  of its two child regions through a ``Ko x K x K`` weight tensor,
* a mixing layer over the replica roots (never attention-gated).

Evaluation is bottom-up in the log domain.  Sum weights are stored as
normalized log-weights ("logits"); effective weights are their softmax over
the last two axes, which is the identity for normalized logits.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .data import as_binary
from .errors import ContractError, DataError
from .tensor import Tensor

EPS = 1e-6
NORM_TOL = 1e-9
_WEIGHT_FLOOR = 1e-300


# --------------------------------------------------------------------------
# region graph


@dataclass(frozen=True)
class Partition:
    parent: int
    left: int
    right: int


@dataclass
class RegionGraph:
    """Regions (variable scopes) and binary partitions, one tree per replica."""

    num_vars: int
    scopes: list[tuple[int, ...]]
    partitions: list[Partition]
    roots: list[int]
    depth: int = 0
    replicas: int = 0

    def __post_init__(self):
        if not self.replicas:
            self.replicas = len(self.roots)
        split = {}
        for idx, p in enumerate(self.partitions):
            if p.parent in split:
                raise ContractError(f"region {p.parent} has more than one partition")
            split[p.parent] = idx
        self._split = split
        depth = {r: 0 for r in self.roots}
        frontier = list(self.roots)
        while frontier:
            nxt = []
            for r in frontier:
                if r in split:
                    p = self.partitions[split[r]]
                    for ch in (p.left, p.right):
                        if ch in depth:
                            raise ContractError(f"region {ch} is reachable twice; graph is not a tree")
                        depth[ch] = depth[r] + 1
                        nxt.append(ch)
            frontier = nxt
        self.region_depth = depth

    @property
    def leaves(self) -> list[int]:
        return sorted(r for r in self.region_depth if r not in self._split)

    def partition_of(self, region: int) -> int | None:
        return self._split.get(region)


def build_region_graph(num_vars: int, depth: int, replicas: int, rng) -> RegionGraph:
    """Random binary trees: shuffle each scope and halve it (ceil/floor)."""
    if num_vars < 1 or depth < 1 or replicas < 1:
        raise ContractError(f"need N, D, R >= 1, got N={num_vars}, D={depth}, R={replicas}")
    rng = np.random.default_rng(rng)
    scopes: list[tuple[int, ...]] = []
    partitions: list[Partition] = []
    roots: list[int] = []

    def grow(scope: tuple[int, ...], level: int) -> int:
        rid = len(scopes)
        scopes.append(scope)
        if level < depth and len(scope) > 1:
            perm = rng.permutation(np.asarray(scope))
            half = math.ceil(len(scope) / 2)
            left = grow(tuple(sorted(int(v) for v in perm[:half])), level + 1)
            right = grow(tuple(sorted(int(v) for v in perm[half:])), level + 1)
            partitions.append(Partition(rid, left, right))
        return rid

    for _ in range(replicas):
        roots.append(grow(tuple(range(num_vars)), 0))
    partitions.sort(key=lambda p: p.parent)
    return RegionGraph(num_vars, scopes, partitions, roots, depth=depth, replicas=replicas)


# --------------------------------------------------------------------------
# differentiable pieces


def leaf_log_density(theta: Tensor, x: np.ndarray, leaf_vars: np.ndarray, valid: np.ndarray) -> Tensor:
    """``(b, L, K)`` log-densities of factorized Bernoulli leaves.

    ``valid`` is ``(L, S)`` or ``(b, L, S)``; invalid (padding or marginalized)
    entries contribute ``log 1 = 0``.
    """
    th = theta.data
    xs = x[:, leaf_vars].astype(np.float64)
    v = np.broadcast_to(valid, xs.shape)
    on = xs * v
    off = (1.0 - xs) * v
    lt, l1t = np.log(th), np.log1p(-th)
    out = np.einsum("bls,lks->blk", on, lt) + np.einsum("bls,lks->blk", off, l1t)

    def back(g):
        return (np.einsum("blk,bls->lks", g, on) / th - np.einsum("blk,bls->lks", g, off) / (1.0 - th),)

    return T.apply(out, (theta,), back)


def log_einsum(left: Tensor, right: Tensor, weights: Tensor) -> Tensor:
    """Einsum layer in the log domain; ``weights`` are probability-space."""
    out, a, c, s = kernels.log_einsum_forward(left.data, right.data, weights.data)
    wd = weights.data

    def back(g):
        return kernels.log_einsum_backward(g, a, c, s, wd)

    return T.apply(out, (left, right, weights), back)


# --------------------------------------------------------------------------
# circuit


@dataclass
class EinsumLayer:
    regions: np.ndarray      # parent region ids, one per partition
    left_src: np.ndarray     # indices into concat([leaves, previous layer])
    right_src: np.ndarray
    logits: np.ndarray       # (P, Ko, K, K) normalized log-weights

    @property
    def num_partitions(self) -> int:
        return self.logits.shape[0]

    @property
    def k_out(self) -> int:
        return self.logits.shape[1]


@dataclass
class ValidationReport:
    smoothness: list[str] = field(default_factory=list)
    decomposability: list[str] = field(default_factory=list)
    normalization: list[str] = field(default_factory=list)
    leaves: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.smoothness or self.decomposability or self.normalization or self.leaves)

    def lines(self) -> list[str]:
        out = []
        for kind in ("smoothness", "decomposability", "normalization", "leaves"):
            out += [f"{kind}: {msg}" for msg in getattr(self, kind)]
        return out


def _random_log_weights(rng, shape, n_axes: int) -> np.ndarray:
    w = rng.uniform(0.1, 1.0, size=shape)
    return _renormalized_log(w, n_axes)


class Circuit:
    """Smooth, decomposable circuit with vectorized Bernoulli leaves."""

    def __init__(self, graph: RegionGraph, K: int, rng=None):
        if K < 1:
            raise ContractError(f"K must be >= 1, got {K}")
        rng = np.random.default_rng(rng)
        self.graph = graph
        self.K = K
        self.N = graph.num_vars

        leaves = graph.leaves
        self.leaf_regions = np.asarray(leaves, dtype=np.int64)
        S = max(len(graph.scopes[r]) for r in leaves)
        self.leaf_vars = np.zeros((len(leaves), S), dtype=np.int64)
        self.leaf_valid = np.zeros((len(leaves), S), dtype=bool)
        for i, r in enumerate(leaves):
            sc = graph.scopes[r]
            self.leaf_vars[i, :len(sc)] = sc
            self.leaf_valid[i, :len(sc)] = True
        self.theta = np.where(self.leaf_valid[:, None, :],
                              rng.uniform(0.25, 0.75, size=(len(leaves), K, S)), 0.5)

        leaf_pos = {r: i for i, r in enumerate(leaves)}
        depth_of = graph.region_depth
        n_layers = 1 + max((depth_of[p.parent] for p in graph.partitions), default=-1)
        roots = set(graph.roots)
        by_depth: list[list[Partition]] = [[] for _ in range(n_layers)]
        for p in graph.partitions:
            by_depth[depth_of[p.parent]].append(p)
        self.layers: list[EinsumLayer] = [None] * n_layers  # type: ignore[list-item]
        below: dict[int, int] = {}
        for d in reversed(range(n_layers)):
            parts = sorted(by_depth[d], key=lambda p: p.parent)
            ko = {p.parent in roots for p in parts}
            if len(ko) != 1:
                raise ContractError(f"depth {d} mixes replica roots with inner regions")
            k_out = 1 if ko.pop() else K

            def src(region):
                if region in leaf_pos:
                    return leaf_pos[region]
                if region in below:
                    return len(leaves) + below[region]
                raise ContractError(f"child region {region} is not produced by the layer below")

            self.layers[d] = EinsumLayer(
                regions=np.array([p.parent for p in parts], dtype=np.int64),
                left_src=np.array([src(p.left) for p in parts], dtype=np.int64),
                right_src=np.array([src(p.right) for p in parts], dtype=np.int64),
                logits=_random_log_weights(rng, (len(parts), k_out, K, K), 2),
            )
            below = {p.parent: i for i, p in enumerate(parts)}
        if n_layers:
            top = list(self.layers[0].regions)
            if sorted(graph.roots) != top:
                raise ContractError("top einsum layer must consist of exactly the replica roots")
            self.root_width = 1
        else:
            if sorted(graph.roots) != leaves:
                raise ContractError("a circuit without einsum layers must have leaf roots only")
            self.root_width = K
        self.mix_logits = _random_log_weights(rng, (len(graph.roots) * self.root_width,), 1)

    # ------------------------------------------------------------------ params

    def effective_weights(self) -> list[np.ndarray]:
        return [T._softmax_np(layer.logits, 2) for layer in self.layers]

    def mixing_weights(self) -> np.ndarray:
        return T._softmax_np(self.mix_logits, 1)

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Parameter arrays in declared (serialization) order."""
        out = [("leaf.theta", self.theta)]
        out += [(f"einsum{d}.logits", layer.logits) for d, layer in enumerate(self.layers)]
        out.append(("mixing.logits", self.mix_logits))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in self.state():
            new = np.asarray(arrays[name], dtype=np.float64)
            if new.shape != arr.shape:
                raise DataError(f"{name}: shape {new.shape} != expected {arr.shape}")
        self.theta = np.array(arrays["leaf.theta"], dtype=np.float64)
        for d, layer in enumerate(self.layers):
            layer.logits = np.array(arrays[f"einsum{d}.logits"], dtype=np.float64)
        self.mix_logits = np.array(arrays["mixing.logits"], dtype=np.float64)

    def copy(self) -> "Circuit":
        return copy.deepcopy(self)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    # ------------------------------------------------------------------ evaluation

    def _valid_mask(self, mask, b: int) -> np.ndarray:
        if mask is None:
            return self.leaf_valid
        m = np.asarray(mask, dtype=bool)
        if m.shape not in ((self.N,), (b, self.N)):
            raise ContractError(f"mask must have shape ({self.N},) or ({b}, {self.N}), got {m.shape}")
        keep = ~m[..., self.leaf_vars]
        return self.leaf_valid & keep

    def forward(self, x: np.ndarray, valid: np.ndarray, theta: Tensor,
                weights: list[Tensor], mix_logw: Tensor, leaf: Tensor | None = None) -> Tensor:
        """Graph-building bottom-up pass; returns ``(b,)`` log-densities."""
        b = x.shape[0]
        if leaf is None:
            leaf = leaf_log_density(theta, x, self.leaf_vars, valid)
        prev = None
        for d in reversed(range(self.num_layers)):
            layer = self.layers[d]
            src = leaf if prev is None else T.concat([leaf, prev], axis=1)
            left = T.take(src, layer.left_src, axis=1)
            right = T.take(src, layer.right_src, axis=1)
            prev = log_einsum(left, right, weights[d])
        root = T.reshape(prev if prev is not None else leaf, (b, -1))
        return T.log_sum_exp(root + mix_logw, axis=1)

    def log_likelihood(self, batch, mask=None, weights: list[np.ndarray] | None = None) -> np.ndarray:
        """Per-sample ``log p(x)``; ``mask`` marks variables to marginalize.

        ``weights`` optionally replaces the effective einsum weights per layer,
        either shared ``(P, Ko, K, K)`` or per sample ``(b, P, Ko, K, K)``.
        """
        x = as_binary(batch, self.N)
        valid = self._valid_mask(mask, x.shape[0])
        if not valid.any():
            # nothing observed: a normalized circuit integrates to exactly 1
            return np.zeros(x.shape[0])
        ws = self.effective_weights() if weights is None else weights
        out = self.forward(x, valid, Tensor(self.theta), [Tensor(w) for w in ws],
                           Tensor(T.log_softmax(Tensor(self.mix_logits)).data))
        return out.data

    # ------------------------------------------------------------------ EM

    def _em_chunk(self) -> int:
        per_sample = sum(layer.logits.size for layer in self.layers) or 1
        return max(1, (1 << 22) // per_sample)

    def em_statistics(self, x: np.ndarray, gate_logits: list[np.ndarray | None] | None = None) -> dict:
        """Expected sufficient statistics via the gradient identity.

        For each einsum layer the per-sample weight tensor ``W_s`` enters the
        graph as a leaf; its posterior counts are ``W_s * dLL/dW_s``.  With
        input-dependent gates ``W_s = normalize(W * gate)`` the returned
        ``den`` term turns the M-step into a minorize-maximize update that
        reduces to plain EM when the gate is uniform.
        """
        base = self.effective_weights()
        stats = {
            "num": [np.zeros_like(w) for w in base],
            "den": [np.zeros_like(w) for w in base],
            "leaf_on": np.zeros_like(self.theta),
            "leaf_n": np.zeros(self.theta.shape[:2]),
            "mix": np.zeros_like(self.mix_logits),
            "ll": 0.0,
            "count": 0,
        }
        xs_all = x[:, self.leaf_vars].astype(np.float64) * self.leaf_valid
        step = self._em_chunk()
        for lo in range(0, x.shape[0], step):
            xc = x[lo:lo + step]
            bc = xc.shape[0]
            theta = Tensor(self.theta)
            leaf = Tensor(leaf_log_density(theta, xc, self.leaf_vars, self.leaf_valid).data, requires_grad=True)
            ws = []
            for d, w in enumerate(base):
                g = None if gate_logits is None else gate_logits[d]
                if g is None:
                    ws_d = np.broadcast_to(w, (bc,) + w.shape).copy()
                else:
                    ws_d = T._softmax_np(self.layers[d].logits + g[lo:lo + step], 2)
                ws.append(Tensor(ws_d, requires_grad=True))
            mix = Tensor(T.log_softmax(Tensor(self.mix_logits)).data, requires_grad=True)
            ll = self.forward(xc, self.leaf_valid, theta, ws, mix, leaf=leaf)
            total = T.sum(ll)
            total.backward()
            for d, (w, wt) in enumerate(zip(base, ws)):
                n_b = wt.data * wt.grad
                kk = n_b.shape[-1] * n_b.shape[-2]
                n_k = n_b.reshape(n_b.shape[:3] + (kk,)).sum(axis=-1)
                rho = wt.data / w
                stats["num"][d] += n_b.sum(axis=0)
                stats["den"][d] += (n_k[..., None, None] * rho).sum(axis=0)
            gamma = leaf.grad
            stats["leaf_on"] += np.einsum("blk,bls->lks", gamma, xs_all[lo:lo + step])
            stats["leaf_n"] += gamma.sum(axis=0)
            stats["mix"] += mix.grad
            stats["ll"] += float(total.data)
            stats["count"] += bc
        return stats

    def apply_em(self, stats: dict, step_size: float) -> None:
        s = float(step_size)
        for d, layer in enumerate(self.layers):
            w = T._softmax_np(layer.logits, 2)
            num, den = stats["num"][d], stats["den"][d]
            with np.errstate(invalid="ignore", divide="ignore"):
                target = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
            tot = target.sum(axis=(-1, -2), keepdims=True)
            target = np.where(tot > 0, target / np.where(tot > 0, tot, 1.0), w)
            layer.logits = _renormalized_log((1.0 - s) * w + s * target, 2)

        n = stats["leaf_n"][..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            target = np.where(n > 0, stats["leaf_on"] / np.where(n > 0, n, 1.0), self.theta)
        theta = np.clip((1.0 - s) * self.theta + s * target, EPS, 1.0 - EPS)
        self.theta = np.where(self.leaf_valid[:, None, :], theta, 0.5)

        w = self.mixing_weights()
        tot = stats["mix"].sum()
        target = stats["mix"] / tot if tot > 0 else w
        self.mix_logits = _renormalized_log((1.0 - s) * w + s * target, 1)

    def em_step(self, batch, step_size: float, gate_logits=None) -> float:
        """One (damped) EM update from ``batch``; returns the pre-update mean LL."""
        x = as_binary(batch, self.N)
        if x.shape[0] == 0:
            raise ContractError("em_step needs a nonempty batch")
        if not 0.0 < step_size <= 1.0:
            raise ContractError(f"step_size must lie in (0, 1], got {step_size}")
        stats = self.em_statistics(x, gate_logits)
        self.apply_em(stats, step_size)
        return stats["ll"] / stats["count"]

    # ------------------------------------------------------------------ top-down

    def _descend(self, n: int, choose_root, choose_child) -> np.ndarray:
        """Top-down traversal; returns ``sel[region, sample]`` (-1 = unvisited)."""
        sel = np.full((len(self.graph.scopes), n), -1, dtype=np.int64)
        m = choose_root()
        roots = np.asarray(self.graph.roots)
        if self.num_layers:
            for r_i, r in enumerate(roots):
                sel[r, m == r_i] = 0
        else:
            for r_i, r in enumerate(roots):
                hit = (m // self.K) == r_i
                sel[r, hit] = (m % self.K)[hit]
        for d in range(self.num_layers):
            layer = self.layers[d]
            for p, region in enumerate(layer.regions):
                pi = self.graph.partition_of(int(region))
                part = self.graph.partitions[pi]
                ks = sel[region]
                flat = choose_child(d, p, ks)
                active = ks >= 0
                sel[part.left, active] = flat[active] // self.K
                sel[part.right, active] = flat[active] % self.K
        return sel

    def sample(self, n: int, seed=None) -> np.ndarray:
        """Ancestral sampling with the base (ungated) weights."""
        rng = np.random.default_rng(seed)
        ws = self.effective_weights()
        mix = self.mixing_weights()

        def categorical(probs: np.ndarray) -> np.ndarray:
            cum = np.cumsum(probs, axis=-1)
            u = rng.random(probs.shape[0]) * cum[:, -1]
            return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[-1] - 1)

        def root():
            return categorical(np.broadcast_to(mix, (n, mix.size)))

        def child(d, p, ks):
            w = ws[d][p].reshape(ws[d].shape[1], -1)
            return categorical(w[np.maximum(ks, 0)])

        sel = self._descend(n, root, child)
        x = np.zeros((n, self.N), dtype=np.int8)
        for li, r in enumerate(self.leaf_regions):
            sv = self.leaf_vars[li][self.leaf_valid[li]]
            ks = sel[r]
            u = rng.random((n, sv.size))
            active = ks >= 0
            th = self.theta[li][np.maximum(ks, 0)][:, :sv.size]
            draw = (u < th).astype(np.int8)
            x[np.ix_(active, sv)] = draw[active]
        return x

    def mpe(self, evidence) -> np.ndarray:
        """Max-product completion; ``evidence`` uses -1 for unset variables."""
        e = np.asarray(evidence)
        single = e.ndim == 1
        e = np.atleast_2d(e).astype(np.int64)
        if e.shape[1] != self.N or not np.isin(e, (-1, 0, 1)).all():
            raise DataError(f"evidence must be b x {self.N} with entries in {{-1, 0, 1}}")
        b = e.shape[0]
        unset = e < 0
        x = np.where(unset, 0, e)
        lt, l1t = np.log(self.theta), np.log1p(-self.theta)
        best_val = (self.theta > 0.5).astype(np.int8)  # ties pick 0
        xs = x[:, self.leaf_vars]
        free = unset[:, self.leaf_vars] & self.leaf_valid
        fixed = ~unset[:, self.leaf_vars] & self.leaf_valid
        obs = np.einsum("bls,lks->blk", xs * fixed, lt) + np.einsum("bls,lks->blk", (1 - xs) * fixed, l1t)
        leaf = obs + np.einsum("bls,lks->blk", free.astype(np.float64), np.maximum(lt, l1t))

        args = []
        prev = None
        for d in reversed(range(self.num_layers)):
            layer = self.layers[d]
            src = leaf if prev is None else np.concatenate([leaf, prev], axis=1)
            out, arg = kernels.log_einsum_max(src[:, layer.left_src], src[:, layer.right_src],
                                              np.log(T._softmax_np(layer.logits, 2)))
            args.append(arg)
            prev = out
        args = args[::-1]
        root = (prev if prev is not None else leaf).reshape(b, -1) + T.log_softmax(Tensor(self.mix_logits)).data
        m = root.argmax(axis=1)

        def child(d, p, ks):
            return args[d][np.arange(b), p, np.maximum(ks, 0)]

        sel = self._descend(b, lambda: m, child)
        out = x.copy()
        for li, r in enumerate(self.leaf_regions):
            sv = self.leaf_vars[li][self.leaf_valid[li]]
            ks = sel[r]
            active = ks >= 0
            vals = best_val[li][np.maximum(ks, 0)][:, :sv.size]
            cur = out[:, sv]
            fill = unset[:, sv] & active[:, None]
            cur[fill] = vals[fill]
            out[:, sv] = cur
        out = out.astype(np.int8)
        return out[0] if single else out

    # ------------------------------------------------------------------ checks

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        g = self.graph
        full = set(range(self.N))
        for p in g.partitions:
            ls, rs, ps = set(g.scopes[p.left]), set(g.scopes[p.right]), set(g.scopes[p.parent])
            if ls & rs:
                rep.decomposability.append(
                    f"product under region {p.parent}: child scopes {sorted(ls)} and {sorted(rs)} "
                    f"share {sorted(ls & rs)}")
            if ls | rs != ps:
                rep.smoothness.append(
                    f"sum at region {p.parent}: product child scope {sorted(ls | rs)} != {sorted(ps)}")
        for r in g.roots:
            if set(g.scopes[r]) != full:
                rep.smoothness.append(f"mixing layer: replica root {r} has scope {sorted(g.scopes[r])}")
        for d, layer in enumerate(self.layers):
            tot = np.exp(layer.logits).sum(axis=(-1, -2))
            for p, k in zip(*np.nonzero(np.abs(tot - 1.0) > NORM_TOL)):
                rep.normalization.append(f"einsum layer {d}, partition {p}, entry {k}: weights sum to {tot[p, k]!r}")
        tot = float(np.exp(self.mix_logits).sum())
        if abs(tot - 1.0) > NORM_TOL:
            rep.normalization.append(f"mixing layer: weights sum to {tot!r}")
        th = self.theta[np.broadcast_to(self.leaf_valid[:, None, :], self.theta.shape)]
        if not np.all(np.isfinite(th)) or th.min() < EPS - 1e-15 or th.max() > 1.0 - EPS + 1e-15:
            rep.leaves.append(f"leaf probabilities outside [{EPS}, {1 - EPS}]")
        return rep


def _renormalized_log(w: np.ndarray, n_axes: int) -> np.ndarray:
    lead = w.shape[: w.ndim - n_axes]
    flat = np.maximum(w.reshape(lead + (-1,)), _WEIGHT_FLOOR)
    flat = flat / flat.sum(axis=-1, keepdims=True)
    return np.log(flat).reshape(w.shape)


def build_structure(N: int, D: int, R: int, K: int, seed=0) -> Circuit:
    """Random binary-tree circuit with ``R`` replicas of split depth ``D``."""
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    rng = np.random.default_rng(seed)
    graph = build_region_graph(N, D, R, rng)
    return Circuit(graph, K, rng)


def brute_force_mass(circuit: Circuit, x=None, mask=None, weights=None, max_vars: int = 14) -> float:
    """Sum of ``exp(log_likelihood)`` over completions of the masked variables.

    With ``x`` omitted every variable is free and the result is the total mass
    (1 for a normalized circuit).  Otherwise the unmasked entries of ``x`` are
    held fixed, giving the marginal probability of that partial assignment.
    """
    N = circuit.N
    if N > max_vars:
        raise ContractError(f"brute force enumeration refused for N={N} > {max_vars}")
    if x is None:
        x = np.zeros(N, dtype=np.int8)
        free = np.ones(N, dtype=bool)
    else:
        x = np.asarray(x, dtype=np.int8).reshape(N)
        free = np.zeros(N, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(N)
    idx = np.flatnonzero(free)
    codes = np.arange(2 ** idx.size)
    grid = np.repeat(x[None, :], codes.size, axis=0)
    grid[:, idx] = (codes[:, None] >> np.arange(idx.size)) & 1
    return float(np.exp(circuit.log_likelihood(grid, weights=weights)).sum())
