"""Randomized invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spanpc import tensor as T
from spanpc.attention import EncoderConfig
from spanpc.circuit import brute_force_mass, build_structure
from spanpc.data import batches, kmeans
from spanpc.span import SpanModel
from spanpc.tensor import Tensor

from helpers import random_binary, random_params

finite = st.floats(-50, 50, allow_nan=False)
structures = st.tuples(st.integers(2, 7), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
                       st.integers(0, 10 ** 6))


def make_circuit(spec, seed):
    N, D, R, K, s = spec
    return random_params(build_structure(N, D, R, K, seed=s), np.random.default_rng(seed))


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(Tensor(x)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_log_sum_exp_bounds(x):
    v = T.log_sum_exp(Tensor(x), axis=-1).data
    m = x.max(axis=-1)
    assert np.all(v >= m - 1e-12)
    assert np.all(v <= m + np.log(x.shape[-1]) + 1e-12)


@given(arrays(np.float64, st.integers(1, 24), elements=finite), st.sampled_from([(2, 3), (3, 2), (6, 1)]))
def test_reshape_round_trip(flat, outer):
    if flat.size % 6:
        flat = np.resize(flat, 6 * ((flat.size + 5) // 6))
    shape = (flat.size // 6,) + outer
    back = T.reshape(T.reshape(Tensor(flat), shape), (flat.size,)).data
    np.testing.assert_array_equal(back, flat)


@settings(max_examples=25)
@given(structures, st.integers(0, 1000))
def test_random_circuit_is_normalized(spec, seed):
    c = make_circuit(spec, seed)
    assert abs(brute_force_mass(c) - 1.0) < 1e-9


@settings(max_examples=25)
@given(structures, st.integers(0, 1000))
def test_marginalizing_one_variable_sums_its_values(spec, seed):
    c = make_circuit(spec, seed)
    rng = np.random.default_rng(seed)
    x = random_binary(rng, 1, c.N)
    v = int(rng.integers(c.N))
    mask = np.zeros(c.N, bool)
    mask[v] = True
    x0, x1 = x.copy(), x.copy()
    x0[0, v], x1[0, v] = 0, 1
    lhs = c.log_likelihood(x, mask=mask)[0]
    rhs = np.logaddexp(c.log_likelihood(x0)[0], c.log_likelihood(x1)[0])
    assert abs(lhs - rhs) < 1e-10


@settings(max_examples=20)
@given(structures, st.integers(0, 1000))
def test_full_em_never_decreases_likelihood(spec, seed):
    c = make_circuit(spec, seed)
    x = random_binary(np.random.default_rng(seed + 1), 30, c.N, 0.3)
    before = c.log_likelihood(x).mean()
    c.em_step(x, 1.0)
    assert c.log_likelihood(x).mean() >= before - 1e-9


@settings(max_examples=15)
@given(st.integers(3, 6), st.integers(0, 1000))
def test_gated_model_matches_its_own_weights(N, seed):
    rng = np.random.default_rng(seed)
    m = SpanModel.create(build_structure(N, 2, 2, 2, seed=seed), EncoderConfig(n_stacks=1), seed=seed)
    for e in m.encoders:
        e.params["head.w"] = rng.normal(size=e.params["head.w"].shape)
    x = random_binary(rng, 3, N)
    gates = m.gate_arrays(x)
    for i in range(3):
        own = [None if g is None else (g[i] + layer.logits) for g, layer in zip(gates, m.circuit.layers)]
        w = [np.exp(o - np.logaddexp.reduce(o.reshape(o.shape[:-2] + (-1,)), axis=-1)[..., None, None])
             for o in own]
        assert abs(m.log_likelihood(x[i:i + 1])[0] - m.circuit.log_likelihood(x[i:i + 1], weights=w)[0]) < 1e-10


@given(st.integers(1, 60), st.integers(1, 17), st.integers(0, 100))
def test_batches_partition_the_split(n, size, seed):
    split = np.arange(n)[:, None]
    got = np.concatenate([b[:, 0] for b in batches(split, size, seed=seed)])
    assert sorted(got.tolist()) == list(range(n))


@settings(max_examples=25)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 100))
def test_kmeans_objective_is_monotone(n, k, seed):
    k = min(k, n)
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    res = kmeans(pts, k, seed=seed)
    obj = np.asarray(res.objective)
    assert np.all(np.diff(obj) <= 1e-9 * max(1.0, obj[0]))
    assert res.labels.shape == (n,) and set(res.labels.tolist()) <= set(range(k))
