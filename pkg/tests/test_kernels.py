import numpy as np
import pytest

from spanpc import kernels


def naive_forward(left, right, w):
    B, P, K = left.shape
    Ko = w.shape[-3]
    out = np.empty((B, P, Ko))
    for b in range(B):
        for p in range(P):
            wp = w[b, p] if w.ndim == 5 else w[p]
            for k in range(Ko):
                tot = sum(wp[k, i, j] * np.exp(left[b, p, i] + right[b, p, j]) for i in range(K) for j in range(K))
                out[b, p, k] = np.log(tot)
    return out


def random_case(rng, B=3, P=4, Ko=2, K=3, per_sample=False):
    left = rng.normal(size=(B, P, K)) * 3
    right = rng.normal(size=(B, P, K)) * 3
    shape = (B, P, Ko, K, K) if per_sample else (P, Ko, K, K)
    w = rng.random(shape)
    w /= w.sum(axis=(-1, -2), keepdims=True)
    return left, right, w


@pytest.mark.parametrize("per_sample", [False, True])
def test_forward_matches_naive(backend, rng, per_sample):
    left, right, w = random_case(rng, per_sample=per_sample)
    out = kernels.log_einsum_forward(left, right, w)[0]
    np.testing.assert_allclose(out, naive_forward(left, right, w), rtol=0, atol=1e-12)


def test_large_magnitudes_stay_finite(backend, rng):
    left, right, w = random_case(rng)
    left = left - 800.0
    right = right + 700.0
    out = kernels.log_einsum_forward(left, right, w)[0]
    ref = naive_forward(left + 800.0, right - 700.0, w) - 100.0
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_minus_inf_child(backend, rng):
    left, right, w = random_case(rng, B=1, P=1)
    left[0, 0, :] = -np.inf
    out = kernels.log_einsum_forward(left, right, w)[0]
    assert np.all(out == -np.inf)
    left[0, 0, 0] = 0.0
    out = kernels.log_einsum_forward(left, right, w)[0]
    assert np.all(np.isfinite(out))


def test_shared_equals_per_sample_bitwise(backend, rng):
    left, right, w = random_case(rng, B=5)
    shared = kernels.log_einsum_forward(left, right, w)[0]
    per = kernels.log_einsum_forward(left, right, np.broadcast_to(w, (5,) + w.shape).copy())[0]
    np.testing.assert_array_equal(shared, per)


@pytest.mark.parametrize("per_sample", [False, True])
def test_backward_matches_finite_differences(backend, rng, per_sample):
    left, right, w = random_case(rng, B=2, P=2, Ko=2, K=2, per_sample=per_sample)
    g = rng.normal(size=(2, 2, 2))
    out, a, c, s = kernels.log_einsum_forward(left, right, w)
    dl, dr, dw = kernels.log_einsum_backward(g, a, c, s, w)
    assert dw.shape == w.shape

    def f(l_, r_, w_):
        return float((kernels.log_einsum_forward(l_, r_, w_)[0] * g).sum())

    h = 1e-6
    for arr, grad, pos in ((left, dl, 0), (right, dr, 1), (w, dw, 2)):
        for idx in np.ndindex(arr.shape):
            args_p = [left.copy(), right.copy(), w.copy()]
            args_m = [left.copy(), right.copy(), w.copy()]
            args_p[pos][idx] += h
            args_m[pos][idx] -= h
            num = (f(*args_p) - f(*args_m)) / (2 * h)
            assert abs(num - grad[idx]) <= 1e-6 * max(1.0, abs(num))


def test_max_product(backend, rng):
    left, right, w = random_case(rng)
    logw = np.log(w)
    out, arg = kernels.log_einsum_max(left, right, logw)
    K = left.shape[-1]
    cand = logw[None] + left[:, :, None, :, None] + right[:, :, None, None, :]
    flat = cand.reshape(cand.shape[:3] + (K * K,))
    np.testing.assert_allclose(out, flat.max(axis=-1), atol=1e-12)
    np.testing.assert_array_equal(arg, flat.argmax(axis=-1))


def test_max_ties_pick_lowest_index(backend):
    left = np.zeros((1, 1, 2))
    right = np.zeros((1, 1, 2))
    logw = np.log(np.full((1, 1, 2, 2), 0.25))
    _, arg = kernels.log_einsum_max(left, right, logw)
    assert arg[0, 0, 0] == 0


@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled backend not built")
def test_backends_agree(rng):
    left, right, w = random_case(rng, B=7, P=5, Ko=3, K=4, per_sample=True)
    g = rng.normal(size=(7, 5, 3))
    res = {}
    for name in kernels.available_backends():
        with kernels.using(name):
            out, a, c, s = kernels.log_einsum_forward(left, right, w)
            res[name] = (out,) + tuple(kernels.log_einsum_backward(g, a, c, s, w))
    ref, other = res["numpy"], res["cython"]
    for x, y in zip(ref, other):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


def test_backend_switching():
    before = kernels.backend()
    with kernels.using("numpy"):
        assert kernels.backend() == "numpy"
    assert kernels.backend() == before
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path
    mod = runpy.run_path(str(Path(__file__).resolve().parent.parent / "benchmarks" / "bench_kernels.py"))
    mod["main"](["--batch", "3", "--partitions", "2", "--K", "2", "--repeats", "1"])
    assert "forward ms" in capsys.readouterr().out
