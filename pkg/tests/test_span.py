import numpy as np
import pytest

from spanpc import tensor as T
from spanpc.attention import EncoderConfig
from spanpc.circuit import brute_force_mass, build_structure
from spanpc.errors import ContractError, DegeneracyError
from spanpc.span import SpanModel, reweight
from spanpc.tensor import Tensor

from helpers import random_binary, random_params
from oracles import central_difference, naive_marginal


def randomize_heads(model, rng, scale=1.0):
    for enc in model.encoders:
        enc.params["head.w"] = rng.normal(0, scale, enc.params["head.w"].shape)
        enc.params["head.b"] = rng.normal(0, scale, enc.params["head.b"].shape)
    return model


class TestReweight:
    def test_hand_example(self):
        W = np.array([[[0.4, 0.1], [0.3, 0.2]]])
        WA = np.array([[[[0.5, 0.1], [0.2, 0.2]]]])
        out = reweight(Tensor(W), Tensor(WA)).data[0, 0]
        np.testing.assert_allclose(out, [[0.645, 0.032], [0.194, 0.129]], atol=5e-4)

    def test_uniform_gate_keeps_weights(self, rng):
        W = rng.random((3, 4, 4))
        W /= W.sum(axis=(1, 2), keepdims=True)
        out = reweight(Tensor(W), Tensor(np.full((2, 3, 4, 4), 1 / 16))).data
        np.testing.assert_allclose(out, np.broadcast_to(W, out.shape), rtol=1e-15, atol=0)

    def test_uniform_weights_return_gate(self, rng):
        WA = rng.random((2, 3, 4, 4))
        WA /= WA.sum(axis=(2, 3), keepdims=True)
        out = reweight(Tensor(np.full((3, 4, 4), 1 / 16)), Tensor(WA)).data
        np.testing.assert_allclose(out, WA, rtol=1e-14)

    def test_equals_softmax_of_summed_logits(self, rng):
        theta, phi = rng.normal(size=(2, 3, 3)), rng.normal(size=(4, 2, 3, 3))
        a = reweight(T.softmax(Tensor(theta), axes=(-2, -1)), T.softmax(Tensor(phi), axes=(-2, -1))).data
        b = T.softmax(Tensor(theta + phi), axes=(-2, -1)).data
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_errors(self):
        with pytest.raises(ContractError):
            reweight(Tensor(-np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))))
        with pytest.raises(DegeneracyError):
            reweight(Tensor(np.array([[[1.0, 0.0], [0.0, 0.0]]])), Tensor(np.array([[[[0.0, 0.5], [0.5, 0.0]]]])))

    def test_gradient(self, rng):
        W, WA = rng.uniform(0.1, 1, (2, 2, 2)), rng.uniform(0.1, 1, (3, 2, 2, 2))
        g = rng.normal(size=(3, 2, 2, 2))
        tW, tA = Tensor(W, requires_grad=True), Tensor(WA, requires_grad=True)
        T.sum(reweight(tW, tA) * Tensor(g)).backward()
        f = lambda: float((reweight(Tensor(W), Tensor(WA)).data * g).sum())  # noqa: E731
        np.testing.assert_allclose(tW.grad, central_difference(f, W), atol=1e-8)
        np.testing.assert_allclose(tA.grad, central_difference(f, WA), atol=1e-8)


class TestSpanModel:
    def test_gating_identity_bitwise(self, backend, rng):
        c = random_params(build_structure(12, 3, 3, 4, seed=0), rng)
        m = SpanModel.create(c, EncoderConfig(), seed=1)
        x = random_binary(rng, 300, 12)
        np.testing.assert_array_equal(m.log_likelihood(x), c.log_likelihood(x))

    def test_frozen_gates_normalized(self, backend, rng):
        c = random_params(build_structure(8, 3, 2, 3, seed=2), rng)
        m = randomize_heads(SpanModel.create(c, EncoderConfig(), seed=3), rng, 2.0)
        for x_star in random_binary(rng, 3, 8):
            gates = m.gate_arrays(x_star[None])
            ws = [T._softmax_np(layer.logits + g[0], 2) for layer, g in zip(c.layers, gates)]
            assert brute_force_mass(c, weights=ws) == pytest.approx(1.0, abs=1e-9)

    def test_gated_slices_normalized(self, rng):
        c = build_structure(6, 2, 2, 3, seed=2)
        m = randomize_heads(SpanModel.create(c, EncoderConfig(), seed=3), rng, 3.0)
        for w in m.gated_weights(m.gate_logits(random_binary(rng, 5, 6))):
            assert np.abs(w.data.sum(axis=(-1, -2)) - 1).max() < 1e-9

    def test_deactivated_inference_is_base(self, rng):
        c = random_params(build_structure(8, 2, 2, 3, seed=4), rng)
        m = randomize_heads(SpanModel.create(c, EncoderConfig(), seed=5), rng)
        x = random_binary(rng, 10, 8)
        mask = rng.random(8) < 0.4
        np.testing.assert_array_equal(m.marginal(x, mask), c.log_likelihood(x, mask=mask))
        np.testing.assert_array_equal(m.sample(30, seed=2), c.sample(30, seed=2))
        ev = np.where(rng.random((10, 8)) < 0.5, -1, x)
        np.testing.assert_array_equal(m.mpe(ev), c.mpe(ev))
        assert np.all(m.marginal(x, np.ones(8, bool)) == 0.0)
        assert m.marginal(x[:1], mask)[0] == pytest.approx(np.log(naive_marginal(c, x[0], mask)), abs=1e-9)

    def test_gates_change_density(self, rng):
        c = build_structure(6, 2, 2, 3, seed=2)
        m = randomize_heads(SpanModel.create(c, EncoderConfig(), seed=3), rng)
        x = random_binary(rng, 5, 6)
        assert np.abs(m.log_likelihood(x) - c.log_likelihood(x)).max() > 1e-6

    def test_dump_effective_weights(self, rng):
        c = build_structure(6, 2, 2, 3, seed=2)
        m = SpanModel.create(c, EncoderConfig(), seed=3)
        x = random_binary(rng, 1, 6)
        dump = m.dump_effective_weights(x)
        for entry, base in zip(dump["layers"], c.effective_weights()):
            np.testing.assert_allclose(entry["gated"], base, atol=1e-15)
            np.testing.assert_allclose(entry["attention"], 1 / 9, atol=1e-15)
        randomize_heads(m, rng)
        dump = m.dump_effective_weights(x)
        for entry in dump["layers"]:
            for key in ("base", "attention", "gated"):
                assert np.abs(entry[key].sum(axis=(-1, -2)) - 1).max() < 1e-9
        assert dump["mixing"].sum() == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ContractError):
            m.dump_effective_weights(random_binary(rng, 2, 6))

    def test_global_mass_diagnostic(self, rng):
        c = build_structure(6, 2, 2, 3, seed=2)
        m = SpanModel.create(c, EncoderConfig(), seed=3)
        assert m.global_mass() == pytest.approx(1.0, abs=1e-12)
        randomize_heads(m, rng, 2.0)
        assert np.isfinite(m.global_mass())

    def test_patch_embedding_model(self, rng):
        c = build_structure(16, 2, 2, 2, seed=0)
        cfg = EncoderConfig(d_model=4, heads=2, patch_size=2)
        m = randomize_heads(SpanModel.create(c, cfg, seed=0, embedding="patches", image_shape=(4, 4, 1)), rng)
        assert m.encoders[0].n_tokens == 4
        assert np.all(np.isfinite(m.log_likelihood(random_binary(rng, 3, 16))))
        with pytest.raises(ContractError):
            SpanModel.create(c, EncoderConfig(d_model=2, patch_size=2), embedding="patches", image_shape=(4, 4, 1))

    def test_binary_embedding_needs_width_two(self):
        with pytest.raises(ContractError):
            SpanModel.create(build_structure(4, 1, 1, 2), EncoderConfig(d_model=4, heads=2))

    @pytest.mark.parametrize("pooling", ["mean", "flatten"])
    def test_gradients_match_finite_differences(self, backend, rng, pooling):
        c = random_params(build_structure(6, 2, 2, 3, seed=1), rng, 1.0)
        m = randomize_heads(SpanModel.create(c, EncoderConfig(n_stacks=1, pooling=pooling), seed=2), rng, 0.5)
        x = random_binary(rng, 8, 6)
        params = [e.tensors(requires_grad=True) for e in m.encoders]
        logits = [Tensor(l.logits, requires_grad=True) for l in c.layers]
        T.mean(m.log_likelihood_tensor(x, params, logits)).backward()

        def f():
            return float(m.log_likelihood_tensor(x, None, [Tensor(l.logits) for l in c.layers]).data.mean())

        checked = []
        for enc, ps in zip(m.encoders, params):
            for name, arr in enc.params.items():
                checked.append((central_difference(f, arr, 1e-5), ps[name].grad))
        for layer, t in zip(c.layers, logits):
            checked.append((central_difference(f, layer.logits, 1e-5), t.grad))
        for num, an in checked:
            rel = np.abs(num - an) / np.maximum(np.abs(num) + np.abs(an), 1e-6)
            assert rel.max() < 1e-2
