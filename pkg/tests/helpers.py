import numpy as np

from spanpc.circuit import build_structure


def fair_coin(N, D=1, R=1, K=1, seed=0):
    """Every leaf 0.5 and every weight uniform, so p(x) = 2^-N."""
    c = build_structure(N, D, R, K, seed=seed)
    c.theta[:] = 0.5
    for layer in c.layers:
        kk = layer.logits.shape[-1] * layer.logits.shape[-2]
        layer.logits[:] = -np.log(kk)
    c.mix_logits[:] = -np.log(c.mix_logits.size)
    return c


def random_binary(rng, n, N, p=0.5):
    return (rng.random((n, N)) < p).astype(np.int8)


def random_params(c, rng, scale=2.0):
    """Spread the parameters well away from their initial range."""
    c.theta = np.where(c.leaf_valid[:, None, :], rng.uniform(0.02, 0.98, c.theta.shape), 0.5)
    for layer in c.layers:
        z = rng.normal(0, scale, layer.logits.shape)
        flat = z.reshape(z.shape[:-2] + (-1,))
        flat = flat - np.log(np.exp(flat).sum(axis=-1, keepdims=True))
        layer.logits = flat.reshape(z.shape)
    z = rng.normal(0, scale, c.mix_logits.shape)
    c.mix_logits = z - np.log(np.exp(z).sum())
    return c
