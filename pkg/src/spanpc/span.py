"""Attention-gated circuits: one encoder per einsum layer re-weights its sum nodes per input.

For a gated layer with base weights ``W = softmax(theta)`` and attention
weights ``W^A = softmax(phi(x))`` (both over the last two axes), the
effective weights are ``normalize(W * W^A)``.  Evaluation uses the identical
form ``softmax(theta + phi(x))``, which leaves the base logits untouched and
is exactly the base circuit when ``phi`` is zero.

Marginals, MPE and sampling always run with the encoders switched off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import Encoder, EncoderConfig, embed_binary, embed_patches
from .circuit import Circuit
from .data import as_binary
from .errors import ContractError, DegeneracyError
from .tensor import Tensor


def reweight(W: Tensor, W_A: Tensor) -> Tensor:
    """``W_S[b,k,i,j] = W[k,i,j] W_A[b,k,i,j] / sum_ij W[k,i,j] W_A[b,k,i,j]``."""
    W = W if isinstance(W, Tensor) else Tensor(W)
    W_A = W_A if isinstance(W_A, Tensor) else Tensor(W_A)
    if (W.data < 0).any() or (W_A.data < 0).any():
        raise ContractError("reweight needs nonnegative factors")
    prod = T.mul(W_A, W)
    mass = prod.data.sum(axis=(-2, -1))
    if (mass <= 0).any():
        raise DegeneracyError("a gated weight slice has zero total mass")
    return T.normalize(prod, axes=(-2, -1))


@dataclass
class SpanModel:
    circuit: Circuit
    encoders: list[Encoder | None]
    embedding: str = "binary"
    image_shape: tuple[int, int, int] | None = None

    @classmethod
    def create(cls, circuit: Circuit, config: EncoderConfig | None = None, seed=0,
               embedding: str = "binary", image_shape=None) -> "SpanModel":
        """Attach one freshly initialized encoder to every einsum layer."""
        config = config or EncoderConfig()
        rng = np.random.default_rng(seed)
        if embedding == "binary":
            if config.d_model != 2:
                raise ContractError("binary embedding fixes d_model = 2")
            n_tokens = circuit.N
        elif embedding == "patches":
            if image_shape is None or config.patch_size is None:
                raise ContractError("patch embedding needs image_shape and config.patch_size")
            H, W, C = image_shape
            p = config.patch_size
            if H * W * C != circuit.N:
                raise ContractError(f"image shape {image_shape} does not match {circuit.N} variables")
            if config.d_model != p * p * C:
                raise ContractError(f"patch embedding needs d_model = p*p*C = {p * p * C}")
            n_tokens = (H // p) * (W // p)
        else:
            raise ContractError(f"unknown embedding {embedding!r}")
        encoders = [Encoder(config, n_tokens, layer.logits.shape, rng) for layer in circuit.layers]
        shape = None if image_shape is None else tuple(int(v) for v in image_shape)
        return cls(circuit, encoders, embedding, shape)

    def __post_init__(self):
        if len(self.encoders) != self.circuit.num_layers:
            raise ContractError(f"{len(self.encoders)} encoders for {self.circuit.num_layers} einsum layers")

    @property
    def gated(self) -> list[bool]:
        return [e is not None for e in self.encoders]

    # ------------------------------------------------------------------ gates

    def tokens(self, x: np.ndarray) -> Tensor:
        if self.embedding == "binary":
            return embed_binary(x)
        H, W, C = self.image_shape
        p = next(e for e in self.encoders if e is not None).config.patch_size
        return embed_patches(x.reshape(x.shape[0], H, W, C), p)

    def gate_logits(self, x: np.ndarray, params: list[dict[str, Tensor] | None] | None = None) -> list[Tensor | None]:
        tok = self.tokens(x)
        out = []
        for d, enc in enumerate(self.encoders):
            if enc is None:
                out.append(None)
            else:
                out.append(enc.gate_logits(tok, None if params is None else params[d]))
        return out

    def gated_weights(self, gates: list[Tensor | None], logits: list[Tensor] | None = None) -> list[Tensor]:
        logits = logits or [Tensor(layer.logits) for layer in self.circuit.layers]
        ws = []
        for theta, g in zip(logits, gates):
            ws.append(T.softmax(theta if g is None else theta + g, axes=(-2, -1)))
        return ws

    # ------------------------------------------------------------------ density

    def log_likelihood_tensor(self, x: np.ndarray, enc_params=None, logits: list[Tensor] | None = None,
                              theta: Tensor | None = None, mix_logits: Tensor | None = None) -> Tensor:
        """Graph-building joint log-density with the encoders active."""
        c = self.circuit
        gates = self.gate_logits(x, enc_params)
        ws = self.gated_weights(gates, logits)
        theta = theta if theta is not None else Tensor(c.theta)
        mix = mix_logits if mix_logits is not None else Tensor(c.mix_logits)
        mix_logw = Tensor(T.log_softmax(mix).data) if not mix.requires_grad else T.log_softmax(mix)
        return c.forward(x, c.leaf_valid, theta, ws, mix_logw)

    def log_likelihood(self, batch) -> np.ndarray:
        x = as_binary(batch, self.circuit.N)
        return self.log_likelihood_tensor(x).data

    def gate_arrays(self, batch) -> list[np.ndarray | None]:
        x = as_binary(batch, self.circuit.N)
        return [None if g is None else g.data for g in self.gate_logits(x)]

    def em_step(self, batch, step_size: float) -> float:
        """EM on the circuit parameters with the encoders active but frozen."""
        x = as_binary(batch, self.circuit.N)
        return self.circuit.em_step(x, step_size, gate_logits=self.gate_arrays(x))

    # ------------------------------------------------------------------ deactivated inference

    def marginal(self, batch, mask) -> np.ndarray:
        return self.circuit.log_likelihood(batch, mask=mask)

    def mpe(self, evidence) -> np.ndarray:
        return self.circuit.mpe(evidence)

    def sample(self, n: int, seed=None) -> np.ndarray:
        return self.circuit.sample(n, seed)

    # ------------------------------------------------------------------ diagnostics

    def dump_effective_weights(self, x) -> dict:
        """Base, attention and gated weight slices for one input, plus the mixing vector."""
        x = as_binary(x, self.circuit.N)
        if x.shape[0] != 1:
            raise ContractError("dump_effective_weights takes a single sample")
        gates = self.gate_logits(x)
        base = self.circuit.effective_weights()
        layers = []
        for d, (w, g) in enumerate(zip(base, gates)):
            entry = {"layer": d, "base": w, "attention": None, "gated": w.copy()}
            if g is not None:
                entry["attention"] = T.softmax(g, axes=(-2, -1)).data[0]
                entry["gated"] = T.softmax(Tensor(self.circuit.layers[d].logits) + g, axes=(-2, -1)).data[0]
            layers.append(entry)
        return {"layers": layers, "mixing": self.circuit.mixing_weights()}

    def global_mass(self, max_vars: int = 12) -> float:
        """``sum_x p(x; gates(x))`` by enumeration; not guaranteed to be 1."""
        N = self.circuit.N
        if N > max_vars:
            raise ContractError(f"global mass enumeration refused for N={N} > {max_vars}")
        codes = np.arange(2 ** N)
        grid = ((codes[:, None] >> np.arange(N)) & 1).astype(np.int8)
        return float(np.exp(self.log_likelihood(grid)).sum())

    def encoder_state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for d, enc in enumerate(self.encoders):
            if enc is not None:
                out += [(f"encoder{d}.{k}", v) for k, v in enc.params.items()]
        return out
