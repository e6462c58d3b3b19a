"""Training schedules: EM-only baseline and the three-phase EM / Adam schedule."""

from __future__ import annotations

import copy
import hashlib
import io
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .circuit import Circuit
from .data import BinaryDataset, batches
from .errors import ContractError, DataError
from .span import SpanModel

log = logging.getLogger(__name__)

CSV_HEADER = "epoch,phase,train_ll,valid_ll,test_ll,seconds"


@dataclass
class TrainConfig:
    ep1: int = 2
    ep2: int = 5
    ep3: int = 3
    em_step: float = 0.05
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 100
    seed: int = 0
    eval_batch: int = 2000

    def __post_init__(self):
        if min(self.ep1, self.ep2, self.ep3) < 0:
            raise ContractError("epoch counts must be >= 0")
        if not 0.0 < self.em_step <= 1.0:
            raise ContractError(f"em_step must lie in (0, 1], got {self.em_step}")
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.batch_size <= 0:
            raise ContractError(f"batch_size must be positive, got {self.batch_size}")

    @property
    def total_epochs(self) -> int:
        return self.ep1 + self.ep2 + self.ep3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_ll: float
    valid_ll: float
    test_ll: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.records:
            buf.write(f"{r.epoch},{r.phase},{r.train_ll!r},{r.valid_ll!r},{r.test_ll!r},{r.seconds:.3f}\n")
        return buf.getvalue()


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Bias-corrected Adam *ascent* step, in place; returns ``params``."""
    if set(grads) - set(params):
        raise ContractError(f"gradients for unknown parameters {sorted(set(grads) - set(params))}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p += cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params


# --------------------------------------------------------------------------
# evaluation


def evaluate(model: Circuit | SpanModel, split, batch_size: int = 2000) -> float:
    """Arithmetic mean log-likelihood; joint density (encoders active) for SPAN."""
    split = np.asarray(split)
    if len(split) == 0:
        raise DataError("cannot evaluate an empty split")
    total = 0.0
    for lo in range(0, len(split), batch_size):
        total += float(model.log_likelihood(split[lo:lo + batch_size]).sum())
    return total / len(split)


def _checksum(arrays) -> str:
    h = hashlib.sha256()
    for name, arr in arrays:
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _check_data(data: BinaryDataset) -> None:
    for s in ("train", "valid", "test"):
        if len(data.split(s)) == 0:
            raise DataError(f"{data.name}: {s} split is empty")


class _Tracker:
    def __init__(self, model, data: BinaryDataset, cfg: TrainConfig):
        self.data, self.cfg = data, cfg
        self.log = TrainLog()
        self.best_valid = -np.inf
        self.best = model

    def record(self, model, epoch: int, phase: str, started: float) -> None:
        cfg, data = self.cfg, self.data
        rec = EpochRecord(epoch, phase,
                          evaluate(model, data.train, cfg.eval_batch),
                          evaluate(model, data.valid, cfg.eval_batch),
                          evaluate(model, data.test, cfg.eval_batch),
                          time.perf_counter() - started)
        self.log.append(rec)
        log.info("epoch %d [%s] train %.4f valid %.4f test %.4f (%.1fs)",
                 epoch, phase, rec.train_ll, rec.valid_ll, rec.test_ll, rec.seconds)
        if rec.valid_ll > self.best_valid:
            self.best_valid = rec.valid_ll
            self.best = copy.deepcopy(model)
            self.log.best_epoch = epoch


def _epoch_batches(data: BinaryDataset, cfg: TrainConfig, epoch: int):
    return batches(data.train, cfg.batch_size, seed=[cfg.seed, epoch], shuffle=True)


def train_einet(circuit: Circuit, data: BinaryDataset, cfg: TrainConfig) -> tuple[Circuit, TrainLog]:
    """Mini-batch EM for ``ep1 + ep2 + ep3`` epochs; keeps the best-validation circuit."""
    _check_data(data)
    circuit = circuit.copy()
    track = _Tracker(circuit, data, cfg)
    for epoch in range(cfg.total_epochs):
        started = time.perf_counter()
        for batch in _epoch_batches(data, cfg, epoch):
            circuit.em_step(batch, cfg.em_step)
        track.record(circuit, epoch, "em", started)
    return track.best.copy(), track.log


def _em_epoch(model: SpanModel, data, cfg, epoch) -> None:
    frozen = _checksum(model.encoder_state())
    for batch in _epoch_batches(data, cfg, epoch):
        model.em_step(batch, cfg.em_step)
    if _checksum(model.encoder_state()) != frozen:
        raise RuntimeError("encoder parameters changed during an EM epoch")


def _adam_epoch(model: SpanModel, data, cfg, epoch, state: AdamState) -> None:
    frozen = _checksum(model.circuit.state())
    for batch in _epoch_batches(data, cfg, epoch):
        adam_update_encoders(model, batch, state, cfg)
    if _checksum(model.circuit.state()) != frozen:
        raise RuntimeError("circuit parameters changed during an Adam epoch")


def adam_update_encoders(model: SpanModel, batch, state: AdamState, cfg: TrainConfig) -> float:
    """One Adam ascent step on the mean joint log-likelihood of ``batch``; returns it."""
    params = [None if e is None else e.tensors(requires_grad=True) for e in model.encoders]
    objective = T.mean(model.log_likelihood_tensor(np.asarray(batch), params))
    objective.backward()
    flat_p, flat_g = {}, {}
    for d, (enc, ps) in enumerate(zip(model.encoders, params)):
        if enc is None:
            continue
        for name, t in ps.items():
            flat_p[f"{d}.{name}"] = enc.params[name]
            flat_g[f"{d}.{name}"] = t.grad if t.grad is not None else np.zeros_like(t.data)
    adam_step(flat_p, flat_g, state, cfg)
    return float(objective.data)


def train_span(model: SpanModel, data: BinaryDataset, cfg: TrainConfig) -> tuple[SpanModel, TrainLog]:
    """Warm-up EM, alternating EM/Adam epochs, then EM fine-tuning."""
    _check_data(data)
    model = copy.deepcopy(model)
    track = _Tracker(model, data, cfg)
    state = AdamState()
    epoch = 0
    for _ in range(cfg.ep1):
        started = time.perf_counter()
        _em_epoch(model, data, cfg, epoch)
        track.record(model, epoch, "warmup", started)
        epoch += 1
    for i in range(cfg.ep2):
        started = time.perf_counter()
        if i % 2 == 0:
            _em_epoch(model, data, cfg, epoch)
            phase = "coord-em"
        else:
            _adam_epoch(model, data, cfg, epoch, state)
            phase = "coord-adam"
        track.record(model, epoch, phase, started)
        epoch += 1
    for _ in range(cfg.ep3):
        started = time.perf_counter()
        _em_epoch(model, data, cfg, epoch)
        track.record(model, epoch, "finetune", started)
        epoch += 1
    return copy.deepcopy(track.best), track.log
