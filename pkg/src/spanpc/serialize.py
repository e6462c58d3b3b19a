"""Versioned model files.

Layout: the magic ``SPANv1``, a little-endian u32 header length, a UTF-8 JSON
header describing structure and array shapes, then each declared array as raw
little-endian f64 in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .attention import Encoder, EncoderConfig
from .circuit import Circuit, Partition, RegionGraph
from .errors import ContractError, ModelFormatError
from .span import SpanModel

MAGIC = b"SPANv1"
_PREFIX = len(MAGIC) + 4


def _structure(c: Circuit) -> dict:
    g = c.graph
    return {
        "num_vars": g.num_vars, "depth": g.depth, "replicas": g.replicas, "K": c.K,
        "scopes": [list(s) for s in g.scopes],
        "partitions": [[p.parent, p.left, p.right] for p in g.partitions],
        "roots": list(g.roots),
    }


def model_to_bytes(model: Circuit | SpanModel) -> bytes:
    if isinstance(model, SpanModel):
        circuit, kind = model.circuit, "span"
    elif isinstance(model, Circuit):
        circuit, kind = model, "einet"
    else:
        raise ContractError(f"cannot serialize {type(model).__name__}")
    arrays = [(f"circuit.{n}", a) for n, a in circuit.state()]
    header = {"kind": kind, "structure": _structure(circuit)}
    if kind == "span":
        encs = []
        for d, enc in enumerate(model.encoders):
            if enc is None:
                encs.append(None)
                continue
            encs.append({"config": enc.config.to_dict(), "n_tokens": enc.n_tokens,
                         "head_shape": list(enc.head_shape)})
            arrays += [(f"encoder{d}.{n}", a) for n, a in enc.params.items()]
        header.update(encoders=encs, embedding=model.embedding,
                      image_shape=None if model.image_shape is None else list(model.image_shape))
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    return b"".join(parts)


def save_model(path, model: Circuit | SpanModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def _fail(msg: str, offset: int):
    raise ModelFormatError(msg, offset)


def model_from_bytes(raw: bytes) -> Circuit | SpanModel:
    if raw[:len(MAGIC)] != MAGIC:
        _fail(f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}", 0)
    if len(raw) < _PREFIX:
        _fail("truncated header length", len(MAGIC))
    (hlen,) = struct.unpack("<I", raw[len(MAGIC):_PREFIX])
    if _PREFIX + hlen > len(raw):
        _fail(f"header length {hlen} exceeds file size {len(raw)}", len(MAGIC))
    try:
        header = json.loads(raw[_PREFIX:_PREFIX + hlen].decode())
    except UnicodeDecodeError as e:
        _fail(f"header is not UTF-8: {e.reason}", _PREFIX + e.start)
    except json.JSONDecodeError as e:
        _fail(f"malformed header: {e.msg}", _PREFIX + e.pos)
    try:
        kind = header["kind"]
        st = header["structure"]
        specs = [(a["name"], tuple(int(s) for s in a["shape"])) for a in header["arrays"]]
    except (KeyError, TypeError, ValueError) as e:
        _fail(f"header missing or malformed field {e}", _PREFIX)

    offset = _PREFIX + hlen
    arrays = {}
    for name, shape in specs:
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(raw):
            _fail(f"payload for {name} needs {n} bytes, {len(raw) - offset} left", offset)
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += n
    if offset != len(raw):
        _fail(f"{len(raw) - offset} trailing bytes after declared payloads", offset)

    try:
        graph = RegionGraph(int(st["num_vars"]), [tuple(s) for s in st["scopes"]],
                            [Partition(*p) for p in st["partitions"]], list(st["roots"]),
                            depth=int(st["depth"]), replicas=int(st["replicas"]))
        circuit = Circuit(graph, int(st["K"]), rng=0)
        circuit.load_state({n[len("circuit."):]: a for n, a in arrays.items() if n.startswith("circuit.")})
        if kind == "einet":
            return circuit
        if kind != "span":
            _fail(f"unknown model kind {kind!r}", _PREFIX)
        encoders = []
        for d, spec in enumerate(header["encoders"]):
            if spec is None:
                encoders.append(None)
                continue
            enc = Encoder(EncoderConfig(**spec["config"]), int(spec["n_tokens"]), tuple(spec["head_shape"]), rng=0)
            for k, v in enc.params.items():
                got = arrays[f"encoder{d}.{k}"]
                if got.shape != v.shape:
                    _fail(f"encoder{d}.{k}: shape {got.shape} != expected {v.shape}", _PREFIX)
                enc.params[k] = got
            encoders.append(enc)
        shape = header.get("image_shape")
        return SpanModel(circuit, encoders, header.get("embedding", "binary"),
                         None if shape is None else tuple(shape))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        _fail(f"inconsistent model description: {e}", _PREFIX)


def load_model(path) -> Circuit | SpanModel:
    return model_from_bytes(Path(path).read_bytes())
