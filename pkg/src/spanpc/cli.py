"""``spanpc`` command line: train, eval, sample, reconstruct, heatmap, validate.

Exit codes: 0 ok, 2 data error, 3 contract error, 4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attention import EncoderConfig
from .circuit import Circuit, build_structure
from .data import (BinaryDataset, as_binary, kmeans, load_binary_dataset, load_images, read_binary_file,
                   write_binary_file)
from .errors import ContractError, DataError
from .serialize import load_model, save_model
from .span import SpanModel
from .trainer import TrainConfig, evaluate, train_einet, train_span

log = logging.getLogger("spanpc")

EXIT_OK, EXIT_DATA, EXIT_CONTRACT, EXIT_INVALID = 0, 2, 3, 4
MODEL_FILE = "model.spn"
TRAINLOG_FILE = "trainlog.csv"
CONFIG_FILE = "config.json"


@dataclass
class RunConfig:
    kind: str = "span"
    dataset: str | None = None
    dataset_dir: str | None = None
    images: str | None = None
    clusters: int = 100
    cluster: int = 0
    binarize_threshold: float = 0.5
    D: int = 3
    R: int = 3
    K: int = 5
    seed: int = 0
    encoder: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("einet", "span"):
            raise ContractError(f"kind must be 'einet' or 'span', got {self.kind!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": self.seed})

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(**self.encoder)


_TRAIN_FLAGS = {f.name for f in fields(TrainConfig)} - {"seed"}
_ENCODER_FLAGS = {f.name for f in fields(EncoderConfig)}


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: line {e.lineno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: expected a JSON object")
    return cfg


def build_run_config(args) -> RunConfig:
    """Config file first, then every flag the user actually passed."""
    raw = _read_config(args.config)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ContractError(f"unknown config keys {sorted(unknown)}")
    raw.setdefault("encoder", {})
    raw.setdefault("train", {})
    for name, value in vars(args).items():
        if value is None or name in ("command", "config", "out", "overwrite", "func", "verbose"):
            continue
        if name in _TRAIN_FLAGS:
            raw["train"][name] = value
        elif name in _ENCODER_FLAGS:
            raw["encoder"][name] = value
        elif name in known:
            raw[name] = value
    return RunConfig(**raw)


# --------------------------------------------------------------------------
# data


def _image_dataset(cfg: RunConfig):
    imgs = load_images(cfg.images)
    n = len(imgs.images)
    k = min(cfg.clusters, n)
    if not 0 <= cfg.cluster < k:
        raise ContractError(f"cluster {cfg.cluster} out of range for {k} clusters")
    km = kmeans(imgs.normalized(), k, seed=cfg.seed)
    members = np.flatnonzero(km.labels == cfg.cluster)
    if len(members) < 3:
        raise DataError(f"cluster {cfg.cluster} has only {len(members)} images")
    x = imgs.binarized(cfg.binarize_threshold)[members]
    order = np.random.default_rng([cfg.seed, 1]).permutation(len(x))
    n_valid = n_test = max(1, len(x) // 10)
    test, valid, train = np.split(x[order], [n_test, n_test + n_valid])
    log.info("cluster %d: %d train, %d valid, %d test images", cfg.cluster, len(train), len(valid), len(test))
    return BinaryDataset(f"{Path(cfg.images).stem}-c{cfg.cluster}", train, valid, test), imgs.shape


def load_run_data(cfg: RunConfig):
    if cfg.images is not None:
        return _image_dataset(cfg)
    if cfg.dataset is None or cfg.dataset_dir is None:
        raise ContractError("training needs --dataset and --dataset-dir, or --images")
    return load_binary_dataset(cfg.dataset_dir, cfg.dataset), None


def build_model(cfg: RunConfig, num_vars: int, image_shape=None) -> Circuit | SpanModel:
    ss = np.random.SeedSequence(cfg.seed)
    s_struct, s_enc = ss.spawn(2)
    circuit = build_structure(num_vars, cfg.D, cfg.R, cfg.K, seed=np.random.default_rng(s_struct))
    if cfg.kind == "einet":
        return circuit
    enc = cfg.encoder_config()
    if image_shape is None:
        return SpanModel.create(circuit, enc, seed=np.random.default_rng(s_enc))
    C = image_shape[2]
    p = enc.patch_size or 1
    enc_dict = {**enc.to_dict(), "patch_size": p, "d_model": p * p * C}
    return SpanModel.create(circuit, EncoderConfig(**enc_dict), seed=np.random.default_rng(s_enc),
                            embedding="patches", image_shape=image_shape)


def _prepare_out(out: str | None, overwrite: bool, names) -> Path:
    if out is None:
        raise ContractError("--out is required")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (path / n).exists()]
    if clash and not overwrite:
        raise ContractError(f"{path}: {', '.join(clash)} already exist; pass --overwrite")
    return path


def _fmt(v: float) -> str:
    return repr(float(v))


def _load_x(args, num_vars: int) -> np.ndarray:
    if getattr(args, "data", None):
        x = read_binary_file(args.data)
    elif args.dataset and args.dataset_dir:
        x = load_binary_dataset(args.dataset_dir, args.dataset).split(args.split)
    else:
        raise ContractError("pass --data FILE or --dataset with --dataset-dir")
    return as_binary(x, num_vars)


def _require_model(args):
    if args.model is None:
        raise ContractError("--model is required")
    try:
        return load_model(args.model)
    except FileNotFoundError:
        raise DataError(f"model file {args.model} not found") from None


def _circuit(model) -> Circuit:
    return model.circuit if isinstance(model, SpanModel) else model


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = build_run_config(args)
    out = _prepare_out(args.out, args.overwrite, [CONFIG_FILE, MODEL_FILE, TRAINLOG_FILE])
    tcfg = cfg.train_config()
    resolved = asdict(cfg)
    resolved["train"] = tcfg.to_dict()
    if cfg.kind == "span":
        resolved["encoder"] = cfg.encoder_config().to_dict()
    (out / CONFIG_FILE).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    data, image_shape = load_run_data(cfg)
    model = build_model(cfg, data.num_vars, image_shape)
    if cfg.kind == "einet":
        model, tlog = train_einet(model, data, tcfg)
    else:
        model, tlog = train_span(model, data, tcfg)
    save_model(out / MODEL_FILE, model)
    (out / TRAINLOG_FILE).write_text(tlog.to_csv())
    print(f"test_ll={_fmt(evaluate(model, data.test, tcfg.eval_batch))}")
    return EXIT_OK


def parse_mask(spec: str | None, num_vars: int) -> np.ndarray | None:
    """``all``, ``none`` or comma-separated variable indices / ``a-b`` ranges."""
    if spec is None:
        return None
    mask = np.zeros(num_vars, dtype=bool)
    spec = spec.strip().lower()
    if spec == "all":
        mask[:] = True
        return mask
    if spec in ("", "none"):
        return mask
    for tok in spec.split(","):
        try:
            lo, _, hi = tok.partition("-")
            lo_i = int(lo)
            hi_i = int(hi) if hi else lo_i
        except ValueError:
            raise ContractError(f"bad mask token {tok!r}") from None
        if not 0 <= lo_i <= hi_i < num_vars:
            raise ContractError(f"mask range {tok!r} outside 0..{num_vars - 1}")
        mask[lo_i:hi_i + 1] = True
    return mask


def cmd_eval(args) -> int:
    model = _require_model(args)
    c = _circuit(model)
    x = _load_x(args, c.N)
    mask = parse_mask(args.mask, c.N)
    if mask is not None:
        ll = c.log_likelihood(x, mask=mask)
    else:
        ll = np.concatenate([model.log_likelihood(x[lo:lo + 2000]) for lo in range(0, len(x), 2000)])
    lines = "".join(_fmt(v) + "\n" for v in ll)
    if args.out:
        Path(args.out).write_text("ll\n" + lines)
    else:
        sys.stdout.write(lines)
    print(f"mean_ll={_fmt(ll.mean())}")
    return EXIT_OK


def cmd_sample(args) -> int:
    model = _require_model(args)
    if args.n < 1:
        raise ContractError("--n must be >= 1")
    sample = _circuit(model).sample(args.n, seed=args.seed)
    if args.out:
        write_binary_file(args.out, sample)
    else:
        for row in sample:
            print(",".join(str(int(v)) for v in row))
    return EXIT_OK


def missing_mask(region: str, image_shape) -> np.ndarray:
    """Flat channel-last raster mask for one half of an ``H x W x C`` image."""
    H, W, C = image_shape
    m = np.zeros((H, W, C), dtype=bool)
    if region == "left":
        m[:, :W // 2] = True
    elif region == "right":
        m[:, W // 2:] = True
    elif region == "top":
        m[:H // 2] = True
    elif region == "bottom":
        m[H // 2:] = True
    elif region != "none":
        raise ContractError(f"unknown --missing region {region!r}")
    return m.reshape(-1)


def _parse_shape(spec: str | None, model) -> tuple[int, int, int]:
    if spec:
        try:
            dims = tuple(int(v) for v in spec.split(","))
        except ValueError:
            raise ContractError(f"bad --image-shape {spec!r}") from None
        if len(dims) == 2:
            dims = dims + (1,)
        if len(dims) != 3:
            raise ContractError("--image-shape takes H,W or H,W,C")
        return dims
    if isinstance(model, SpanModel) and model.image_shape is not None:
        return model.image_shape
    return (1, _circuit(model).N, 1)


def cmd_reconstruct(args) -> int:
    model = _require_model(args)
    c = _circuit(model)
    x = _load_x(args, c.N)
    shape = _parse_shape(args.image_shape, model)
    if int(np.prod(shape)) != c.N:
        raise ContractError(f"image shape {shape} does not cover {c.N} variables")
    miss = missing_mask(args.missing, shape)
    evidence = np.where(miss[None, :], -1, x).astype(np.int8)
    out = c.mpe(evidence)
    if args.out:
        write_binary_file(args.out, out)
    else:
        for row in out:
            print(",".join(str(int(v)) for v in row))
    return EXIT_OK


def slice_entropy(w: np.ndarray) -> float:
    p = w[w > 0]
    return float(-(p * np.log(p)).sum())


def heatmap_rows(model, x) -> list[dict]:
    """One record per normalized weight slice: base, gated and mixing."""
    if isinstance(model, SpanModel):
        dump = model.dump_effective_weights(x)
    else:
        ws = model.effective_weights()
        dump = {"layers": [{"layer": d, "base": w, "gated": w} for d, w in enumerate(ws)],
                "mixing": model.mixing_weights()}
    rows = []
    for entry in dump["layers"]:
        for kind in ("base", "gated"):
            w = entry[kind]
            for p in range(w.shape[0]):
                for k in range(w.shape[1]):
                    s = w[p, k].reshape(-1)
                    rows.append({"kind": kind, "layer": entry["layer"], "partition": p, "entry": k,
                                 "total": float(s.sum()), "entropy": slice_entropy(s), "weights": s})
    mix = dump["mixing"]
    rows.append({"kind": "mixing", "layer": -1, "partition": 0, "entry": 0,
                 "total": float(mix.sum()), "entropy": slice_entropy(mix), "weights": mix})
    return rows


def cmd_heatmap(args) -> int:
    model = _require_model(args)
    c = _circuit(model)
    x = _load_x(args, c.N)
    if not 0 <= args.row < len(x):
        raise ContractError(f"--row {args.row} outside 0..{len(x) - 1}")
    rows = heatmap_rows(model, x[args.row:args.row + 1])
    lines = ["kind,layer,partition,entry,total,entropy,weights"]
    for r in rows:
        ws = ";".join(_fmt(v) for v in r["weights"])
        lines.append(f"{r['kind']},{r['layer']},{r['partition']},{r['entry']},"
                     f"{_fmt(r['total'])},{_fmt(r['entropy'])},{ws}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    for kind in ("base", "gated"):
        ent = [r["entropy"] for r in rows if r["kind"] == kind]
        if ent:
            print(f"mean_entropy_{kind}={_fmt(np.mean(ent))}")
    return EXIT_OK


def wiring_problems(model) -> list[str]:
    if not isinstance(model, SpanModel):
        return []
    out = []
    c = model.circuit
    if len(model.encoders) != c.num_layers:
        return [f"{len(model.encoders)} encoders for {c.num_layers} einsum layers"]
    for d, (enc, layer) in enumerate(zip(model.encoders, c.layers)):
        if enc is None:
            continue
        if enc.head_shape != layer.logits.shape:
            out.append(f"encoder {d}: head shape {enc.head_shape} != layer weights {layer.logits.shape}")
        if model.embedding == "binary":
            n_tok, d_model = c.N, 2
        else:
            H, W, C = model.image_shape
            p = enc.config.patch_size
            n_tok, d_model = (H // p) * (W // p), p * p * C
        if enc.n_tokens != n_tok or enc.config.d_model != d_model:
            out.append(f"encoder {d}: expects {enc.n_tokens} tokens of width {enc.config.d_model}, "
                       f"embedding yields {n_tok} of width {d_model}")
        for k, v in enc.params.items():
            if not np.all(np.isfinite(v)):
                out.append(f"encoder {d}: parameter {k} is not finite")
    return out


def cmd_validate(args) -> int:
    model = _require_model(args)
    report = _circuit(model).validate()
    problems = report.lines() + [f"gating: {p}" for p in wiring_problems(model)]
    if problems:
        for line in problems:
            print(line)
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (train) or file")
    p.add_argument("--dataset-dir", dest="dataset_dir")
    p.add_argument("--model", help="model file")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--data", help="binary data file, one sample per line")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spanpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write model.spn, trainlog.csv, config.json")
    _common(p)
    p.add_argument("--kind", choices=("einet", "span"))
    p.add_argument("--dataset")
    p.add_argument("--images", help="SPIM image container (clustered, binarized)")
    p.add_argument("--clusters", type=int)
    p.add_argument("--cluster", type=int)
    p.add_argument("--D", type=int)
    p.add_argument("--R", type=int)
    p.add_argument("--K", type=int)
    for name in ("ep1", "ep2", "ep3", "batch_size"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    for name in ("em_step", "lr"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    for name in ("heads", "n_stacks", "d_ff", "patch_size"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-sample log-likelihoods")
    _common(p)
    _data_flags(p)
    p.add_argument("--mask", help="variables to marginalize: 'all', or indices like 0,3,5-7")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="ancestral samples (encoders off)")
    _common(p)
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reconstruct", help="MPE completion of a missing image half")
    _common(p)
    _data_flags(p)
    p.add_argument("--missing", default="right", choices=("left", "right", "top", "bottom", "none"))
    p.add_argument("--image-shape", dest="image_shape", help="H,W[,C]; defaults to the model's or 1,N,1")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("heatmap", help="weight slices and their entropies for one input")
    _common(p)
    _data_flags(p)
    p.add_argument("--row", type=int, default=0)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("validate", help="structural and normalization checks")
    _common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
