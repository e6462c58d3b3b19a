"""Attention-gated probabilistic circuits over binary data."""

from .attention import Encoder, EncoderConfig
from .circuit import Circuit, RegionGraph, build_region_graph, build_structure
from .data import BinaryDataset, load_binary_dataset
from .errors import ContractError, DataError, DegeneracyError, DimensionError, ModelFormatError, SpanError
from .kernels import backend, set_backend
from .span import SpanModel, reweight
from .trainer import TrainConfig, TrainLog, evaluate, train_einet, train_span

__version__ = "0.1.0"

__all__ = [
    "BinaryDataset", "Circuit", "ContractError", "DataError", "DegeneracyError", "DimensionError",
    "Encoder", "EncoderConfig", "ModelFormatError", "RegionGraph", "SpanError", "SpanModel",
    "TrainConfig", "TrainLog", "backend", "build_region_graph", "build_structure", "evaluate",
    "load_binary_dataset", "reweight", "set_backend", "train_einet", "train_span",
]
