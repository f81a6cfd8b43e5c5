"""Multi-channel relational graph attention for link prediction and entity classification."""
from .autodiff import ParamStore, Tape, Tensor, adam_step, backward
from .config import RunConfig, load_config, parse_config
from .graph import MultiRelGraph, Triplet, Vocab, build_graph, load_triplets, neighbors
from .layer import LayerConfig, ModelConfig, RgatEncoder
from .decoder import QattConfig, QattDecoder

__all__ = [
    "MultiRelGraph", "ModelConfig", "LayerConfig", "ParamStore", "QattConfig", "QattDecoder",
    "RgatEncoder", "RunConfig", "Tape", "Tensor", "Triplet", "Vocab", "adam_step", "backward",
    "build_graph", "load_config", "load_triplets", "neighbors", "parse_config",
]
__version__ = "0.1.0"
