from .gnn import GNNConfig, GraphBatch, classify, encode_nodes, gnn_forward, init_gnn_params
from .losses import batch_cross_entropy, cross_entropy
from .params import ParamStore, adam_step
from .tensor import Tensor

__all__ = [
    "GNNConfig",
    "GraphBatch",
    "ParamStore",
    "Tensor",
    "adam_step",
    "batch_cross_entropy",
    "classify",
    "cross_entropy",
    "encode_nodes",
    "gnn_forward",
    "init_gnn_params",
]
