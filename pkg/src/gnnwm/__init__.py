"""Ownership watermarks embedded in the explanations of GNN node classifiers."""

__version__ = "0.1.0"

from .explain import KernelConfig, binarize, explain
from .graph import Graph, load_graph, save_graph, split_nodes, synth_graph
from .models import GnnModel, init_model, load_model, save_model
from .numeric import Rng
from .verification import build_null, count_MI, verify
from .watermark import design_watermark, embed

__all__ = [
    "__version__", "Graph", "GnnModel", "KernelConfig", "Rng", "binarize", "build_null", "count_MI",
    "design_watermark", "embed", "explain", "init_model", "load_graph", "load_model", "save_graph",
    "save_model", "split_nodes", "synth_graph", "verify",
]
