"""Slot-attention set prediction for relational triple extraction.

Library + CLI: a small trainable encoder feeds an iterative slot-attention
module (softmax or entropic optimal-transport variant), structured heads
decode one candidate triple per slot, and a Hungarian-matched set loss
trains the whole stack end to end on synthetic corpora. Per-slot attention
maps are exported as explanations.
"""

from .autodiff import Tensor, backward, grad, no_grad
from .data import CorpusManifest, Example, classify_overlap, generate_synthetic
from .evaluation import EvalReport, compute_report, evaluate_model, match_triples
from .heads import DecodedTriple, TriplePrediction, decode
from .kernels import active_backend, available_backends
from .matching import Assignment, GoldTriple, hungarian, pairwise_cost, set_loss
from .model import ModelConfig, TripleExtractor
from .ot import mesh, plan_entropy, sinkhorn
from .training import RunRecord, TrainConfig, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad", "no_grad",
    "CorpusManifest", "Example", "classify_overlap", "generate_synthetic",
    "EvalReport", "compute_report", "evaluate_model", "match_triples",
    "DecodedTriple", "TriplePrediction", "decode",
    "active_backend", "available_backends",
    "Assignment", "GoldTriple", "hungarian", "pairwise_cost", "set_loss",
    "ModelConfig", "TripleExtractor",
    "mesh", "plan_entropy", "sinkhorn",
    "RunRecord", "TrainConfig", "lr_schedule", "train",
    "__version__",
]
