"""Solving Euclidean TSPs as link prediction on sparse graphs.

The pipeline: generate exactly-labeled instances, sparsify them into
directed k-NN graphs, train a residual gated graph autoencoder to score
each edge's membership in the optimal tour, and convert the resulting
heatmaps into feasible tours with roulette/beam search plus 2-opt.
"""

from .core import (Heatmap, Instance, SparseGraph, Tour, generate_instance, knn_sparsify,
                   label_edges, make_tour, read_dataset, read_heatmap, tour_length,
                   write_dataset, write_heatmap)
from .metrics import EvalReport, evaluate, f1_score, optimal_gap, roc_auc, write_report
from .model import BatchedGraph, Model, ModelConfig
from .nn import BatchNormState, ParamStore, Tape, adam_step, batch_norm, bce_loss, relu, sigmoid
from .oracle import DatasetSpec, build_dataset, held_karp, heuristic_oracle
from .sampler import ClassIndex, active_batches, shuffle_batches
from .search import SearchConfig, beam_tour, roulette_tour, solve, symmetrize, two_opt
from .train import TrainSettings, fit

__version__ = "0.1.0"
