"""Supervised training loop over labeled instances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .core import knn_sparsify, label_edges
from .errors import InvalidArgumentError
from .model import BatchedGraph, Model, ModelConfig
from .nn import adam_step
from .sampler import ClassIndex, active_batches, shuffle_batches


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 500
    batch_size: int = 32
    lr: float = 0.001
    sampling: str = "shuffle"        # shuffle | active
    seed: int = 0
    pos_weight: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.sampling not in ("shuffle", "active"):
            raise InvalidArgumentError(f"unknown sampling mode {self.sampling!r}")


def build_graphs(instances, k: int):
    """Sparsify and label every instance once, up front."""
    graphs = []
    for inst in instances:
        if inst.optimal_tour is None:
            raise InvalidArgumentError(f"instance {inst.id} carries no oracle tour")
        graph = knn_sparsify(inst, k)
        labeled, _ = label_edges(graph, inst.optimal_tour)
        graphs.append(labeled)
    return graphs


def fit(instances, config: ModelConfig, settings: TrainSettings,
        resume_from: Model | None = None, start_epoch: int = 0,
        checkpoint_every: int = 0, checkpoint_path=None,
        on_epoch=None) -> tuple[Model, list[tuple[int, float]]]:
    """Train for the configured epochs; returns the model and the loss log.

    One epoch is ceil(dataset / batch) gradient steps under either sampling
    mode. Per-epoch sampler seeds derive from (seed, epoch), so resuming
    from a checkpoint continues the exact same batch sequence.
    """
    if not instances:
        raise InvalidArgumentError("training needs a non-empty dataset")
    graphs = build_graphs(instances, config.k)
    index = ClassIndex.from_sizes([inst.n for inst in instances])
    if resume_from is not None:
        model = resume_from
    else:
        model = Model.init(config, seed=settings.seed, lr=settings.lr,
                           pos_weight=settings.pos_weight)
    batches_per_epoch = math.ceil(len(instances) / settings.batch_size)

    loss_log: list[tuple[int, float]] = []
    for epoch in range(start_epoch, settings.epochs):
        epoch_seed = rngmod.derive_seed(settings.seed, rngmod.SALT_EPOCH, epoch)
        if settings.sampling == "shuffle":
            batches = shuffle_batches(len(instances), settings.batch_size, epoch_seed)
        else:
            batches = active_batches(index, settings.batch_size, batches_per_epoch, epoch_seed)
        losses = []
        for picks in batches:
            batch = BatchedGraph.from_graphs([graphs[i] for i in picks])
            loss = model.loss_and_grad(batch)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at epoch {epoch}")
            adam_step(model.store, settings.lr)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        loss_log.append((epoch, mean_loss))
        if checkpoint_every and checkpoint_path and (epoch + 1) % checkpoint_every == 0:
            model.save(f"{checkpoint_path}.epoch{epoch + 1}", epochs_done=epoch + 1)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return model, loss_log


def write_loss_log(path, rows, meta: dict) -> None:
    """Per-epoch mean loss as CSV, with the run settings in header comments."""
    with open(path, "w", encoding="ascii") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}={meta[key]}\n")
        fh.write("epoch,mean_loss\n")
        for epoch, loss in rows:
            fh.write(f"{epoch},{loss!r}\n")
