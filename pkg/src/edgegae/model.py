"""The graph autoencoder: residual gated encoder plus edge-centered decoder.

Update rules, with i the destination and j the source of a directed edge
j -> i (all weight matrices are H x H and per-layer):

    e_hat  = C e + D h_i + E h_j                  raw edge update
    omega  = sigmoid(e) / (sum_in sigmoid(e) + delta)   channelwise gates
             (gates use the pre-update edge embeddings)
    h_hat  = A h_i + sum_in omega * B h_j         gated node update
    h     <- ReLU(BN(h_hat)) + h                  residual, per layer
    e     <- ReLU(BN(e_hat)) + e

Decoding, with (s, d) the edge's source and destination:

    dvec  = sigmoid(F h_s + G h_d) * (J e)
    prob  = sigmoid(MLP(dvec))                    H -> ... -> 1 head
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, rng as rngmod
from .core import Heatmap, SparseGraph
from .errors import CheckpointFormatError, InvalidArgumentError


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (k is the graph sparsification degree)."""

    L: int = 4
    H: int = 64
    k: int = 25
    mlp_layers: int = 3
    delta: float = 1e-10

    def __post_init__(self):
        if self.L < 1 or self.H < 1 or self.mlp_layers < 1 or self.k < 1:
            raise InvalidArgumentError("L, H, k, mlp_layers must all be >= 1")
        if self.delta <= 0:
            raise InvalidArgumentError("delta must be positive")


@dataclass(frozen=True)
class BatchedGraph:
    """Multiple sparse graphs concatenated into flat arrays.

    Edge endpoints are shifted per instance so no edge crosses an instance
    boundary; offsets recover the original graphs exactly.
    """

    graph_count: int
    node_offsets: np.ndarray       # (G+1,)
    edge_offsets: np.ndarray       # (G+1,)
    node_feat: np.ndarray          # (sum n_i, 2)
    src: np.ndarray                # (sum E_i,)
    dst: np.ndarray                # (sum E_i,)
    edge_feat: np.ndarray          # (sum E_i, 1)
    labels: np.ndarray | None      # (sum E_i,) float 0/1
    dst_order: np.ndarray          # edges sorted by destination (stable)
    dst_ptr: np.ndarray            # CSR pointers into dst_order, length N+1

    @classmethod
    def from_graphs(cls, graphs: list[SparseGraph]) -> "BatchedGraph":
        if not graphs:
            raise InvalidArgumentError("cannot batch zero graphs")
        node_offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
        edge_offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
        for i, g in enumerate(graphs):
            node_offsets[i + 1] = node_offsets[i] + g.n
            edge_offsets[i + 1] = edge_offsets[i] + g.n_edges
        node_feat = np.concatenate([g.node_feat for g in graphs], axis=0)
        src = np.concatenate([g.src + node_offsets[i] for i, g in enumerate(graphs)])
        dst = np.concatenate([g.dst + node_offsets[i] for i, g in enumerate(graphs)])
        edge_feat = np.concatenate([g.edge_feat for g in graphs]).reshape(-1, 1)
        with_labels = [g.labels is not None for g in graphs]
        if all(with_labels):
            labels = np.concatenate([g.labels for g in graphs]).astype(np.float64)
        elif any(with_labels):
            raise InvalidArgumentError("either all or none of the graphs may carry labels")
        else:
            labels = None
        n_nodes = int(node_offsets[-1])
        dst_order = np.argsort(dst, kind="stable").astype(np.int64)
        dst_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n_nodes), out=dst_ptr[1:])
        return cls(graph_count=len(graphs), node_offsets=node_offsets, edge_offsets=edge_offsets,
                   node_feat=node_feat, src=src, dst=dst, edge_feat=edge_feat, labels=labels,
                   dst_order=dst_order, dst_ptr=dst_ptr)

    @property
    def n_nodes(self) -> int:
        return int(self.node_offsets[-1])

    @property
    def n_edges(self) -> int:
        return int(self.edge_offsets[-1])

    def slice_graph(self, i: int) -> SparseGraph:
        no, ne = self.node_offsets[i], self.node_offsets[i + 1]
        eo, ee = self.edge_offsets[i], self.edge_offsets[i + 1]
        labels = None if self.labels is None else self.labels[eo:ee].astype(np.int64)
        return SparseGraph(n=int(ne - no), node_feat=self.node_feat[no:ne],
                           src=self.src[eo:ee] - no, dst=self.dst[eo:ee] - no,
                           edge_feat=self.edge_feat[eo:ee, 0], labels=labels)


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Parameter names and shapes in their canonical (insertion) order."""
    h = config.H
    shapes: dict[str, tuple] = {
        "embed.node.W": (h, 2), "embed.node.b": (h,),
        "embed.edge.W": (h, 1), "embed.edge.b": (h,),
    }
    for l in range(config.L):
        for w in "ABCDE":
            shapes[f"enc.{l}.{w}"] = (h, h)
        for kind in ("node", "edge"):
            shapes[f"bn.{l}.{kind}.gamma"] = (h,)
            shapes[f"bn.{l}.{kind}.beta"] = (h,)
    for w in "FGJ":
        shapes[f"dec.{w}"] = (h, h)
    for i in range(config.mlp_layers):
        out_dim = 1 if i == config.mlp_layers - 1 else h
        shapes[f"mlp.{i}.W"] = (out_dim, h)
        shapes[f"mlp.{i}.b"] = (out_dim,)
    return shapes


def bn_keys(config: ModelConfig) -> list[str]:
    return [f"{l}.{kind}" for l in range(config.L) for kind in ("node", "edge")]


class Model:
    """Link-prediction model over batched sparse graphs."""

    def __init__(self, config: ModelConfig, store: nn.ParamStore,
                 bn_states: dict[str, nn.BatchNormState],
                 lr: float = 0.001, pos_weight: float = 1.0, seed: int = 0):
        self.config = config
        self.store = store
        self.bn_states = bn_states
        self.lr = lr
        self.pos_weight = pos_weight
        self.seed = seed

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, lr: float = 0.001,
             pos_weight: float = 1.0) -> "Model":
        gen = rngmod.generator(seed, rngmod.SALT_INIT)
        store = nn.ParamStore()
        for name, shape in param_shapes(config).items():
            if name.endswith(".gamma"):
                store.add(name, np.ones(shape))
            elif name.endswith(".beta") or name.endswith(".b"):
                store.add(name, np.zeros(shape))
            else:
                store.add(name, nn.glorot_uniform(gen, shape))
        bn_states = {key: nn.BatchNormState.fresh(config.H) for key in bn_keys(config)}
        return cls(config, store, bn_states, lr=lr, pos_weight=pos_weight, seed=seed)

    # -- forward -------------------------------------------------------------

    def _build(self, tape: nn.Tape, batch: BatchedGraph, mode: str, capture: dict | None = None):
        cfg = self.config
        pv = {name: tape.leaf(entry.value) for name, entry in self.store.items()}
        src, dst = batch.src, batch.dst
        n_nodes = batch.n_nodes
        # eval-mode aggregation is canonical (value-ordered) so heatmaps are
        # exactly permutation-equivariant and batch-independent
        canonical = mode == "eval"

        h = tape.linear(tape.leaf(batch.node_feat), pv["embed.node.W"], pv["embed.node.b"],
                        row_stable=canonical)
        e = tape.linear(tape.leaf(batch.edge_feat), pv["embed.edge.W"], pv["embed.edge.b"],
                        row_stable=canonical)

        for l in range(cfg.L):
            e_hat = tape.add(tape.linear(e, pv[f"enc.{l}.C"], row_stable=canonical),
                             tape.add(tape.gather(tape.linear(h, pv[f"enc.{l}.D"], row_stable=canonical), dst),
                                      tape.gather(tape.linear(h, pv[f"enc.{l}.E"], row_stable=canonical), src)))
            gates_raw = tape.sigmoid(e)
            denom = tape.add_const(
                tape.segment_sum(gates_raw, dst, batch.dst_order, batch.dst_ptr, n_nodes, canonical),
                cfg.delta)
            omega = tape.div(gates_raw, tape.gather(denom, dst))
            if capture is not None:
                capture.setdefault("gates", []).append(omega.value)
            msg = tape.mul(omega, tape.gather(tape.linear(h, pv[f"enc.{l}.B"], row_stable=canonical), src))
            h_hat = tape.add(tape.linear(h, pv[f"enc.{l}.A"], row_stable=canonical),
                             tape.segment_sum(msg, dst, batch.dst_order, batch.dst_ptr, n_nodes, canonical))
            h = tape.add(tape.relu(tape.batch_norm(
                h_hat, pv[f"bn.{l}.node.gamma"], pv[f"bn.{l}.node.beta"],
                self.bn_states[f"{l}.node"], mode)), h)
            e = tape.add(tape.relu(tape.batch_norm(
                e_hat, pv[f"bn.{l}.edge.gamma"], pv[f"bn.{l}.edge.beta"],
                self.bn_states[f"{l}.edge"], mode)), e)

        gate = tape.sigmoid(tape.add(tape.gather(tape.linear(h, pv["dec.F"], row_stable=canonical), src),
                                     tape.gather(tape.linear(h, pv["dec.G"], row_stable=canonical), dst)))
        x = tape.mul(gate, tape.linear(e, pv["dec.J"], row_stable=canonical))
        for i in range(cfg.mlp_layers):
            x = tape.linear(x, pv[f"mlp.{i}.W"], pv[f"mlp.{i}.b"], row_stable=canonical)
            if i < cfg.mlp_layers - 1:
                x = tape.relu(x)
        probs = tape.reshape(tape.sigmoid(x), (-1,))
        if capture is not None:
            capture["node_embeddings"] = h.value
            capture["edge_embeddings"] = e.value
        return pv, probs

    def forward(self, batch: BatchedGraph, mode: str = "train", with_loss: bool = True,
                capture: dict | None = None) -> tuple[np.ndarray, float | None]:
        tape = nn.Tape()
        _, probs = self._build(tape, batch, mode, capture=capture)
        loss = None
        if with_loss:
            if batch.labels is None:
                raise InvalidArgumentError("loss requested but the batch carries no labels")
            loss = float(tape.bce(probs, batch.labels, self.pos_weight).value)
        return probs.value, loss

    def loss_and_grad(self, batch: BatchedGraph, mode: str = "train") -> float:
        """Forward + backward; accumulates parameter gradients in the store."""
        if batch.labels is None:
            raise InvalidArgumentError("training requires labeled batches")
        tape = nn.Tape()
        pv, probs = self._build(tape, batch, mode)
        loss = tape.bce(probs, batch.labels, self.pos_weight)
        tape.backward(loss)
        for name, var in pv.items():
            if var.grad is not None:
                self.store[name].grad += var.grad
        return float(loss.value)

    def predict_heatmap(self, graph: SparseGraph) -> Heatmap:
        batch = BatchedGraph.from_graphs([graph])
        probs, _ = self.forward(batch, mode="eval", with_loss=False)
        return Heatmap(n=graph.n, src=graph.src, dst=graph.dst, probs=probs)

    # -- persistence -----------------------------------------------------------

    def config_dict(self) -> dict:
        return {"L": self.config.L, "H": self.config.H, "k": self.config.k,
                "lr": self.lr, "pos_weight": self.pos_weight, "seed": self.seed}

    def save(self, path, epochs_done: int = 0) -> None:
        nn.save_checkpoint(self.store, self.bn_states, self.config_dict(), path,
                           epochs_done=epochs_done)

    @classmethod
    def load(cls, path) -> tuple["Model", int]:
        """Rebuild a model from a checkpoint; returns (model, epochs_done).

        Validation is strict: the tensor set must match the architecture
        implied by the stored config exactly, by name and by shape.
        """
        data = nn.load_checkpoint(path)
        cfg_json = data.config
        mlp_layers = sum(1 for name in data.store.names()
                         if name.startswith("mlp.") and name.endswith(".W"))
        config = ModelConfig(L=int(cfg_json["L"]), H=int(cfg_json["H"]), k=int(cfg_json["k"]),
                             mlp_layers=max(mlp_layers, 1))
        expected = param_shapes(config)
        actual = set(data.store.names())
        unknown = actual - set(expected)
        if unknown:
            raise CheckpointFormatError(f"unknown tensor name(s): {sorted(unknown)}")
        missing = set(expected) - actual
        if missing:
            raise CheckpointFormatError(f"missing tensor(s): {sorted(missing)}")
        for name, shape in expected.items():
            if data.store[name].value.shape != shape:
                raise CheckpointFormatError(
                    f"tensor {name!r} has shape {data.store[name].value.shape}, expected {shape}")
        expected_bn = set(bn_keys(config))
        if set(data.bn_states) != expected_bn:
            raise CheckpointFormatError(
                f"running statistics {sorted(data.bn_states)} do not match layers {sorted(expected_bn)}")
        # rebuild the store in canonical order so iteration order is stable
        store = nn.ParamStore()
        store.step_count = data.store.step_count
        for name in expected:
            entry = store.add(name, data.store[name].value)
            entry.adam_m = data.store[name].adam_m
            entry.adam_v = data.store[name].adam_v
        model = cls(config, store, data.bn_states,
                    lr=float(cfg_json["lr"]), pos_weight=float(cfg_json["pos_weight"]),
                    seed=int(cfg_json["seed"]))
        return model, data.epochs_done
