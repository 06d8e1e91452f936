"""TSP instances, tours, sparse graph construction, and on-disk formats.

Coordinates live in the unit square and all arithmetic is 64-bit. Tour
lengths are accumulated with ``math.fsum`` so that a tour's length is
bitwise identical under rotation and reversal of its order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetParseError, InvalidArgumentError

MIN_CITIES = 4


def _as_coords(coords) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(coords, dtype=np.float64))
    if a.ndim != 2 or a.shape[1] != 2:
        raise InvalidArgumentError(f"coords must be (n, 2), got {a.shape}")
    return a


def is_permutation(order, n: int) -> bool:
    order = np.asarray(order)
    if order.shape != (n,):
        return False
    return np.array_equal(np.sort(order), np.arange(n))


@dataclass(frozen=True)
class Tour:
    """A Hamiltonian cycle as a node permutation plus its cached length."""

    order: np.ndarray
    length: float

    def __post_init__(self):
        object.__setattr__(self, "order", np.ascontiguousarray(self.order, dtype=np.int64))
        self.order.setflags(write=False)
        if not is_permutation(self.order, len(self.order)):
            raise InvalidArgumentError("tour order is not a permutation")


@dataclass(frozen=True)
class Instance:
    """A set of cities in the unit square with an optional reference tour."""

    id: str
    coords: np.ndarray
    optimal_tour: Tour | None = None

    def __post_init__(self):
        coords = _as_coords(self.coords)
        object.__setattr__(self, "coords", coords)
        coords.setflags(write=False)
        if self.n < MIN_CITIES:
            raise InvalidArgumentError(f"need at least {MIN_CITIES} cities, got {self.n}")
        if coords.min() < 0.0 or coords.max() > 1.0:
            raise InvalidArgumentError("coordinates must lie in [0, 1]")
        if self.optimal_tour is not None and len(self.optimal_tour.order) != self.n:
            raise InvalidArgumentError("tour size does not match instance size")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def distance_matrix(self) -> np.ndarray:
        d = self.coords[:, None, :] - self.coords[None, :, :]
        return np.hypot(d[..., 0], d[..., 1])


@dataclass(frozen=True)
class SparseGraph:
    """Directed k-NN graph: node coordinates, edge distances, optional labels."""

    n: int
    node_feat: np.ndarray          # (n, 2) coordinates
    src: np.ndarray                # (E,) edge sources
    dst: np.ndarray                # (E,) edge destinations
    edge_feat: np.ndarray          # (E,) Euclidean distances
    labels: np.ndarray | None = None   # (E,) in {0, 1}

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]


@dataclass(frozen=True)
class Heatmap:
    """Per-directed-edge probability of belonging to the optimal tour."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.shape != self.src.shape or self.dst.shape != self.src.shape:
            raise InvalidArgumentError("heatmap arrays must have equal length")
        if self.probs.size and (self.probs.min() < 0.0 or self.probs.max() > 1.0):
            raise InvalidArgumentError("heatmap probabilities must lie in [0, 1]")


def generate_instance(n: int, rng_seed: int) -> Instance:
    """n i.i.d. uniform points in the unit square, deterministic in the seed."""
    if n < MIN_CITIES:
        raise InvalidArgumentError(f"n must be >= {MIN_CITIES}, got {n}")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    coords = rng.random((n, 2))
    return Instance(id=f"n{n}-s{rng_seed}", coords=coords)


def tour_length(instance_or_coords, order) -> float:
    """Closed-cycle Euclidean length of ``order`` over the instance's cities.

    Uses exact summation, so the result is invariant under rotation and
    reversal of the order, bit for bit.
    """
    coords = instance_or_coords.coords if isinstance(instance_or_coords, Instance) else _as_coords(instance_or_coords)
    n = coords.shape[0]
    order = np.asarray(order, dtype=np.int64)
    if not is_permutation(order, n):
        raise InvalidArgumentError("order is not a permutation of 0..n-1")
    pts = coords[order]
    nxt = np.roll(pts, -1, axis=0)
    seg = np.hypot(pts[:, 0] - nxt[:, 0], pts[:, 1] - nxt[:, 1])
    return math.fsum(seg.tolist())


def make_tour(instance_or_coords, order) -> Tour:
    return Tour(order=np.asarray(order, dtype=np.int64), length=tour_length(instance_or_coords, order))


def knn_sparsify(instance: Instance, k: int) -> SparseGraph:
    """Directed graph with out-edges from each node to its min(k, n-1) nearest
    neighbors; distance ties break toward the smaller node index."""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    n = instance.n
    kk = min(k, n - 1)
    dist = instance.distance_matrix()
    np.fill_diagonal(dist, np.inf)
    # stable sort keeps index order among equal distances
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    src = np.repeat(np.arange(n, dtype=np.int64), kk)
    dst = np.ascontiguousarray(nearest.reshape(-1).astype(np.int64))
    edge_feat = dist[src, dst]
    return SparseGraph(n=n, node_feat=instance.coords, src=src, dst=dst, edge_feat=edge_feat)


def label_edges(graph: SparseGraph, optimal: Tour) -> tuple[SparseGraph, int]:
    """Label each directed edge 1 iff its endpoints are adjacent in the tour.

    Returns the labeled graph and the coverage deficit: the number of
    undirected tour edges that the sparse graph cannot represent (possible
    at small k; those positives are dropped rather than guessed).
    """
    n = graph.n
    if len(optimal.order) != n:
        raise InvalidArgumentError("tour and graph disagree on node count")
    succ = np.empty(n, dtype=np.int64)
    succ[optimal.order] = np.roll(optimal.order, -1)
    labels = ((succ[graph.src] == graph.dst) | (succ[graph.dst] == graph.src)).astype(np.int64)

    present = np.zeros((n, n), dtype=bool)
    present[graph.src, graph.dst] = True
    u = optimal.order
    v = np.roll(optimal.order, -1)
    deficit = int(np.sum(~(present[u, v] | present[v, u])))

    labeled = SparseGraph(n=n, node_feat=graph.node_feat, src=graph.src, dst=graph.dst,
                          edge_feat=graph.edge_feat, labels=labels)
    return labeled, deficit


# ---------------------------------------------------------------------------
# Dataset file format: one instance per line,
#   x1 y1 x2 y2 ... xN yN output i1 i2 ... iN i1
# with 1-based tour indices written as a closed cycle.
# ---------------------------------------------------------------------------

def write_dataset(instances, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for inst in instances:
            if inst.optimal_tour is None:
                raise InvalidArgumentError(f"instance {inst.id} has no tour to write")
            coords = " ".join(f"{c:.15f}" for c in inst.coords.reshape(-1))
            cycle = inst.optimal_tour.order.tolist()
            cycle.append(cycle[0])
            tour = " ".join(str(i + 1) for i in cycle)
            fh.write(f"{coords} output {tour}\n")


def read_dataset(path) -> list[Instance]:
    instances = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = line.split()
            if "output" not in tokens:
                raise DatasetParseError("missing 'output' separator", line=lineno)
            split = tokens.index("output")
            coord_tok, tour_tok = tokens[:split], tokens[split + 1:]
            if len(coord_tok) % 2 != 0:
                raise DatasetParseError("odd number of coordinate values", line=lineno)
            n = len(coord_tok) // 2
            if n < MIN_CITIES:
                raise DatasetParseError(f"instance has {n} cities, minimum is {MIN_CITIES}", line=lineno)
            if len(tour_tok) != n + 1:
                raise DatasetParseError(f"expected {n + 1} tour indices, got {len(tour_tok)}", line=lineno)
            try:
                coords = np.array([float(t) for t in coord_tok], dtype=np.float64).reshape(n, 2)
                cycle = [int(t) - 1 for t in tour_tok]
            except ValueError as exc:
                raise DatasetParseError(f"bad numeric literal ({exc})", line=lineno) from None
            if cycle[0] != cycle[-1]:
                raise DatasetParseError("tour does not close on its first index", line=lineno)
            order = np.array(cycle[:-1], dtype=np.int64)
            if not is_permutation(order, n):
                raise DatasetParseError("tour is not a permutation", line=lineno)
            try:
                inst = Instance(id=str(len(instances)), coords=coords,
                                optimal_tour=Tour(order=order, length=tour_length(coords, order)))
            except InvalidArgumentError as exc:
                raise DatasetParseError(str(exc), line=lineno) from None
            instances.append(inst)
    return instances


def read_coordinate_lines(path) -> list[Instance]:
    """Instances from a coordinates-only file (one instance per line, no tours)."""
    instances = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = line.split()
            if "output" in tokens:
                tokens = tokens[:tokens.index("output")]
            if len(tokens) % 2 != 0:
                raise DatasetParseError("odd number of coordinate values", line=lineno)
            n = len(tokens) // 2
            if n < MIN_CITIES:
                raise DatasetParseError(f"instance has {n} cities, minimum is {MIN_CITIES}", line=lineno)
            try:
                coords = np.array([float(t) for t in tokens], dtype=np.float64).reshape(n, 2)
            except ValueError as exc:
                raise DatasetParseError(f"bad numeric literal ({exc})", line=lineno) from None
            try:
                instances.append(Instance(id=str(len(instances)), coords=coords))
            except InvalidArgumentError as exc:
                raise DatasetParseError(str(exc), line=lineno) from None
    return instances


# ---------------------------------------------------------------------------
# Heatmap file format: header "n <N> edges <E>", then one "src dst prob"
# line per directed edge (0-based indices, shortest round-trip literals).
# ---------------------------------------------------------------------------

def write_heatmap(heatmap: Heatmap, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"n {heatmap.n} edges {heatmap.src.shape[0]}\n")
        for s, d, p in zip(heatmap.src.tolist(), heatmap.dst.tolist(), heatmap.probs.tolist()):
            fh.write(f"{s} {d} {p!r}\n")


def read_heatmap(path) -> Heatmap:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "n" or header[2] != "edges":
            raise DatasetParseError("bad heatmap header", line=1)
        try:
            n, n_edges = int(header[1]), int(header[3])
        except ValueError:
            raise DatasetParseError("bad heatmap header", line=1) from None
        src = np.empty(n_edges, dtype=np.int64)
        dst = np.empty(n_edges, dtype=np.int64)
        probs = np.empty(n_edges, dtype=np.float64)
        for i in range(n_edges):
            tokens = fh.readline().split()
            if len(tokens) != 3:
                raise DatasetParseError("expected 'src dst prob'", line=i + 2)
            try:
                src[i], dst[i], probs[i] = int(tokens[0]), int(tokens[1]), float(tokens[2])
            except ValueError as exc:
                raise DatasetParseError(f"bad numeric literal ({exc})", line=i + 2) from None
    return Heatmap(n=n, src=src, dst=dst, probs=probs)
