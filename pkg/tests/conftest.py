import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edgegae.core import Instance, generate_instance, knn_sparsify, label_edges
from edgegae.model import BatchedGraph
from edgegae.oracle import held_karp


@pytest.fixture(scope="session")
def unit_square_corners():
    return Instance(id="corners", coords=np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]))


@pytest.fixture(scope="session")
def labeled_graph_n10():
    inst = generate_instance(10, 1234)
    graph, _ = label_edges(knn_sparsify(inst, 25), held_karp(inst))
    return inst, graph


@pytest.fixture(scope="session")
def small_batch():
    graphs = []
    for i in range(4):
        inst = generate_instance(10, 100 + i)
        labeled, _ = label_edges(knn_sparsify(inst, 25), held_karp(inst))
        graphs.append(labeled)
    return BatchedGraph.from_graphs(graphs)
