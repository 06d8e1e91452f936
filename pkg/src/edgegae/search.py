"""Heatmap-to-tour search: roulette sampling, beam search, and 2-opt.

The model predicts directed sparse edges; node-wise search wants a dense
symmetric score table. Directed probabilities are averaged when both
directions exist, copied when only one does, and floored at a small
epsilon for non-adjacent pairs so every selection has positive mass.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from ._kernels import roulette_walk, two_opt_pass
from .core import Heatmap, Instance, Tour, make_tour
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class SearchConfig:
    strategy: str = "roulette"         # roulette | beam
    samples: int = 200
    beam_width: int = 5
    two_opt: bool = True
    epsilon_prob: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("roulette", "beam"):
            raise InvalidArgumentError(f"unknown strategy {self.strategy!r}")
        if self.samples < 1 or self.beam_width < 1:
            raise InvalidArgumentError("samples and beam_width must be >= 1")
        if self.epsilon_prob <= 0:
            raise InvalidArgumentError("epsilon_prob must be positive")


def symmetrize(heatmap: Heatmap, epsilon_prob: float = 1e-8) -> np.ndarray:
    """Dense n x n scores: mean of the available directed probabilities,
    epsilon for pairs with no edge either way, zero diagonal."""
    n = heatmap.n
    total = np.zeros((n, n))
    count = np.zeros((n, n))
    np.add.at(total, (heatmap.src, heatmap.dst), heatmap.probs)
    np.add.at(count, (heatmap.src, heatmap.dst), 1.0)
    total = total + total.T
    count = count + count.T
    scores = np.full((n, n), epsilon_prob)
    seen = count > 0
    scores[seen] = total[seen] / count[seen]
    np.fill_diagonal(scores, 0.0)
    return scores


def roulette_tour(scores: np.ndarray, rng_seed: int) -> np.ndarray:
    """One tour: uniform random start, then roulette over all unvisited
    nodes with probability proportional to score(current, candidate)."""
    n = scores.shape[0]
    gen = np.random.Generator(np.random.PCG64(rng_seed))
    uniforms = gen.random(n)
    order = np.empty(n, dtype=np.int64)
    roulette_walk(np.ascontiguousarray(scores), uniforms, order)
    return order


def beam_tour(scores: np.ndarray, beam_width: int, epsilon_prob: float = 1e-8) -> np.ndarray:
    """Deterministic beam search from node 0 maximizing sum of ln(score).

    Keeps the global top-b partial tours per expansion; score ties break
    toward the lexicographically smaller partial tour. Returns the complete
    tour with the best score after the closing edge is added.
    """
    n = scores.shape[0]
    ln_s = np.log(np.maximum(scores, epsilon_prob))
    beams = [(0.0, (0,), frozenset((0,)))]
    for _ in range(n - 1):
        candidates = []
        for score, tour, visited in beams:
            last = tour[-1]
            for v in range(n):
                if v not in visited:
                    candidates.append((score + ln_s[last, v], tour + (v,), visited | {v}))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = candidates[:beam_width]
    finished = [(score + ln_s[tour[-1], 0], tour) for score, tour, _ in beams]
    finished.sort(key=lambda c: (-c[0], c[1]))
    return np.array(finished[0][1], dtype=np.int64)


def two_opt(instance: Instance, tour) -> Tour:
    """First-improvement 2-opt to a local optimum; never lengthens the tour."""
    order = np.array(tour.order if isinstance(tour, Tour) else tour, dtype=np.int64)
    dist = instance.distance_matrix()
    two_opt_pass(dist, order)
    return make_tour(instance, order)


def _one_sample(instance: Instance, scores, config: SearchConfig, sample_idx: int) -> Tour:
    seed = rngmod.derive_seed(config.rng_seed, rngmod.SALT_SAMPLE, sample_idx)
    order = roulette_tour(scores, seed)
    if config.two_opt:
        return two_opt(instance, order)
    return make_tour(instance, order)


def solve(instance: Instance, heatmap: Heatmap, config: SearchConfig,
          threads: int = 1) -> tuple[Tour, dict]:
    """Best tour under the configured strategy, plus per-sample statistics.

    Roulette samples use seeds derived from (rng_seed, sample index), so a
    200-sample run is a prefix of a 1000-sample run and the reduction by
    (length, sample index) is invariant to thread count.
    """
    if heatmap.n != instance.n:
        raise InvalidArgumentError("heatmap and instance disagree on node count")
    t0 = time.perf_counter()
    scores = symmetrize(heatmap, config.epsilon_prob)
    if config.strategy == "beam":
        order = beam_tour(scores, config.beam_width, config.epsilon_prob)
        tour = two_opt(instance, order) if config.two_opt else make_tour(instance, order)
        stats = {"strategy": "beam", "beam_width": config.beam_width,
                 "lengths": [tour.length], "best_sample": 0,
                 "wall_time": time.perf_counter() - t0}
        return tour, stats

    if threads <= 1:
        tours = [_one_sample(instance, scores, config, s) for s in range(config.samples)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tours = list(pool.map(lambda s: _one_sample(instance, scores, config, s),
                                  range(config.samples)))
    lengths = [t.length for t in tours]
    best = min(range(config.samples), key=lambda s: (lengths[s], s))
    stats = {"strategy": "roulette", "samples": config.samples, "lengths": lengths,
             "best_sample": best, "wall_time": time.perf_counter() - t0}
    return tours[best], stats
