"""Reference tours (exact and pseudo-optimal) and dataset construction.

The exact oracle is a Held-Karp dynamic program; the heuristic oracle is
best-of-restarts 2-opt from random permutations. Dataset generation uses
counter-based per-instance seeds so output never depends on worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from ._kernels import held_karp_dp, two_opt_pass
from .core import Instance, Tour, generate_instance, make_tour
from .errors import CapacityError, InvalidArgumentError

EXACT_CUTOFF = 18
DEFAULT_RESTARTS = 50


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a scale-imbalanced dataset over an inclusive size range."""

    n_min: int
    n_max: int
    total: int
    seed: int
    oracle_mode: str = "auto"          # exact | heuristic | auto
    exact_cutoff: int = EXACT_CUTOFF
    restarts: int = DEFAULT_RESTARTS

    def __post_init__(self):
        if not 4 <= self.n_min <= self.n_max:
            raise InvalidArgumentError(f"need 4 <= n_min <= n_max, got [{self.n_min}, {self.n_max}]")
        if self.oracle_mode not in ("exact", "heuristic", "auto"):
            raise InvalidArgumentError(f"unknown oracle mode {self.oracle_mode!r}")
        if self.total < self.n_max - self.n_min + 1:
            raise InvalidArgumentError(
                f"total={self.total} cannot cover sizes {self.n_min}..{self.n_max} with at least one instance each")


def canonical_orientation(order: np.ndarray) -> np.ndarray:
    """Rotate the cycle to start at node 0 and pick the direction whose
    second node has the smaller index."""
    order = np.asarray(order, dtype=np.int64)
    start = int(np.nonzero(order == 0)[0][0])
    order = np.roll(order, -start)
    if order[1] > order[-1]:
        order = np.concatenate(([0], order[1:][::-1]))
    return order


def held_karp(instance: Instance, exact_cutoff: int = EXACT_CUTOFF) -> Tour:
    """Provably optimal tour via the O(2^n * n^2) dynamic program."""
    n = instance.n
    if n > exact_cutoff:
        raise CapacityError(
            f"n={n} exceeds the exact cutoff {exact_cutoff}; use the heuristic oracle")
    dist = instance.distance_matrix()
    _, order = held_karp_dp(dist)
    return make_tour(instance, canonical_orientation(order))


def heuristic_oracle(instance: Instance, restarts: int = DEFAULT_RESTARTS, rng_seed: int = 0) -> Tour:
    """Best tour over independent (random permutation -> 2-opt) restarts."""
    if restarts < 1:
        raise InvalidArgumentError(f"restarts must be >= 1, got {restarts}")
    n = instance.n
    dist = instance.distance_matrix()
    best_order = None
    best_len = np.inf
    for r in range(restarts):
        gen = rngmod.generator(rng_seed, rngmod.SALT_ORACLE, r)
        order = gen.permutation(n).astype(np.int64)
        two_opt_pass(dist, order)
        length = make_tour(instance, order).length
        if length < best_len:
            best_len = length
            best_order = order
    return make_tour(instance, canonical_orientation(best_order))


def inverse_proportional_counts(n_min: int, n_max: int, total: int) -> np.ndarray:
    """Per-size instance counts proportional to 1/n, summing exactly to total.

    Largest-remainder rounding distributes the leftovers; equal remainders
    prefer the smaller size, which keeps counts non-increasing in n.
    """
    sizes = np.arange(n_min, n_max + 1)
    if total < sizes.size:
        raise InvalidArgumentError(f"total={total} is below the number of sizes {sizes.size}")
    weights = 1.0 / sizes
    raw = total * weights / weights.sum()
    counts = np.floor(raw).astype(np.int64)
    remainder = raw - counts
    missing = total - int(counts.sum())
    if missing:
        top = np.lexsort((sizes, -remainder))[:missing]
        counts[top] += 1
    if (counts == 0).any():
        raise InvalidArgumentError(
            f"total={total} is too small for a strict inverse-proportional allocation over {n_min}..{n_max}")
    return counts


def _label_one(spec: DatasetSpec, index: int, n: int) -> Instance:
    coord_seed = rngmod.derive_seed(spec.seed, rngmod.SALT_COORDS, index)
    inst = generate_instance(n, coord_seed)
    use_exact = spec.oracle_mode == "exact" or (spec.oracle_mode == "auto" and n <= spec.exact_cutoff)
    if use_exact:
        tour = held_karp(inst, exact_cutoff=spec.exact_cutoff)
    else:
        tour = heuristic_oracle(inst, restarts=spec.restarts,
                                rng_seed=rngmod.derive_seed(spec.seed, rngmod.SALT_ORACLE, index))
    return Instance(id=str(index), coords=inst.coords, optimal_tour=tour)


def build_dataset(spec: DatasetSpec, threads: int = 1) -> list[Instance]:
    """Labeled instances with counts inversely proportional to size.

    Results are identical for any thread count: every instance derives its
    own seed from (spec.seed, position), and output order is by position.
    """
    counts = inverse_proportional_counts(spec.n_min, spec.n_max, spec.total)
    sizes = [int(n) for n in np.repeat(np.arange(spec.n_min, spec.n_max + 1), counts)]
    if threads <= 1:
        return [_label_one(spec, i, n) for i, n in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_label_one, [spec] * len(sizes), range(len(sizes)), sizes))
