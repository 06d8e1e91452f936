"""Evaluation: F1, exact ROC AUC, optimal gap, and report aggregation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .core import knn_sparsify, label_edges
from .errors import InvalidArgumentError, UndefinedMetricError
from .search import SearchConfig, solve


def f1_score(probs, labels, threshold: float = 0.5) -> float:
    """F1 of the binarized predictions (p >= threshold); 0 when degenerate."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise InvalidArgumentError(f"probs/labels length mismatch: {probs.shape} vs {labels.shape}")
    pred = probs >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    denom = tp + 0.5 * (fp + fn)
    return tp / denom if denom > 0 else 0.0


def _average_ranks(x: np.ndarray) -> np.ndarray:
    # 1-based ranks with ties sharing their group's average rank
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    return avg[inverse]


def roc_auc(probs, labels) -> float:
    """Exact AUC via the rank statistic (tie-aware Mann-Whitney form)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise InvalidArgumentError(f"probs/labels length mismatch: {probs.shape} vs {labels.shape}")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs at least one positive and one negative label")
    ranks = _average_ranks(probs)
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def optimal_gap(predicted_length: float, oracle_length: float) -> float:
    """Percentage excess of the predicted tour over the reference optimum."""
    if oracle_length <= 0:
        raise InvalidArgumentError(f"oracle length must be positive, got {oracle_length}")
    return 100.0 * (predicted_length - oracle_length) / oracle_length


@dataclass(frozen=True)
class InstanceRecord:
    id: str
    n: int
    f1: float
    auc: float
    predicted_length: float
    oracle_length: float
    gap_percent: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass(frozen=True)
class EvalReport:
    records: list[InstanceRecord]
    by_size: dict[int, dict[str, float]]
    overall: dict[str, float]
    pooled_f1: float


_METRICS = ("f1", "auc", "gap_percent")


def _aggregate(records: list[InstanceRecord]) -> dict[str, float]:
    agg = {"count": float(len(records))}
    for metric in _METRICS:
        vals = np.array([getattr(r, metric) for r in records])
        agg[f"{metric}_mean"] = float(vals.mean())
        agg[f"{metric}_std"] = float(vals.std())
    return agg


def report_from_records(records: list[InstanceRecord]) -> EvalReport:
    """Deterministic reduction: records ordered by id, aggregates by size."""
    records = sorted(records, key=lambda r: (r.n, r.id))
    sizes = sorted({r.n for r in records})
    by_size = {n: _aggregate([r for r in records if r.n == n]) for n in sizes}
    overall = _aggregate(records)
    tp = sum(r.tp for r in records)
    fp = sum(r.fp for r in records)
    fn = sum(r.fn for r in records)
    denom = tp + 0.5 * (fp + fn)
    pooled = tp / denom if denom > 0 else 0.0
    return EvalReport(records=records, by_size=by_size, overall=overall, pooled_f1=pooled)


def _eval_one(model, instance, search_config: SearchConfig, index: int) -> InstanceRecord:
    graph = knn_sparsify(instance, model.config.k)
    labeled, _ = label_edges(graph, instance.optimal_tour)
    heatmap = model.predict_heatmap(labeled)
    pred = heatmap.probs >= 0.5
    pos = labeled.labels == 1
    per_instance = replace(search_config,
                           rng_seed=rngmod.derive_seed(search_config.rng_seed, rngmod.SALT_SAMPLE, index))
    tour, _ = solve(instance, heatmap, per_instance)
    return InstanceRecord(
        id=instance.id, n=instance.n,
        f1=f1_score(heatmap.probs, labeled.labels),
        auc=roc_auc(heatmap.probs, labeled.labels),
        predicted_length=tour.length,
        oracle_length=instance.optimal_tour.length,
        gap_percent=optimal_gap(tour.length, instance.optimal_tour.length),
        tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)), fn=int(np.sum(~pred & pos)))


def evaluate(model, instances, search_config: SearchConfig, threads: int = 1,
             graph_k: int | None = None) -> EvalReport:
    """Per-instance forward + search + metrics, aggregated by size.

    Instances are processed independently with per-instance derived seeds,
    so the report is identical for any thread count.
    """
    if graph_k is not None and graph_k != model.config.k:
        raise InvalidArgumentError(
            f"requested k={graph_k} does not match the checkpoint's k={model.config.k}")
    for inst in instances:
        if inst.optimal_tour is None:
            raise InvalidArgumentError(f"instance {inst.id} carries no oracle tour")
    if threads <= 1:
        records = [_eval_one(model, inst, search_config, i) for i, inst in enumerate(instances)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda t: _eval_one(model, t[1], search_config, t[0]),
                                    enumerate(instances)))
    return report_from_records(records)


CSV_COLUMNS = "id,n,f1,auc,predicted_length,oracle_length,gap_percent,flag"


def write_report(report: EvalReport, path) -> None:
    """CSV with one row per instance and '# aggregate' trailer rows."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# {CSV_COLUMNS}\n")
        for r in report.records:
            flag = "neg_gap" if r.gap_percent < 0 else ""
            fh.write(f"{r.id},{r.n},{r.f1!r},{r.auc!r},{r.predicted_length!r},"
                     f"{r.oracle_length!r},{r.gap_percent!r},{flag}\n")
        for n, agg in report.by_size.items():
            parts = " ".join(f"{k}={agg[k]!r}" for k in sorted(agg))
            fh.write(f"# aggregate n={n} {parts}\n")
        parts = " ".join(f"{k}={report.overall[k]!r}" for k in sorted(report.overall))
        fh.write(f"# aggregate overall {parts} pooled_f1={report.pooled_f1!r}\n")
