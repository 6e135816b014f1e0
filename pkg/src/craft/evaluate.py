"""Baselines, density stratification, oracle metrics and score-map export.

Algorithms compared per query:

* ``CRAFT``: catalog items nearest to synthesized targets (``retrieval.recommend``)
* ``Random``: uniformly drawn catalog items
* ``NN-Source``: targets paired with the query's nearest training sources
* ``Incompatible``: catalog items the discriminator scores lowest

Queries are split into density terciles by their mean distance to the K
nearest training sources (small distance = high density).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import PairDataset, SyntheticSpec, pca_fit, pca_transform
from .errors import DimensionError, ValidationError
from .model import CraftModel, Discriminator, Transformer, sample_noise
from .retrieval import KnnIndex, index_build, knn_rows, recommend

log = logging.getLogger(__name__)

ALGORITHMS = ("CRAFT", "Random", "NN-Source", "Incompatible")
BINS = ("high", "medium", "low")
ORACLE_METRICS = ("oracle_error", "item_distance")
FREE_METRICS = ("mean_score", "diversity")


# --------------------------------------------------------------------------
# baselines


def baseline_random(index: KnnIndex, n, rng):
    if not 1 <= n <= index.size:
        raise ValidationError(f"n must lie in [1, {index.size}], got {n}")
    rows = rng.choice(index.size, size=n, replace=False)
    return [index.ids[r] for r in rows]


def source_index(dataset: PairDataset):
    """Index over training sources whose ids are row positions."""
    return index_build(dataset.sources, range(len(dataset)))


def baseline_nn_source(dataset: PairDataset, query_s, n, src_index: KnnIndex | None = None):
    """Target ids of the ``n`` training pairs whose sources are nearest the query."""
    if not 1 <= n <= len(dataset):
        raise ValidationError(f"n must lie in [1, {len(dataset)}], got {n}")
    src_index = src_index or source_index(dataset)
    rows, _ = knn_rows(src_index, query_s, n)
    return [dataset.item_ids[r] for r in rows]


def baseline_incompatible(theta: Discriminator, query_s, index: KnnIndex, n):
    """The ``n`` catalog items with the lowest scores, as ``[(id, score), ...]`` ascending."""
    if not 1 <= n <= index.size:
        raise ValidationError(f"n must lie in [1, {index.size}], got {n}")
    if theta.d_t != index.dim:
        raise DimensionError(f"discriminator expects {theta.d_t}-d targets, index holds {index.dim}-d")
    query_s = np.asarray(query_s, dtype=np.float64)
    scores = theta.score(np.broadcast_to(query_s, (index.size, query_s.shape[-1])), index.features)
    order = np.lexsort((index.id_rank, scores))[:n]
    return [(index.ids[r], float(scores[r])) for r in order]


# --------------------------------------------------------------------------
# density


@dataclass
class DensityBin:
    mean_distance: float
    label: str


def mean_knn_distance(sources, queries, K=25, chunk=512):
    """Mean distance from each query to its ``K`` nearest rows of ``sources``."""
    sources = np.asarray(sources, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n = sources.shape[0]
    if not 1 <= K < n:
        raise ValidationError(f"K must lie in [1, {n - 1}], got {K}")
    if queries.shape[1] != sources.shape[1]:
        raise DimensionError("queries and sources differ in dimension")
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        diff = q[:, None, :] - sources[None, :, :]
        d = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
        out[start : start + chunk] = np.partition(d, K - 1, axis=1)[:, :K].mean(axis=1)
    return out


def density_bins(sources, queries, K=25):
    """Tercile split of queries by mean K-NN distance: smallest third is ``high`` density."""
    dist = mean_knn_distance(sources, queries, K)
    if dist.shape[0] < 3:
        raise ValidationError("density terciles need at least three queries")
    order = np.argsort(dist, kind="stable")
    labels = np.empty(dist.shape[0], dtype=object)
    for label, part in zip(BINS, np.array_split(order, 3)):
        labels[part] = label
    return [DensityBin(float(d), str(lbl)) for d, lbl in zip(dist, labels)]


# --------------------------------------------------------------------------
# oracle metrics


def conditional_mean_error(phi: Transformer, spec: SyntheticSpec, n_queries=200, n_samples=100, rng=None, queries=None):
    """Mean over queries of ||mean_z T(s, z) - E[t | s]|| / std[t | s]."""
    if rng is None:
        rng = np.random.default_rng(0)
    if queries is None:
        queries, _ = spec.sample_sources(n_queries, rng)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != spec.d_s or phi.d_t != spec.d_t:
        raise DimensionError("transformer and spec dimensions disagree")
    means = np.empty((queries.shape[0], spec.d_t))
    for i, s in enumerate(queries):
        z = sample_noise(rng, phi.d_z, n_samples)
        means[i] = phi.transform(np.broadcast_to(s, (n_samples, spec.d_s)), z).mean(axis=0)
    err = np.linalg.norm(means - spec.conditional_mean(queries), axis=1) / spec.conditional_std(queries)
    return float(err.mean())


def sample_spread(phi: Transformer, s, n_samples, rng):
    """Coordinate-averaged standard deviation of T(s, z) over noise draws."""
    z = sample_noise(rng, phi.d_z, n_samples)
    s = np.asarray(s, dtype=np.float64)
    return float(phi.transform(np.broadcast_to(s, (n_samples, s.shape[-1])), z).std(axis=0).mean())


def _diversity(t):
    if t.shape[0] < 2:
        return 0.0
    diff = t[:, None, :] - t[None, :, :]
    d = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    return float(d.sum() / (t.shape[0] * (t.shape[0] - 1)))


def _query_metrics(t, s, theta, spec):
    out = {
        "mean_score": float(theta.score(np.broadcast_to(s, (t.shape[0], s.shape[0])), t).mean()),
        "diversity": _diversity(t),
    }
    if spec is not None:
        m = spec.conditional_mean(s)[0]
        sd = spec.conditional_std(s)[0]
        out["oracle_error"] = float(np.linalg.norm(t.mean(axis=0) - m) / sd)
        out["item_distance"] = float(np.mean(np.linalg.norm(t - m, axis=1)) / (sd * np.sqrt(spec.d_t)))
    return out


# --------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    cells: list  # dicts: algorithm, bin, n_queries, metrics...
    config: dict
    seed: int
    metrics: tuple = FREE_METRICS
    per_query: list = field(default_factory=list, repr=False)

    def cell(self, algorithm, bin_label):
        for c in self.cells:
            if c["algorithm"] == algorithm and c["bin"] == bin_label:
                return c
        raise KeyError((algorithm, bin_label))

    def to_dict(self):
        return {"config": self.config, "seed": self.seed, "algorithms": list(ALGORITHMS),
                "bins": list(BINS), "metrics": list(self.metrics), "cells": self.cells}


def evaluate(model: CraftModel, dataset: PairDataset, spec: SyntheticSpec | None = None, *,
             n_queries=300, n_recommend=17, K=25, seed=0, balanced=True, config=None):
    """Run every algorithm on a shared query set and tabulate metrics per density bin.

    With a spec, queries are fresh draws from it (components picked uniformly
    when ``balanced``) and oracle metrics are included.  Without one, queries
    are dataset rows and only oracle-free metrics are reported.
    """
    if model.d_s != dataset.d_s or model.d_t != dataset.d_t:
        raise DimensionError("model and dataset dimensions disagree")
    rng = np.random.default_rng(seed)
    if spec is not None:
        if (spec.d_s, spec.d_t) != (dataset.d_s, dataset.d_t):
            raise DimensionError("spec and dataset dimensions disagree")
        queries, _ = spec.sample_sources(n_queries, rng, balanced=balanced)
        metrics = FREE_METRICS + ORACLE_METRICS
    else:
        log.warning("no oracle spec given: reporting oracle-free metrics only")
        rows = rng.choice(len(dataset), size=min(n_queries, len(dataset)), replace=False)
        queries = dataset.sources[rows]
        metrics = FREE_METRICS
    bins = density_bins(dataset.sources, queries, K)
    catalog = index_build(dataset.targets, dataset.item_ids)
    src_index = source_index(dataset)
    T, D = model.transformer, model.discriminator
    per_query = []
    for qi, s in enumerate(queries):
        picks = {
            "CRAFT": [i for i, _ in recommend(T, catalog, s, n_recommend, 1, rng)][:n_recommend],
            "Random": baseline_random(catalog, n_recommend, rng),
            "NN-Source": baseline_nn_source(dataset, s, n_recommend, src_index),
            "Incompatible": [i for i, _ in baseline_incompatible(D, s, catalog, n_recommend)],
        }
        for algo in ALGORITHMS:
            t = catalog.features[[catalog.row_of(i) for i in picks[algo]]]
            row = {"query": qi, "algorithm": algo, "bin": bins[qi].label}
            row.update(_query_metrics(t, s, D, spec))
            per_query.append(row)
    cells = []
    for algo in ALGORITHMS:
        for b in BINS:
            rows = [r for r in per_query if r["algorithm"] == algo and r["bin"] == b]
            cell = {"algorithm": algo, "bin": b, "n_queries": len(rows)}
            for m in metrics:
                cell[m] = float(np.mean([r[m] for r in rows]))
            cells.append(cell)
    cfg = {"n_queries": int(queries.shape[0]), "n_recommend": n_recommend, "K": K, "seed": seed,
           "balanced": balanced if spec is not None else None, "spec": spec.name if spec is not None else None}
    cfg.update(config or {})
    return EvalReport(cells, cfg, seed, metrics, per_query)


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".config.json")


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_report(report: EvalReport, path, fmt="json"):
    """JSON embeds the config; CSV gets a ``<path>.config.json`` sidecar so the table stays plain."""
    if fmt == "json":
        _dump_json(report.to_dict(), path)
        return [Path(path)]
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    fields = ["algorithm", "bin", "n_queries", *report.metrics]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for c in report.cells:
            w.writerow({k: (repr(c[k]) if isinstance(c[k], float) else c[k]) for k in fields})
    _dump_json({"config": report.config, "seed": report.seed}, _sidecar(path))
    return [Path(path), _sidecar(path)]


# --------------------------------------------------------------------------
# score maps


@dataclass
class ScoreRecord:
    id: str
    x: float
    y: float
    score: float


def score_map(theta: Discriminator, query_s, catalog_targets, ids=None, projection=None):
    """Discriminator score of every catalog item against one query, with 2-D coordinates."""
    targets = np.asarray(catalog_targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[1] != theta.d_t:
        raise DimensionError(f"catalog must be M x {theta.d_t}")
    if ids is None:
        ids = [str(i) for i in range(targets.shape[0])]
    if projection is None:
        projection = pca_fit(targets, min(2, targets.shape[1]))
    xy = pca_transform(projection, targets)
    if xy.shape[1] == 1:
        xy = np.column_stack([xy, np.zeros(xy.shape[0])])
    query_s = np.asarray(query_s, dtype=np.float64)
    scores = theta.score(np.broadcast_to(query_s, (targets.shape[0], query_s.shape[-1])), targets)
    return [ScoreRecord(str(i), float(a), float(b), float(c)) for i, (a, b), c in zip(ids, xy[:, :2], scores)]


def write_score_map(records, path, fmt="csv", config=None):
    if fmt == "json":
        _dump_json({"config": config or {}, "records": [vars(r) for r in records]}, path)
        return [Path(path)]
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "score"])
        for r in records:
            w.writerow([r.id, repr(r.x), repr(r.y), repr(r.score)])
    _dump_json({"config": config or {}}, _sidecar(path))
    return [Path(path), _sidecar(path)]
