"""Exact L2 nearest-neighbor index over catalog target features and the
recommendation path: sample synthetic targets, look up their neighbors,
merge by item."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import DimensionError, FormatError, ValidationError
from .model import Transformer, sample_noise


def _id_order(ids):
    """Rank of every id under ascending order (numeric when all ids are integers)."""
    try:
        keys = [int(i) for i in ids]
    except ValueError:
        keys = list(ids)
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[sorted(range(len(ids)), key=keys.__getitem__)] = np.arange(len(ids))
    return ranks


@dataclass(frozen=True)
class KnnIndex:
    features: np.ndarray
    ids: tuple
    id_rank: np.ndarray
    rows: dict
    metric: str = "l2"

    @property
    def size(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def row_of(self, ident):
        return self.rows[str(ident)]


def index_build(targets, ids=None):
    x = np.array(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError("index needs a non-empty M x d matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError("index features must be finite")
    if ids is None:
        ids = range(x.shape[0])
    ids = tuple(str(i) for i in ids)
    if len(ids) != x.shape[0]:
        raise DimensionError(f"{len(ids)} ids for {x.shape[0]} rows")
    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for i in ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise ValidationError(f"duplicate item id {dup!r}")
    x.setflags(write=False)
    return KnnIndex(x, ids, _id_order(ids), {i: r for r, i in enumerate(ids)})


def _distances(index, q):
    diff = index.features - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _check_query(index, q, k):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionError(f"query has shape {q.shape}, index dimension is {index.dim}")
    if not 1 <= k <= index.size:
        raise ValidationError(f"k must lie in [1, {index.size}], got {k}")
    return q


def knn_rows(index: KnnIndex, q, k):
    """Row positions and distances of the ``k`` nearest rows, ties by ascending id."""
    q = _check_query(index, q, k)
    d = _distances(index, q)
    if k < index.size:
        # keep every row tied with the k-th distance so the id tie-break sees them all
        kth = np.partition(d, k - 1)[k - 1]
        cand = np.flatnonzero(d <= kth)
    else:
        cand = np.arange(index.size)
    order = cand[np.lexsort((index.id_rank[cand], d[cand]))][:k]
    return order, d[order]


def knn_query(index: KnnIndex, q, k):
    """The ``k`` nearest items as ``[(id, distance), ...]`` ascending by distance."""
    rows, dist = knn_rows(index, q, k)
    return [(index.ids[r], float(x)) for r, x in zip(rows, dist)]


def merge_min_distance(hits):
    """Collapse ``(id, distance)`` hits to one entry per id at its smallest distance."""
    best = {}
    for ident, dist in hits:
        if ident not in best or dist < best[ident]:
            best[ident] = dist
    return best


def recommend(phi: Transformer, index: KnnIndex, s, n_samples=17, k_per_sample=1, rng=None):
    """Synthesize ``n_samples`` targets for source ``s`` and return the merged
    neighbor list ``[(id, distance), ...]``, one entry per item, nearest first."""
    if n_samples < 1 or k_per_sample < 1:
        raise ValidationError("n_samples and k_per_sample must be at least 1")
    if phi.d_t != index.dim:
        raise DimensionError(f"transformer emits {phi.d_t}-d targets, index holds {index.dim}-d features")
    if rng is None:
        rng = np.random.default_rng()
    s = np.asarray(s, dtype=np.float64)
    z = sample_noise(rng, phi.d_z, n_samples)
    t_hat = phi.transform(np.broadcast_to(s, (n_samples, s.shape[-1])), z)
    hits = []
    for t in t_hat:
        hits.extend(knn_query(index, t, k_per_sample))
    best = merge_min_distance(hits)
    rank = {ident: index.id_rank[index.row_of(ident)] for ident in best}
    return sorted(best.items(), key=lambda kv: (kv[1], rank[kv[0]]))


def index_save(index: KnnIndex, path):
    container.write(path, container.Container(
        kind=b"INDX", dims=(index.size, index.dim, 0), meta={"metric": index.metric},
        arrays={"features": index.features}, ids=list(index.ids),
    ))


def index_load(path):
    c = container.read(path, expect_kind=b"INDX")
    m, d, _ = c.dims
    if m == 0:
        raise FormatError("index header declares M = 0")
    x = c.arrays.get("features")
    if x is None or x.shape != (m, d) or len(c.ids) != m:
        raise FormatError(f"index header (M={m}, d={d}) disagrees with payload")
    if c.meta.get("metric", "l2") != "l2":
        raise FormatError(f"unsupported metric {c.meta.get('metric')!r}")
    return index_build(x, c.ids)
