"""Feature-pair datasets, synthetic joint distributions with a closed-form
conditional oracle, and PCA dimensionality reduction."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import DimensionError, FormatError, ValidationError


@dataclass
class PairDataset:
    """N co-occurring (source, target) feature pairs with target item ids."""

    sources: np.ndarray
    targets: np.ndarray
    item_ids: list
    name: str = "dataset"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sources = np.asarray(self.sources, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.item_ids = [str(i) for i in self.item_ids]
        if self.sources.ndim != 2 or self.targets.ndim != 2:
            raise DimensionError("sources and targets must be 2-D matrices")
        n = self.sources.shape[0]
        if n < 1:
            raise ValidationError("a dataset needs at least one pair")
        if self.targets.shape[0] != n or len(self.item_ids) != n:
            raise DimensionError(
                f"row counts disagree: sources {n}, targets {self.targets.shape[0]}, ids {len(self.item_ids)}"
            )
        if not (np.all(np.isfinite(self.sources)) and np.all(np.isfinite(self.targets))):
            raise ValidationError("dataset contains non-finite entries")

    def __len__(self):
        return self.sources.shape[0]

    @property
    def d_s(self):
        return self.sources.shape[1]

    @property
    def d_t(self):
        return self.targets.shape[1]

    def subset(self, rows, name=None):
        rows = np.asarray(rows)
        return PairDataset(
            self.sources[rows],
            self.targets[rows],
            [self.item_ids[i] for i in rows],
            name=name or self.name,
            seed=self.seed,
            meta=dict(self.meta),
        )


# --------------------------------------------------------------------------
# synthetic distributions


@dataclass
class Component:
    """Source cluster N(center, spread^2 I) with t | s ~ N(A s + c, sigma^2 I)."""

    weight: float
    center: np.ndarray
    spread: float
    A: np.ndarray
    c: np.ndarray
    sigma: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.c = np.asarray(self.c, dtype=np.float64)


@dataclass
class SyntheticSpec:
    d_s: int
    d_t: int
    components: list
    name: str = "custom"

    def __post_init__(self):
        self.components = [c if isinstance(c, Component) else Component(**c) for c in self.components]
        self.validate()

    def validate(self):
        problems = []
        if self.d_s < 1 or self.d_t < 1:
            problems.append("d_s and d_t must be positive")
        if not self.components:
            problems.append("components: at least one component is required")
        for k, comp in enumerate(self.components):
            if comp.weight <= 0:
                problems.append(f"components[{k}].weight must be positive")
            if comp.center.shape != (self.d_s,):
                problems.append(f"components[{k}].center must have length d_s={self.d_s}")
            if comp.spread <= 0:
                problems.append(f"components[{k}].spread must be positive")
            if comp.A.shape != (self.d_t, self.d_s):
                problems.append(f"components[{k}].A must be {self.d_t}x{self.d_s}")
            if comp.c.shape != (self.d_t,):
                problems.append(f"components[{k}].c must have length d_t={self.d_t}")
            if not comp.sigma > 0:
                problems.append(f"components[{k}].sigma must be positive")
        if self.components and abs(sum(c.weight for c in self.components) - 1.0) > 1e-9:
            problems.append("components: weights must sum to 1")
        if problems:
            raise ValidationError("invalid synthetic spec: " + "; ".join(problems))

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    def to_dict(self):
        return {
            "name": self.name,
            "d_s": self.d_s,
            "d_t": self.d_t,
            "components": [
                {
                    "weight": c.weight,
                    "center": c.center.tolist(),
                    "spread": c.spread,
                    "A": c.A.tolist(),
                    "c": c.c.tolist(),
                    "sigma": c.sigma,
                }
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d_s=int(d["d_s"]), d_t=int(d["d_t"]), components=list(d["components"]), name=d.get("name", "custom"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"invalid synthetic spec: missing or malformed field {exc}") from None

    # -- oracle ------------------------------------------------------------

    def responsibilities(self, s):
        """Posterior component probabilities given source rows ``s`` (exact Gaussian densities)."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        if s.shape[1] != self.d_s:
            raise DimensionError(f"source rows have {s.shape[1]} features, spec has d_s={self.d_s}")
        logp = np.empty((s.shape[0], len(self.components)))
        for k, comp in enumerate(self.components):
            sq = ((s - comp.center) ** 2).sum(axis=1)
            logp[:, k] = np.log(comp.weight) - self.d_s * np.log(comp.spread) - sq / (2 * comp.spread**2)
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=1, keepdims=True)

    def _component_means(self, s):
        return np.stack([s @ comp.A.T + comp.c for comp in self.components], axis=1)

    def conditional_mean(self, s):
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        r = self.responsibilities(s)
        return np.einsum("nk,nkd->nd", r, self._component_means(s))

    def conditional_std(self, s):
        """Root of the per-coordinate average of Cov[t | s] (scalar per row)."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        r = self.responsibilities(s)
        means = self._component_means(s)
        sig2 = np.array([c.sigma**2 for c in self.components])
        mbar = np.einsum("nk,nkd->nd", r, means)
        second = r @ (self.d_t * sig2) + np.einsum("nk,nk->n", r, (means**2).sum(axis=2))
        trace = second - (mbar**2).sum(axis=1)
        return np.sqrt(np.maximum(trace, 0.0) / self.d_t)

    # -- sampling ----------------------------------------------------------

    def sample_sources(self, n, rng, balanced=False):
        """Draw ``n`` source rows; ``balanced`` picks components uniformly instead of by weight."""
        k = len(self.components)
        p = np.full(k, 1.0 / k) if balanced else self.weights
        labels = rng.choice(k, size=n, p=p)
        noise = rng.standard_normal((n, self.d_s))
        s = np.empty((n, self.d_s))
        for j, comp in enumerate(self.components):
            rows = labels == j
            s[rows] = comp.center + comp.spread * noise[rows]
        return s, labels

    def sample_targets(self, s, labels, rng):
        noise = rng.standard_normal((s.shape[0], self.d_t))
        t = np.empty((s.shape[0], self.d_t))
        for j, comp in enumerate(self.components):
            rows = labels == j
            t[rows] = s[rows] @ comp.A.T + comp.c + comp.sigma * noise[rows]
        return t


def synth_generate(spec: SyntheticSpec, n, rng, seed=None):
    """Draw ``n`` i.i.d. pairs from ``spec``; ids are row indices."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    spec.validate()
    s, labels = spec.sample_sources(n, rng)
    t = spec.sample_targets(s, labels, rng)
    return PairDataset(
        s, t, [str(i) for i in range(n)], name=spec.name, seed=seed,
        meta={"spec": spec.to_dict()},
    )


def _linear_map(rng, d_t, d_s, gain):
    q, _ = np.linalg.qr(rng.standard_normal((max(d_t, d_s), max(d_t, d_s))))
    return gain * q[:d_t, :d_s]


def _two_cluster_2d():
    comps = [
        dict(weight=0.5, center=[-2.0, 0.0], spread=0.7,
             A=[[0.8, -0.6], [0.6, 0.8]], c=[1.5, 1.0], sigma=0.5),
        dict(weight=0.5, center=[2.0, 0.0], spread=0.7,
             A=[[-0.5, 0.5], [0.9, 0.3]], c=[0.5, -1.5], sigma=0.5),
    ]
    return SyntheticSpec(2, 2, comps, name="two-cluster-2d")


def _five_cluster_8d():
    rng = np.random.default_rng(8)
    comps = []
    for k in range(5):
        center = 3.0 * rng.standard_normal(8)
        comps.append(dict(
            weight=0.2, center=center, spread=1.0,
            A=_linear_map(rng, 8, 8, 0.9), c=2.0 * rng.standard_normal(8), sigma=0.3,
        ))
    return SyntheticSpec(8, 8, comps, name="five-cluster-8d")


def _density_gradient():
    # one shared map; clusters differ only in population and spread
    A = [[0.9, -0.5], [0.5, 0.9]]
    c = [0.0, 0.5]
    layout = [
        (0.60, [-3.0, 0.0], 0.35),
        (0.30, [0.0, 3.0], 0.5),
        (0.08, [3.5, 0.0], 1.2),
        (0.02, [0.0, -4.0], 2.0),
    ]
    comps = [dict(weight=w, center=ctr, spread=sp, A=A, c=c, sigma=0.5) for w, ctr, sp in layout]
    return SyntheticSpec(2, 2, comps, name="density-gradient")


PRESETS = {
    "two-cluster-2d": _two_cluster_2d,
    "five-cluster-8d": _five_cluster_8d,
    "density-gradient": _density_gradient,
}


def load_spec(name_or_path):
    """Resolve a preset name or a JSON spec file."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]()
    path = Path(name_or_path)
    if not path.exists():
        raise ValidationError(f"{name_or_path!r} is neither a preset ({', '.join(PRESETS)}) nor a spec file")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"spec file {path} is not valid JSON: {exc}") from None
    return SyntheticSpec.from_dict(d)


# --------------------------------------------------------------------------
# PCA


@dataclass
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray  # k x d, orthonormal rows
    explained_variance: np.ndarray
    whiten: bool = False

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def d(self):
        return self.components.shape[1]

    def _scale(self):
        if not self.whiten:
            return 1.0
        return np.sqrt(np.maximum(self.explained_variance, np.finfo(float).tiny))


def pca_fit(features, k, whiten=False):
    """Top-``k`` principal directions via eigendecomposition of the covariance."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("features must be an N x d matrix")
    n, d = x.shape
    if n < 2:
        raise ValidationError("PCA needs at least two rows")
    if not 1 <= k <= min(n, d):
        raise ValidationError(f"k must lie in [1, {min(n, d)}], got {k}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order].T
    # sign convention: largest-magnitude entry of each direction is positive
    flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps = comps * flip[:, None]
    return PcaProjection(mean, comps, np.maximum(evals[order], 0.0), whiten)


def pca_transform(proj: PcaProjection, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != proj.d:
        raise DimensionError(f"input has {x.shape[-1]} features, projection expects {proj.d}")
    return (x - proj.mean) @ proj.components.T / proj._scale()


def pca_inverse(proj: PcaProjection, y):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != proj.k:
        raise DimensionError(f"input has {y.shape[-1]} coordinates, projection has k={proj.k}")
    return (y * proj._scale()) @ proj.components + proj.mean


def reduce_dataset(ds: PairDataset, k_source, k_target, whiten=False):
    """Fit PCA separately on sources and targets and project both."""
    ps = pca_fit(ds.sources, k_source, whiten)
    pt = pca_fit(ds.targets, k_target, whiten)
    reduced = PairDataset(
        pca_transform(ps, ds.sources), pca_transform(pt, ds.targets), ds.item_ids,
        name=ds.name, seed=ds.seed, meta={**ds.meta, "pca": {"k_source": k_source, "k_target": k_target, "whiten": whiten}},
    )
    return reduced, ps, pt


# --------------------------------------------------------------------------
# file formats


def dataset_save(ds: PairDataset, path):
    meta = {"name": ds.name, "seed": ds.seed, "meta": ds.meta}
    container.write(path, container.Container(
        kind=b"DSET", dims=(len(ds), ds.d_s, ds.d_t), meta=meta,
        arrays={"sources": ds.sources, "targets": ds.targets}, ids=ds.item_ids,
    ))


def dataset_load(path):
    c = container.read(path, expect_kind=b"DSET")
    n, d_s, d_t = c.dims
    if n == 0:
        raise FormatError("dataset header declares N = 0")
    try:
        s, t = c.arrays["sources"], c.arrays["targets"]
    except KeyError as exc:
        raise FormatError(f"dataset file lacks array {exc}") from None
    if s.shape != (n, d_s) or t.shape != (n, d_t) or len(c.ids) != n:
        raise FormatError(
            f"header (N={n}, d_s={d_s}, d_t={d_t}) disagrees with payload "
            f"(sources {s.shape}, targets {t.shape}, {len(c.ids)} ids)"
        )
    return PairDataset(s, t, c.ids, name=c.meta.get("name", "dataset"), seed=c.meta.get("seed"), meta=c.meta.get("meta", {}))


def dataset_from_csv(path, d_s=None, name=None):
    """Read ``id, s..., t...`` rows.

    With a header row, columns named ``s*`` are sources and ``t*`` targets;
    without one, ``d_s`` says where the source block ends.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise FormatError(f"{path} is empty")
    header = rows[0]
    try:
        [float(v) for v in header[1:]]
        has_header = False
    except ValueError:
        has_header = True
    if has_header:
        cols = [h.strip().lower() for h in header[1:]]
        s_cols = [i for i, h in enumerate(cols) if h.startswith("s")]
        t_cols = [i for i, h in enumerate(cols) if h.startswith("t")]
        if len(s_cols) + len(t_cols) != len(cols) or not s_cols or not t_cols:
            raise FormatError("CSV header must name every feature column s<i> or t<j>")
        rows = rows[1:]
    else:
        if d_s is None:
            raise FormatError("CSV without a header needs d_s to split source and target columns")
        width = len(header) - 1
        s_cols, t_cols = list(range(d_s)), list(range(d_s, width))
        if not t_cols:
            raise FormatError(f"d_s={d_s} leaves no target columns")
    if not rows:
        raise FormatError(f"{path} has no data rows")
    ids, values = [], []
    for lineno, r in enumerate(rows, start=2 if has_header else 1):
        if len(r) != len(s_cols) + len(t_cols) + 1:
            raise FormatError(f"{path}:{lineno}: expected {len(s_cols) + len(t_cols) + 1} fields, got {len(r)}")
        ids.append(r[0].strip())
        try:
            values.append([float(v) for v in r[1:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    v = np.array(values)
    return PairDataset(v[:, s_cols], v[:, t_cols], ids, name=name or Path(path).stem)
