"""k-shot n-way task sampling from region datasets."""
from dataclasses import dataclass

import numpy as np


class SamplingExhaustedError(RuntimeError):
    """No region in the requested meta-set can satisfy the sampling constraint."""


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class Task:
    """One support/query pair from a single region and season.

    Support rows are ordered shot-major (all ways for shot 0, then shot 1, ...),
    so the first ``s * n`` rows hold exactly ``s`` examples of every class.
    Labels are relabelled ``0..n-1`` in sorted original-class order; ``ways``
    keeps the original class indices.
    """

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    ways: tuple
    region_id: str
    season: str
    support_idx: np.ndarray
    query_idx: np.ndarray
    support_pixel_y: np.ndarray = None
    query_pixel_y: np.ndarray = None

    @property
    def n(self):
        return len(self.ways)

    @property
    def k(self):
        return len(self.support_y) // max(self.n, 1)

    def support_subset(self, shots):
        """Copy keeping the first ``shots`` support examples of every class."""
        m = shots * self.n
        return Task(self.support_x[:m], self.support_y[:m], self.query_x, self.query_y,
                    self.ways, self.region_id, self.season, self.support_idx[:m], self.query_idx,
                    None if self.support_pixel_y is None else self.support_pixel_y[:m],
                    self.query_pixel_y)

    def merged(self):
        """Support and query concatenated (the pretraining batch)."""
        x = np.concatenate([self.support_x, self.query_x])
        y = np.concatenate([self.support_y, self.query_y])
        return x, y


def _relabel_pixels(grid, ways):
    # classes outside the task become -1 (ignored by the loss and metrics)
    lut = np.full(max(int(grid.max()) + 1, max(ways) + 1), -1, dtype=np.int64)
    lut[list(ways)] = np.arange(len(ways))
    return lut[grid]


def qualifying_groups(dataset, meta_set, k, n, query_per_class):
    """``[(region, season), classes]`` pairs that can host a k-shot n-way task."""
    out = []
    for key, per_class in dataset.groups().items():
        if dataset.split[key[0]] != meta_set:
            continue
        classes = [c for c, (s, q) in per_class.items() if len(s) >= k and len(q) >= query_per_class]
        if len(classes) >= n:
            out.append((key, classes))
    return out


def _build_task(ds, sup_idx, qry_idx, ways, region, season):
    lut = {c: i for i, c in enumerate(ways)}
    sx, sy = ds.stack(sup_idx) if len(sup_idx) else (None, np.zeros(0, dtype=np.int64))
    qx, qy = ds.stack(qry_idx)
    if sx is None:
        sx = np.zeros((0,) + qx.shape[1:])
    sy = np.array([lut[int(c)] for c in sy], dtype=np.int64)
    qy = np.array([lut[int(c)] for c in qy], dtype=np.int64)
    spy = qpy = None
    if ds.tiles[int(qry_idx[0])].pixel_labels is not None:
        qpy = _relabel_pixels(ds.stack_pixel_labels(qry_idx), ways)
        if len(sup_idx):
            spy = _relabel_pixels(ds.stack_pixel_labels(sup_idx), ways)
        else:
            spy = np.zeros((0,) + qpy.shape[1:], dtype=np.int64)
    return Task(sx, sy, qx, qy, ways, region, season, sup_idx, qry_idx, spy, qpy)


class TaskSampler:
    """Stream of k-shot n-way tasks from one meta-set with a private PRNG.

    Parameters
    ----------
    dataset : RegionDataset
    meta_set : str
        ``"meta-train"``, ``"meta-val"`` or ``"meta-test"``.
    k, n : int
        Shots per class and ways.
    query_per_class : int, optional
        Query examples per class; defaults to ``k``.
    seed : int or numpy Generator
    """

    def __init__(self, dataset, meta_set, k, n, query_per_class=None, seed=0):
        if k < 0 or n < 1:
            raise ValueError(f"need k >= 0 and n >= 1, got k={k}, n={n}")
        self.dataset = dataset
        self.meta_set = meta_set
        self.k = k
        self.n = n
        self.query_per_class = k if query_per_class is None else query_per_class
        self.rng = as_rng(seed)
        self.groups = qualifying_groups(dataset, meta_set, k, n, self.query_per_class)
        if not self.groups:
            raise SamplingExhaustedError(
                f"no region in {meta_set} has {n} classes with >= {k} support and "
                f">= {self.query_per_class} query tiles each")

    def sample(self):
        rng = self.rng
        (region, season), classes = self.groups[rng.integers(len(self.groups))]
        ways = tuple(sorted(int(c) for c in rng.choice(classes, size=self.n, replace=False)))
        per_class = self.dataset.groups()[(region, season)]
        sup = np.empty((self.k, self.n), dtype=np.int64)
        qry = []
        for j, c in enumerate(ways):
            s_pool, q_pool = per_class[c]
            sup[:, j] = rng.choice(s_pool, size=self.k, replace=False)
            qry.append(rng.choice(q_pool, size=self.query_per_class, replace=False))
        sup_idx = sup.reshape(-1)
        qry_idx = np.concatenate(qry) if qry else np.zeros(0, dtype=np.int64)
        return _build_task(self.dataset, sup_idx, qry_idx, ways, region, season)

    def __iter__(self):
        while True:
            yield self.sample()


def sample_task(dataset, meta_set, k, n, seed=0, query_per_class=None):
    """Draw a single k-shot n-way task (see :class:`TaskSampler`)."""
    return TaskSampler(dataset, meta_set, k, n, query_per_class, seed).sample()


def sample_segmentation_task(dataset, meta_set, support_size, query_size, seed=0):
    """Draw ``support_size`` support and ``query_size`` query tiles from one region.

    All classes are kept (``ways = 0..num_classes-1``); this is the
    support-size-``m`` protocol used for segmentation.
    """
    rng = as_rng(seed)
    options = []
    for key, per_class in dataset.groups().items():
        if dataset.split[key[0]] != meta_set:
            continue
        sup = np.concatenate([s for s, _ in per_class.values()])
        qry = np.concatenate([q for _, q in per_class.values()])
        if len(sup) >= support_size and len(qry) >= query_size:
            options.append((key, np.sort(sup), np.sort(qry)))
    if not options:
        raise SamplingExhaustedError(
            f"no region in {meta_set} has >= {support_size} support and >= {query_size} query tiles")
    (region, season), sup, qry = options[rng.integers(len(options))]
    sup_idx = rng.choice(sup, size=support_size, replace=False)
    qry_idx = rng.choice(qry, size=query_size, replace=False)
    ways = tuple(range(dataset.num_classes))
    return _build_task(dataset, sup_idx, qry_idx, ways, region, season)
