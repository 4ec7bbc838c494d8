"""Meta-splits (random and cluster-based), tile features and k-means."""
from dataclasses import dataclass

import numpy as np

from .tasks import as_rng
from .tiles import META_SETS

HIST_EDGES = (-1.0, 0.0, 1.0)


def extract_features(tile):
    """Fixed hand-crafted descriptor of a tile.

    Per channel: mean, standard deviation and the fraction of pixels in each
    of four value bins ``(-inf,-1) [-1,0) [0,1) [1,inf)``. Layout is
    ``[means(C), stds(C), hist(C x 4)]``, i.e. ``6*C`` values.
    """
    px = getattr(tile, "pixels", tile)
    C = px.shape[0]
    flat = px.reshape(C, -1)
    means = flat.mean(axis=1)
    stds = flat.std(axis=1)
    bins = np.searchsorted(np.asarray(HIST_EDGES), flat, side="right")
    hist = np.stack([(bins == b).mean(axis=1) for b in range(4)], axis=1)
    return np.concatenate([means, stds, hist.reshape(-1)])


def region_features(dataset):
    """Mean tile feature per region, in ``dataset.region_ids`` order."""
    sums = {}
    for t in dataset.tiles:
        f = extract_features(t)
        acc = sums.setdefault(t.region_id, [np.zeros_like(f), 0])
        acc[0] += f
        acc[1] += 1
    return np.stack([sums[r][0] / sums[r][1] for r in dataset.region_ids])


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: tuple
    iterations: int


def _kmeanspp(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def _sq_dists(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def kmeans(features, num_clusters=6, seed=0, max_iters=100):
    """Lloyd's algorithm from k-means++ seeding.

    An empty cluster is re-seeded at the point farthest from its current
    centroid. ``history`` holds the inertia after every assignment step and
    never increases.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < num_clusters:
        raise ValueError(f"{len(x)} items cannot form {num_clusters} clusters")
    if num_clusters < 1:
        raise ValueError("num_clusters must be positive")
    rng = as_rng(seed)
    centroids = _kmeanspp(x, num_clusters, rng)
    history = []
    assign = None
    it = 0
    for it in range(1, max_iters + 1):
        d2 = _sq_dists(x, centroids)
        new_assign = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(x)), new_assign].sum())
        history.append(inertia)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(num_clusters):
            members = assign == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
        for c in range(num_clusters):
            if not (assign == c).any():
                own = ((x - centroids[assign]) ** 2).sum(axis=1)
                far = int(np.argmax(own))
                centroids[c] = x[far]
                assign[far] = c
    d2 = _sq_dists(x, centroids)
    assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(x)), assign].sum())
    if inertia < history[-1]:
        history.append(inertia)
    return KMeansResult(assign, centroids, inertia, tuple(history), it)


def _largest_remainder(n, fractions):
    raw = np.asarray(fractions, dtype=np.float64) * n
    sizes = np.floor(raw).astype(int)
    order = np.argsort(-(raw - sizes), kind="stable")
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes


def split_meta_random(items, fractions=(0.6, 0.2, 0.2), seed=0):
    """Uniformly random disjoint (meta-train, meta-val, meta-test) partition."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    items = list(items)
    sizes = _largest_remainder(len(items), fractions)
    perm = as_rng(seed).permutation(len(items))
    bounds = np.cumsum([0, *sizes])
    return tuple([items[i] for i in perm[bounds[j]:bounds[j + 1]]] for j in range(3))


def split_meta_clustered(items, features, num_clusters=6, seed=0,
                         fractions=(0.57, 0.21, 0.22), max_iters=100, slack=0.05):
    """Cluster the items, then hand whole clusters to the three meta-sets.

    Every meta-set receives at least one cluster and no cluster straddles two
    meta-sets. Among all such cluster-to-set assignments, one is drawn
    uniformly from those whose total item-count deviation from the target
    proportions is within ``slack * len(items)`` of the best achievable. With
    more than 10 clusters the exhaustive search is replaced by a randomized
    greedy fill (clusters in random order, each to the set furthest below
    target).
    """
    if num_clusters < 3:
        raise ValueError(f"need at least 3 clusters for three meta-sets, got {num_clusters}")
    items = list(items)
    rng = as_rng(seed)
    km = kmeans(features, num_clusters, rng, max_iters)
    target = np.asarray(fractions, dtype=np.float64) * len(items)
    sizes = np.bincount(km.assignments, minlength=num_clusters)
    if num_clusters <= 10:
        set_of_cluster = _near_optimal_assignment(sizes, target, slack * len(items), rng)
    else:
        set_of_cluster = _greedy_assignment(sizes, target, rng)
    parts = ([], [], [])
    for item, c in zip(items, km.assignments):
        parts[set_of_cluster[c]].append(item)
    return parts


def _near_optimal_assignment(sizes, target, slack, rng):
    k = len(sizes)
    # every assignment as a row of set indices (base-3 digits)
    codes = np.arange(3 ** k)
    assign = (codes[:, None] // 3 ** np.arange(k)[None, :]) % 3
    filled = np.stack([(sizes[None, :] * (assign == s)).sum(axis=1) for s in range(3)], axis=1)
    valid = np.all(np.stack([(assign == s).any(axis=1) for s in range(3)], axis=1), axis=1)
    dev = np.abs(filled - target[None, :]).sum(axis=1)
    dev = np.where(valid, dev, np.inf)
    ok = np.flatnonzero(dev <= dev.min() + slack)
    return assign[ok[rng.integers(len(ok))]]


def _greedy_assignment(sizes, target, rng):
    k = len(sizes)
    order = rng.permutation(k)
    set_of_cluster = np.empty(k, dtype=int)
    filled = np.zeros(3)
    for pos, c in enumerate(order):
        s = pos if pos < 3 else int(np.argmax(target - filled))
        set_of_cluster[c] = s
        filled[s] += sizes[c]
    return set_of_cluster


def split_to_map(parts):
    """``(train, val, test)`` item lists -> ``item -> meta-set name``."""
    return {item: name for name, part in zip(META_SETS, parts) for item in part}
