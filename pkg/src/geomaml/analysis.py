"""Weight-space PCA of task adaptations and 1-D loss slices along a support gradient."""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .core import gradient, no_grad
from .data import META_TEST, TaskSampler
from .training import adapt, batch_loss


class DegenerateInputError(ValueError):
    """The inputs have no variance to decompose."""


@dataclass(frozen=True)
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    explained_variance: np.ndarray
    projections: np.ndarray  # (N, k)


def _fix_sign(v):
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def pca(vectors, components=2, seed=0, max_iters=5000, tol=1e-13):
    """Top principal components by power iteration with deflation.

    The covariance is applied implicitly as ``X^T (X v) / (N - 1)`` with the
    centred data matrix ``X``, so nothing of size ``D x D`` is formed. Each
    component is re-orthogonalized against the previous ones and sign-fixed so
    its largest-magnitude coordinate is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca needs at least two vectors of equal length")
    n, d = X.shape
    if components > d:
        raise ValueError(f"{components} components requested for {d}-dimensional data")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise DegenerateInputError("all vectors are identical: zero variance in every direction")
    rng = np.random.default_rng(seed)
    basis = []
    variances = []
    for _ in range(components):
        v = rng.normal(size=d)
        v = _orth(v, basis)
        lam = 0.0
        for _ in range(max_iters):
            w = Xc.T @ (Xc @ v) / (n - 1)
            w = _orth(w, basis)
            norm = np.linalg.norm(w)
            if norm <= 1e-300:
                # nothing left in the orthogonal complement
                w = _orth(rng.normal(size=d), basis)
                v = w / np.linalg.norm(w)
                lam = 0.0
                break
            w /= norm
            converged = abs(norm - lam) <= tol * max(norm, 1.0) and np.linalg.norm(w - v) < 1e-10
            v, lam = w, norm
            if converged:
                break
        v = _fix_sign(v / np.linalg.norm(v))
        basis.append(v)
        variances.append(float(np.sum((Xc @ v) ** 2) / (n - 1)))
    comps = np.array(basis)
    return PCAResult(mean, comps, np.array(variances), Xc @ comps.T)


def _orth(v, basis):
    for b in basis:
        v = v - (v @ b) * b
    for b in basis:
        v = v - (v @ b) * b
    return v


# ---------------------------------------------------------------------------
# weight-adaptation embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingRow:
    kind: str
    region_id: str
    task_id: int
    pc1: float
    pc2: float


def weight_adaptation_map(theta, dataset, num_tasks=200, alpha=0.75, seed=0, k=1, n=4,
                          query_per_class=1, meta_set=META_TEST):
    """Project ``theta`` and its one-step task adaptations onto two principal components.

    Returns ``(rows, pca_result)``; the first row is ``theta``.
    """
    if isinstance(theta, Checkpoint):
        theta = theta.params
    sampler = TaskSampler(dataset, meta_set, k, n, query_per_class, seed=seed)
    vecs = [theta.flatten()]
    regions = []
    for _ in range(num_tasks):
        task = sampler.sample()
        phi = adapt(theta, task.support_x, task.support_y, alpha, 1, task.support_pixel_y)
        vecs.append(phi.flatten())
        regions.append(task.region_id)
    X = np.array(vecs)
    if not np.any(X - X[0]):
        # no adaptation happened: every task sits exactly on theta
        zeros = np.zeros((len(X), 2))
        res = PCAResult(X[0], np.zeros((2, X.shape[1])), np.zeros(2), zeros)
    else:
        res = pca(X, components=2, seed=seed)
    rows = [EmbeddingRow("theta", "", -1, *res.projections[0])]
    rows += [EmbeddingRow("adapted", r, i, *res.projections[i + 1]) for i, r in enumerate(regions)]
    return rows, res


def embedding_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("kind", "region_id", "task_id", "pc1", "pc2"))
    for r in rows:
        w.writerow((r.kind, r.region_id, r.task_id, f"{r.pc1:.6f}", f"{r.pc2:.6f}"))
    return buf.getvalue()


def region_distance_ratio(rows):
    """Mean within-region and across-region pairwise distances of adapted points."""
    pts = np.array([(r.pc1, r.pc2) for r in rows if r.kind == "adapted"])
    reg = np.array([r.region_id for r in rows if r.kind == "adapted"])
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    same = reg[:, None] == reg[None]
    off = ~np.eye(len(pts), dtype=bool)
    return float(d[same & off].mean()), float(d[~same].mean())


# ---------------------------------------------------------------------------
# 1-D loss slice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossSlice:
    alphas: np.ndarray
    losses: np.ndarray  # (num query tasks, num alphas)
    grad_norm: float


def default_alphas(provenance, points=64):
    hi = 1.0 if provenance == "maml" else 0.15
    return np.linspace(0.0, hi, points)


def loss_surface_1d(params, support_task, query_tasks, alphas):
    """Query losses at ``theta - alpha * g`` for the support gradient ``g`` at ``theta``.

    All tasks must share the support task's region and season. ``alpha = 0``
    is always evaluated (prepended when missing).
    """
    if isinstance(params, Checkpoint):
        params = params.params
    for q in query_tasks:
        if (q.region_id, q.season) != (support_task.region_id, support_task.season):
            raise ValueError(f"query task from {q.region_id}/{q.season} does not match support "
                             f"task {support_task.region_id}/{support_task.season}")
    alphas = np.asarray(alphas, dtype=np.float64)
    if not np.any(alphas == 0.0):
        alphas = np.concatenate([[0.0], alphas])
    theta = params.clone(requires_grad=True)
    loss = batch_loss(theta, support_task.support_x, support_task.support_y, support_task.support_pixel_y)
    g = gradient(loss, theta).flatten()
    base = params.flatten()
    out = np.empty((len(query_tasks), len(alphas)))
    with no_grad():
        for j, a in enumerate(alphas):
            phi = params.unflatten(base - a * g) if a != 0.0 else params
            for i, q in enumerate(query_tasks):
                out[i, j] = batch_loss(phi, q.query_x, q.query_y, q.query_pixel_y).item()
    return LossSlice(alphas, out, float(np.linalg.norm(g)))


def sample_slice_tasks(dataset, meta_set, k, n, num_query_tasks=4, query_per_class=None, seed=0):
    """One support task plus ``num_query_tasks`` query tasks from the same region and season."""
    sampler = TaskSampler(dataset, meta_set, k, n, query_per_class, seed=seed)
    support = sampler.sample()
    key = (support.region_id, support.season)
    groups = [g for g in sampler.groups if g[0] == key]
    sampler.groups = groups
    queries = [sampler.sample() for _ in range(num_query_tasks)]
    return support, queries


def slice_to_csv(sl):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("alpha", "query_task_id", "loss"))
    for j, a in enumerate(sl.alphas):
        for i in range(sl.losses.shape[0]):
            w.writerow((f"{a:.6f}", i, f"{sl.losses[i, j]:.6f}"))
    return buf.getvalue()
