"""Per-shot evaluation curves and their CSV tables."""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .data import META_TEST, TaskSampler
from .metrics import UndefinedMetricError, accuracy, cohen_kappa, confusion, mean_iou
from .training import adapt, batch_loss, predict
from .core import no_grad

CSV_HEADER = ("shot", "seed", "tasks", "accuracy_mean", "accuracy_std", "kappa_mean",
              "kappa_std", "miou_mean", "miou_std", "query_loss_mean")
POOLED_HEADER = ("shot", "accuracy_pooled", "kappa_pooled", "miou_pooled")


@dataclass(frozen=True)
class ShotRow:
    shot: int
    seed: int
    tasks: int
    accuracy_mean: float
    accuracy_std: float
    kappa_mean: float
    kappa_std: float
    miou_mean: float
    miou_std: float
    query_loss_mean: float
    accuracy_pooled: float
    kappa_pooled: float
    miou_pooled: float


def _safe(metric, cm):
    try:
        return metric(cm)
    except UndefinedMetricError:
        return float("nan")


def evaluation_tasks(dataset, max_shot, n, tasks, query_per_class=10, seed=0, meta_set=META_TEST):
    """The fixed task sample shared by every checkpoint under one seed."""
    sampler = TaskSampler(dataset, meta_set, max_shot, n, query_per_class, seed=seed)
    return [sampler.sample() for _ in range(tasks)]


def score_task(params, task):
    """Confusion matrix and query loss of ``params`` on a task's query set."""
    pred = predict(params, task.query_x)
    if task.query_pixel_y is not None:
        n = task.n
        cm = confusion(task.query_pixel_y, pred, n)
    else:
        cm = confusion(task.query_y, pred, task.n)
    with no_grad():
        loss = batch_loss(params, task.query_x, task.query_y, task.query_pixel_y).item()
    return cm, loss


def shot_curve(params, dataset, shots=range(11), tasks_per_point=100, tuned=None, seed=0,
               n=4, query_per_class=10, ignore=(), tasks=None):
    """Adapt on the first ``s`` support examples per class and score the full query set.

    Parameters
    ----------
    params : ParamSet or Checkpoint
    tuned : dict, optional
        ``shot -> (alpha, steps)`` fine-tuning setting; shot 0 never adapts.
    tasks : list of Task, optional
        Pre-sampled tasks (otherwise drawn from meta-test with ``seed``).

    Returns
    -------
    list of ShotRow
        Macro (per-task mean/std, population std) and pooled (micro) metrics.
    """
    if isinstance(params, Checkpoint):
        params = params.params
    shots = [int(s) for s in shots]
    tuned = tuned or {}
    if tasks is None:
        tasks = evaluation_tasks(dataset, max(shots), n, tasks_per_point, query_per_class, seed)
    rows = []
    for s in shots:
        alpha, steps = tuned.get(s, (0.0, 0)) if s > 0 else (0.0, 0)
        accs, kappas, mious, losses = [], [], [], []
        pooled = None
        for task in tasks:
            sub = task.support_subset(s)
            phi = adapt(params, sub.support_x, sub.support_y, alpha, steps, sub.support_pixel_y) \
                if s > 0 and steps > 0 else params
            cm, loss = score_task(phi, task)
            pooled = cm if pooled is None else pooled + cm
            accs.append(accuracy(cm))
            kappas.append(_safe(cohen_kappa, cm))
            mious.append(_safe(lambda c: mean_iou(c, ignore), cm))
            losses.append(loss)
        rows.append(ShotRow(
            s, seed, len(tasks),
            float(np.mean(accs)), float(np.std(accs)),
            float(np.nanmean(kappas)), float(np.nanstd(kappas)),
            float(np.nanmean(mious)), float(np.nanstd(mious)),
            float(np.mean(losses)),
            accuracy(pooled), _safe(cohen_kappa, pooled), _safe(lambda c: mean_iou(c, ignore), pooled),
        ))
    return rows


def _fmt(v):
    return f"{v:.6f}"


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.shot, r.seed, r.tasks] + [_fmt(getattr(r, k)) for k in CSV_HEADER[3:]])
    return buf.getvalue()


def pooled_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POOLED_HEADER)
    for r in rows:
        w.writerow([r.shot] + [_fmt(getattr(r, k)) for k in POOLED_HEADER[1:]])
    return buf.getvalue()
