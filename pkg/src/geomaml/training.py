"""Regular pretraining, MAML meta-training, task adaptation and fine-tune search."""
import logging
from dataclasses import dataclass, asdict

import numpy as np

from .checkpoint import Checkpoint
from .core import (
    ParamSet,
    Tensor,
    gradient,
    gradient_through_update,
    no_grad,
    pixel_cross_entropy,
    softmax_cross_entropy,
)
from .data import META_TRAIN, META_VAL, TaskSampler
from .models import forward, is_segmentation
from .seeding import derive_seed

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exceeded the divergence limit."""


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.4
    beta: float = 0.005
    inner_steps: int = 1
    meta_batch: int = 4
    k: int = 2
    n: int = 4
    query_per_class: int = 0
    iterations: int = 300
    second_order: bool = True
    average_meta_batch: bool = False
    pretrain_alpha: float = 0.05
    pretrain_iterations: int = 0
    seed: int = 0

    def validate(self):
        if self.alpha < 0 or self.beta < 0 or self.pretrain_alpha < 0:
            raise ValueError("step sizes must be non-negative")
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.meta_batch < 1:
            raise ValueError(f"meta_batch must be >= 1, got {self.meta_batch}")
        if self.k < 1 or self.n < 1 or self.query_per_class < 0:
            raise ValueError("k and n must be positive and query_per_class non-negative")
        if self.iterations < 0 or self.pretrain_iterations < 0:
            raise ValueError("iteration counts must be non-negative")
        return self

    @property
    def pretrain_steps(self):
        """Pretraining iterations; ``0`` means as many tasks as MAML sees.

        MAML draws ``meta_batch`` tasks per outer iteration and pretraining one,
        so the default gives both procedures the same number of tasks.
        """
        return self.pretrain_iterations or self.iterations * self.meta_batch

    @property
    def queries(self):
        return self.query_per_class or self.k


def batch_loss(params, x, y, pixel_y=None):
    """Mean cross-entropy of ``params`` on one batch (per pixel for the U-Net)."""
    logits = forward(params, x)
    if is_segmentation(params):
        return pixel_cross_entropy(logits, pixel_y)
    return softmax_cross_entropy(logits, y)


def support_loss_fn(task, loss_fn=batch_loss):
    return lambda p: loss_fn(p, task.support_x, task.support_y, task.support_pixel_y)


def query_loss_fn(task, loss_fn=batch_loss):
    return lambda p: loss_fn(p, task.query_x, task.query_y, task.query_pixel_y)


def _check_finite(value, what):
    if not np.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"{what}: loss {value!r} is non-finite or exceeds {DIVERGENCE_LIMIT:g}")


def predict(params, x):
    """Arg-max class per image (classification) or per pixel (segmentation)."""
    with no_grad():
        logits = forward(params, x).data
    return np.argmax(logits, axis=1)


def adapt(params, support_x, support_y, alpha, steps, support_pixel_y=None, loss_fn=batch_loss):
    """``steps`` full-batch gradient-descent steps on the support set.

    Returns fresh parameters; ``params`` is never modified. With ``steps=0``
    or ``alpha=0`` the result equals the input bit for bit.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    phi = params.clone()
    if steps == 0 or alpha == 0:
        return phi
    if len(support_y) == 0 and support_pixel_y is None:
        raise ValueError("cannot adapt on an empty support set")
    for _ in range(steps):
        phi = phi.clone(requires_grad=True)
        loss = loss_fn(phi, support_x, support_y, support_pixel_y)
        g = gradient(loss, phi)
        phi = ParamSet([(n, Tensor(t.data - alpha * g[n].data)) for n, t in phi.items()])
    return phi


def adapt_trajectory(params, task, alpha, step_counts, loss_fn=batch_loss):
    """Adapted parameters after each requested step count (one shared descent run)."""
    wanted = sorted(set(int(s) for s in step_counts))
    out = {}
    phi = params.clone()
    done = 0
    for s in wanted:
        if s > done:
            phi = adapt(phi, task.support_x, task.support_y, alpha, s - done, task.support_pixel_y, loss_fn)
            done = s
        out[s] = phi
    return out


# ---------------------------------------------------------------------------
# Regular gradient descent
# ---------------------------------------------------------------------------

def pretrain(params, dataset, cfg, sampler=None, loss_fn=batch_loss):
    """Plain SGD on merged support+query batches of meta-train tasks.

    Each of the ``cfg.pretrain_steps`` iterations draws one k-shot n-way task,
    concatenates its support and query sets into a single batch and takes one
    step of size ``cfg.pretrain_alpha``.
    """
    cfg.validate()
    if sampler is None:
        sampler = TaskSampler(dataset, META_TRAIN, cfg.k, cfg.n, cfg.queries,
                              seed=derive_seed(cfg.seed, "pretrain-tasks"))
    phi = params.clone()
    history = []
    for it in range(cfg.pretrain_steps):
        task = sampler.sample()
        x, y = task.merged()
        pix = None
        if task.support_pixel_y is not None:
            pix = np.concatenate([task.support_pixel_y, task.query_pixel_y])
        phi = phi.clone(requires_grad=True)
        loss = loss_fn(phi, x, y, pix)
        value = float(loss.item())
        _check_finite(value, f"pretrain iteration {it}")
        g = gradient(loss, phi)
        phi = ParamSet([(n, Tensor(t.data - cfg.pretrain_alpha * g[n].data)) for n, t in phi.items()])
        history.append(value)
    return Checkpoint(phi.clone(), "pretrained", cfg.pretrain_steps, cfg, history)


# ---------------------------------------------------------------------------
# MAML
# ---------------------------------------------------------------------------

def meta_gradient(theta, tasks, cfg, loss_fn=batch_loss):
    """Summed (or averaged) per-task meta-gradients, accumulated in task order.

    Returns ``(flat meta-gradient, mean query loss)``.
    """
    theta = theta.clone(requires_grad=True)
    total = np.zeros(theta.numel)
    losses = []
    for task in tasks:
        g, q = gradient_through_update(theta, support_loss_fn(task, loss_fn), query_loss_fn(task, loss_fn),
                                       cfg.alpha, cfg.inner_steps, cfg.second_order, return_loss=True)
        total += g.flatten()
        losses.append(q)
    if cfg.average_meta_batch:
        total /= len(tasks)
    return total, float(np.mean(losses))


def maml_step(theta, tasks, cfg, loss_fn=batch_loss):
    """One outer update ``theta <- theta - beta * sum_i meta-gradient_i``."""
    g, q = meta_gradient(theta, tasks, cfg, loss_fn)
    return theta.unflatten(theta.flatten() - cfg.beta * g), q


def maml_train(theta, dataset, cfg, sampler=None, loss_fn=batch_loss):
    """Meta-train an initialization; the history records mean query loss per iteration."""
    cfg.validate()
    if sampler is None:
        sampler = TaskSampler(dataset, META_TRAIN, cfg.k, cfg.n, cfg.queries,
                              seed=derive_seed(cfg.seed, "maml-tasks"))
    theta = theta.clone()
    history = []
    for it in range(cfg.iterations):
        tasks = [sampler.sample() for _ in range(cfg.meta_batch)]
        theta, q = maml_step(theta, tasks, cfg, loss_fn)
        _check_finite(q, f"maml iteration {it}")
        history.append(q)
        if it % 50 == 0:
            log.debug("maml iteration %d: query loss %.4f", it, q)
    return Checkpoint(theta, "maml", cfg.iterations, cfg, history)


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

def task_accuracy(params, task):
    pred = predict(params, task.query_x)
    if task.query_pixel_y is not None:
        mask = task.query_pixel_y >= 0
        return float((pred[mask] == task.query_pixel_y[mask]).mean())
    return float((pred == task.query_y).mean())


@dataclass(frozen=True)
class GridResult:
    alpha: float
    steps: int
    scores: dict

    def as_dict(self):
        return asdict(self)


def finetune_grid_search(params, dataset, shot, alphas, step_counts, seed=0, n=4,
                         tasks=20, query_per_class=10, meta_set=META_VAL, loss_fn=batch_loss):
    """Pick the fine-tuning ``(alpha, steps)`` with the best mean query accuracy.

    The same task sample is scored for every grid point. Ties go to the
    smaller alpha, then to fewer steps.
    """
    alphas = sorted(float(a) for a in alphas)
    step_counts = sorted(int(s) for s in step_counts)
    if not alphas or not step_counts:
        raise ValueError("fine-tune grids must be non-empty")
    if isinstance(params, Checkpoint):
        params = params.params
    sampler = TaskSampler(dataset, meta_set, shot, n, query_per_class, seed=seed)
    sample = [sampler.sample() for _ in range(tasks)]
    scores = {(a, s): 0.0 for a in alphas for s in step_counts}
    for task in sample:
        for a in alphas:
            traj = adapt_trajectory(params, task, a, step_counts, loss_fn)
            for s in step_counts:
                scores[(a, s)] += task_accuracy(traj[s], task) / len(sample)
    best = max(scores, key=lambda key: (scores[key], -key[0], -key[1]))
    return GridResult(best[0], best[1], scores)
