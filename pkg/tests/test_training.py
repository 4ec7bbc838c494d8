from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from geomaml.checkpoint import encode_checkpoint
from geomaml.core import ParamSet, Tensor, gradient_through_update
from geomaml.data import META_TRAIN, META_VAL, TaskSampler, generate_synthetic_regions, split_meta_random, split_to_map
from geomaml.models import CnnConfig, UnetConfig, build_cnn, build_unet
from geomaml.training import (
    DivergenceError,
    TrainConfig,
    adapt,
    batch_loss,
    finetune_grid_search,
    maml_step,
    maml_train,
    predict,
    pretrain,
    query_loss_fn,
    support_loss_fn,
    task_accuracy,
)


@pytest.fixture(scope="module")
def ds():
    d = generate_synthetic_regions(num_regions=6, tiles_per_region=60, image_size=4, seed=2)
    return d.with_split(split_to_map(split_meta_random(d.region_ids, (0.5, 0.17, 0.33), seed=0)))


@pytest.fixture(scope="module")
def theta():
    return build_cnn(CnnConfig(input_size=4, depth=2, width=4), seed=3)


def _quad_loss(p, x, y, pixel_y=None):
    # 0.5 * (w - c)^2 with the target c smuggled in through ``x``
    d = p["w"] - float(x)
    return (d * d).sum() * 0.5


def test_adapt_quadratic():
    p = ParamSet([("w", Tensor([0.0]))])
    phi = adapt(p, 2.0, [0], alpha=0.5, steps=1, loss_fn=_quad_loss)
    assert phi["w"].data.tolist() == [1.0]


def test_adapt_zero_steps_and_alpha_bit_exact(ds, theta):
    task = TaskSampler(ds, META_TRAIN, 2, 4, seed=0).sample()
    before = theta.flatten().tobytes()
    for alpha, steps in ((0.3, 0), (0.0, 5)):
        phi = adapt(theta, task.support_x, task.support_y, alpha, steps)
        assert phi.flatten().tobytes() == before
    phi = adapt(theta, task.support_x, task.support_y, 0.3, 3)
    assert phi.flatten().tobytes() != before
    assert theta.flatten().tobytes() == before


def test_adapt_rejects_empty_support(theta):
    with pytest.raises(ValueError, match="empty"):
        adapt(theta, np.zeros((0, 3, 4, 4)), np.zeros(0, dtype=int), 0.1, 1)
    with pytest.raises(ValueError):
        adapt(theta, np.zeros((0, 3, 4, 4)), np.zeros(0, dtype=int), 0.1, -1)


def test_one_maml_iteration_moves_by_beta_times_meta_gradient(ds, theta):
    cfg = TrainConfig(alpha=0.3, beta=0.01, meta_batch=1, iterations=1, seed=4)
    sampler = TaskSampler(ds, META_TRAIN, cfg.k, cfg.n, cfg.queries, seed=11)
    cp = maml_train(theta, ds, cfg, sampler=sampler)
    task = TaskSampler(ds, META_TRAIN, cfg.k, cfg.n, cfg.queries, seed=11).sample()
    g = gradient_through_update(theta.clone(requires_grad=True), support_loss_fn(task), query_loss_fn(task),
                                cfg.alpha, 1)
    np.testing.assert_allclose(theta.flatten() - cp.params.flatten(), cfg.beta * g.flatten(),
                               atol=1e-12, rtol=0)


def test_first_order_quadratic_ratio():
    theta = ParamSet([("w", Tensor([0.0]))])
    sup = lambda p: _quad_loss(p, 2.0, None)
    qry = lambda p: _quad_loss(p, 4.0, None)
    alpha = 0.25
    so = gradient_through_update(theta, sup, qry, alpha)["w"].data[0]
    fo = gradient_through_update(theta, sup, qry, alpha, second_order=False)["w"].data[0]
    phi = 0.0 - alpha * (0.0 - 2.0)
    assert fo == pytest.approx(phi - 4.0, abs=1e-12)
    assert so == pytest.approx(fo * (1 - alpha), abs=1e-12)


def test_meta_batch_sum_in_task_order(ds, theta):
    cfg = TrainConfig(alpha=0.2, beta=0.01, meta_batch=3)
    tasks = [TaskSampler(ds, META_TRAIN, 2, 4, seed=s).sample() for s in range(3)]
    a, _ = maml_step(theta, tasks, cfg)
    b, _ = maml_step(theta, tasks, replace(cfg, average_meta_batch=True))
    d_sum = theta.flatten() - a.flatten()
    d_avg = theta.flatten() - b.flatten()
    np.testing.assert_allclose(d_sum, 3 * d_avg, atol=1e-14, rtol=1e-12)


def test_training_is_deterministic(ds, theta):
    cfg = TrainConfig(iterations=3, seed=5)
    a, b = maml_train(theta, ds, cfg), maml_train(theta, ds, cfg)
    assert encode_checkpoint(a) == encode_checkpoint(b)
    assert a.history == b.history and len(a.history) == 3
    p1, p2 = pretrain(theta, ds, cfg), pretrain(theta, ds, cfg)
    assert encode_checkpoint(p1) == encode_checkpoint(p2)
    assert p1.provenance == "pretrained" and a.provenance == "maml"
    assert len(p1.history) == p1.iteration == 3 * cfg.meta_batch


def test_losses_finite_and_pretraining_learns(ds, theta):
    cp = pretrain(theta, ds, TrainConfig(pretrain_iterations=60, pretrain_alpha=0.1, seed=1))
    h = np.array(cp.history)
    assert np.all(np.isfinite(h))
    assert h[-15:].mean() < h[:15].mean()


def test_divergence_guard(ds, theta):
    with pytest.raises(DivergenceError, match="iteration"):
        pretrain(theta, ds, TrainConfig(iterations=20, pretrain_alpha=1e6, seed=1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(inner_steps=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(alpha=-1).validate()
    assert TrainConfig(k=3).queries == 3 and TrainConfig(k=3, query_per_class=7).queries == 7
    assert TrainConfig(iterations=10, meta_batch=4).pretrain_steps == 40
    assert TrainConfig(iterations=10, pretrain_iterations=7).pretrain_steps == 7


def test_grid_search_single_pair(ds, theta):
    res = finetune_grid_search(theta, ds, 1, [0.1], [2], tasks=3, query_per_class=2)
    assert (res.alpha, res.steps) == (0.1, 2)


def test_grid_search_picks_best_and_ties_to_smallest(ds, theta):
    res = finetune_grid_search(theta, ds, 1, [0.0, 0.05, 0.2], [1, 3], tasks=4, query_per_class=2, seed=3)
    best = res.scores[(res.alpha, res.steps)]
    assert all(best >= v for v in res.scores.values())
    tied = [k for k, v in res.scores.items() if v == best]
    assert (res.alpha, res.steps) == min(tied)
    # every alpha=0 entry scores the same (no adaptation); if that is best the smallest step wins
    zero = {v for (a, s), v in res.scores.items() if a == 0.0}
    assert len(zero) == 1


def test_grid_search_exhaustive_reevaluation(ds, theta):
    alphas, steps = [0.01, 0.1], [1, 2]
    res = finetune_grid_search(theta, ds, 2, alphas, steps, tasks=3, query_per_class=2, seed=9)
    sampler = TaskSampler(ds, META_VAL, 2, 4, 2, seed=9)
    sample = [sampler.sample() for _ in range(3)]
    for a in alphas:
        for s in steps:
            acc = np.mean([task_accuracy(adapt(theta, t.support_x, t.support_y, a, s), t) for t in sample])
            assert acc == pytest.approx(res.scores[(a, s)], abs=1e-12)


def test_segmentation_training_runs():
    d = generate_synthetic_regions(num_regions=2, tiles_per_region=40, image_size=8, segmentation=True, seed=1)
    p = build_unet(UnetConfig(levels=1, base_width=2, input_size=8), seed=0)
    cp = maml_train(p, d, TrainConfig(iterations=2, k=1, n=2, seed=0))
    assert np.all(np.isfinite(cp.history))
    task = TaskSampler(d, META_TRAIN, 1, 2, seed=0).sample()
    loss = batch_loss(cp.params, task.query_x, task.query_y, task.query_pixel_y)
    assert np.isfinite(loss.item())


class _QuadSampler:
    """Tasks of the 1-parameter family: support target ``c``, query target ``c + 1``."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.drawn = []

    def sample(self):
        c = float(self.rng.normal(2.0, 0.5))
        self.drawn.append(c)
        return SimpleNamespace(support_x=c, support_y=None, support_pixel_y=None,
                               query_x=c + 1.0, query_y=None, query_pixel_y=None)


def test_maml_quadratic_converges_to_post_adaptation_optimum():
    alpha = 0.5
    theta = ParamSet([("w", Tensor([0.0]))])
    cfg = TrainConfig(alpha=alpha, beta=0.2, meta_batch=1, iterations=1, seed=0)
    sampler = _QuadSampler(0)
    w = 0.0
    for _ in range(400):
        cp = maml_train(theta, None, cfg, sampler=sampler, loss_fn=_quad_loss)
        c = sampler.drawn[-1]
        phi = w - alpha * (w - c)
        # analytic meta-gradient -(c' - phi)(1 - alpha) with c' = c + 1
        expected = w - cfg.beta * (phi - (c + 1.0)) * (1 - alpha)
        assert cp.params["w"].data[0] == pytest.approx(expected, abs=1e-12)
        w = cp.params["w"].data[0]
        theta = cp.params
    # minimizer of E[((1 - a)(w - c) - 1)^2] is E[c] + 1 / (1 - a) = 4
    assert w == pytest.approx(4.0, abs=0.3)


def test_zero_iterations_and_zero_beta_leave_params_bit_exact(ds, theta):
    before = theta.flatten().tobytes()
    assert pretrain(theta, ds, TrainConfig(iterations=0)).params.flatten().tobytes() == before
    assert maml_train(theta, ds, TrainConfig(iterations=0)).params.flatten().tobytes() == before
    assert maml_train(theta, ds, TrainConfig(iterations=3, beta=0.0)).params.flatten().tobytes() == before


def test_pretrain_separates_linearly_separable_toy():
    # two classes whose first channel differs by a wide margin; no region shift
    d = generate_synthetic_regions(num_regions=2, classes=2, tiles_per_region=60, image_size=4,
                                   shift=0.0, jitter=0.0, noise=0.1, texture=0.0, seed=4)
    p = build_cnn(CnnConfig(input_size=4, depth=2, width=4, num_classes=2), seed=0)
    cfg = TrainConfig(pretrain_iterations=200, n=2, k=4, pretrain_alpha=0.1, seed=0)
    cp = pretrain(p, d, cfg)
    x = np.stack([t.pixels for t in d.tiles])
    y = np.array([t.tile_label for t in d.tiles])
    assert np.mean(predict(cp.params, x) == y) > 0.95
