import numpy as np
import pytest

from geomaml.core import DimensionError, ParamSet, Tensor, gradient, pixel_cross_entropy
from geomaml.core.ops import batchnorm2d, conv2d, linear, maxpool2d, relu
from geomaml.models import (
    DESK_CNN,
    FULL_SCALE_CNN,
    CnnConfig,
    ConfigError,
    UnetConfig,
    build_cnn,
    build_unet,
    cnn_param_count,
    forward,
    forward_classify,
    forward_segment,
    unet_features,
)


def test_full_scale_cnn_parameter_count():
    assert cnn_param_count(FULL_SCALE_CNN) == 231_818
    assert 8_704 + 6 * 36_928 + 7 * 128 + 650 == 231_818


def test_full_scale_cnn_build_flattens_to_count():
    # building allocates ~1.8 MB; cheap enough to check the real thing
    assert build_cnn(FULL_SCALE_CNN).numel == 231_818


def test_desk_cnn_count_follows_closed_form():
    expected = (3 * 16 * 9 + 16) + 4 * (16 * 16 * 9 + 16) + 5 * 32 + (16 * 4 + 4)
    assert expected == 9_956
    assert cnn_param_count(DESK_CNN) == build_cnn(DESK_CNN).numel == expected


@pytest.mark.parametrize("cfg", [CnnConfig(depth=3, input_size=8, width=5, num_classes=3),
                                 CnnConfig(in_channels=2, depth=2, input_size=4, batchnorm=False)])
def test_param_count_matches_build(cfg):
    assert cnn_param_count(cfg) == build_cnn(cfg).numel


def test_cnn_config_requires_power_of_two_input():
    with pytest.raises(ConfigError, match="2\\*\\*depth"):
        CnnConfig(input_size=30, depth=5).validate()


def test_zero_input_gives_finite_logits():
    p = build_cnn(CnnConfig(input_size=16, depth=4, width=8), seed=1)
    out = forward(p, np.zeros((3, 3, 16, 16)))
    assert out.shape == (3, 4) and np.all(np.isfinite(out.data))


def test_init_is_deterministic_per_seed():
    a, b, c = build_cnn(seed=5), build_cnn(seed=5), build_cnn(seed=6)
    assert a.flatten().tobytes() == b.flatten().tobytes()
    assert a.flatten().tobytes() != c.flatten().tobytes()


def test_batch_permutation_permutes_logits():
    rng = np.random.default_rng(2)
    p = build_cnn(CnnConfig(input_size=8, depth=3, width=6), seed=2)
    x = rng.normal(size=(5, 3, 8, 8))
    perm = rng.permutation(5)
    np.testing.assert_allclose(forward(p, x[perm]).data, forward(p, x).data[perm], atol=1e-12, rtol=0)


def test_batch_independence_without_batchnorm():
    rng = np.random.default_rng(3)
    p = build_cnn(CnnConfig(input_size=2, depth=1, width=4, batchnorm=False), seed=3)
    x = rng.normal(size=(8, 3, 2, 2))
    np.testing.assert_array_equal(forward(p, x[:1]).data[0], forward(p, x).data[0])


def test_logits_match_manual_composition():
    rng = np.random.default_rng(4)
    p = build_cnn(CnnConfig(input_size=8, depth=3, width=4), seed=4)
    x = rng.normal(size=(1, 3, 8, 8))
    h = Tensor(x)
    for i in range(3):
        h = conv2d(h, p[f"block{i}.conv.weight"], p[f"block{i}.conv.bias"])
        h = batchnorm2d(h, p[f"block{i}.bn.gamma"], p[f"block{i}.bn.beta"])
        h = maxpool2d(relu(h))
    manual = h.data.reshape(1, 4) @ p["head.weight"].data + p["head.bias"].data
    np.testing.assert_allclose(forward(p, x).data, manual, atol=1e-12, rtol=0)


def test_forward_rejects_wrong_size():
    p = build_cnn(CnnConfig(input_size=8, depth=3, width=4))
    with pytest.raises(DimensionError, match="depth-3"):
        forward_classify(p, np.zeros((1, 3, 16, 16)))
    with pytest.raises(DimensionError, match="channels"):
        forward_classify(p, np.zeros((1, 2, 8, 8)))


def test_unet_shape_and_widths():
    cfg = UnetConfig(levels=2, base_width=4, input_size=32)
    p = build_unet(cfg, seed=0)
    x = np.random.default_rng(5).normal(size=(2, 3, 32, 32))
    assert forward_segment(p, x).shape == (2, 4, 32, 32)
    feats = unet_features(p, x)
    assert [f.shape[1] for f in feats] == [4, 8, 16]


def test_unet_gradients_finite_and_nonzero():
    p = build_unet(UnetConfig(levels=2, base_width=2, input_size=8), seed=1).clone(requires_grad=True)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 8, 8))
    y = rng.integers(0, 4, size=(2, 8, 8))
    g = gradient(pixel_cross_entropy(forward(p, x), y), p)
    flat = g.flatten()
    assert np.all(np.isfinite(flat)) and np.any(flat != 0)


def test_unet_rejects_indivisible_size():
    with pytest.raises(ConfigError):
        UnetConfig(levels=3, input_size=20).validate()
