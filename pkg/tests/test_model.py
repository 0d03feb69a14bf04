import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incepse import autodiff as ad
from incepse import layers as L
from incepse.autodiff import ShapeError, Tape, Tensor
from incepse.gradcheck import check_function, layer_check, mini_model_check
from incepse.model import (IncepSEConfig, SEParams, _layer_params, count_parameters, incepse_layer, init_params,
                           layer_plan, model_features, model_forward, se_block)

SMALL = IncepSEConfig(depth=2, branch_channels=4, bottleneck_channels=4, num_classes=3)

DEFAULT_PARAMETERS = 1033251  # 12 leads, 71 classes, depth 7


def _hand_count(cin=12, depth=7, f=32, nb=32, r=8, ks=(9, 19, 39), classes=71):
    total = 0
    for i in range(depth):
        fi = 2 * f if i == depth - 1 else f
        h = max(1, nb // r)
        total += nb * cin + nb                 # bottleneck conv + bias
        total += h * nb + h + nb * h + nb      # two SE linears
        total += fi * nb * sum(ks)             # long branches, no bias
        total += fi * cin * 3                  # pooled branch, no bias
        total += 4 * fi * cin * 3 + 4 * fi     # skip conv + bias
        total += 2 * 4 * fi                    # BN gamma, beta
        cin = 4 * fi
    return total + classes * cin + classes


def test_parameter_count_regression():
    assert _hand_count() == DEFAULT_PARAMETERS
    assert count_parameters(IncepSEConfig()) == DEFAULT_PARAMETERS
    assert init_params(IncepSEConfig()).num_parameters() == DEFAULT_PARAMETERS


@pytest.mark.parametrize("classes", [71, 44, 23, 5, 19, 12])
def test_parameter_count_per_task(classes):
    assert count_parameters(IncepSEConfig(num_classes=classes)) == _hand_count(classes=classes)


def test_layer_plan_defaults():
    plan = layer_plan(IncepSEConfig())
    assert [p.out_channels for p in plan] == [128] * 6 + [256]
    assert [p.stride for p in plan] == [1] * 6 + [2]
    assert plan[0].in_channels == 12 and plan[-1].bottleneck_channels == 32


def test_config_validation():
    with pytest.raises(ValueError):
        IncepSEConfig(depth=0)
    with pytest.raises(ValueError):
        IncepSEConfig(dropout_p=1.0)


def _se(c=2, hidden=1, w2=None, b2=None, rng=None):
    rng = rng or np.random.default_rng(0)
    fc1 = L.LinearParams(Tensor(rng.standard_normal((hidden, c))), Tensor(rng.standard_normal(hidden)))
    fc2 = L.LinearParams(Tensor(w2 if w2 is not None else rng.standard_normal((c, hidden))),
                         Tensor(b2 if b2 is not None else rng.standard_normal(c)))
    return SEParams(fc1, fc2)


def test_se_zero_second_linear_halves_input(rng):
    x = rng.standard_normal((3, 4, 11))
    out = se_block(Tensor(x), _se(4, 2, np.zeros((4, 2)), np.zeros(4), rng)).values
    np.testing.assert_array_equal(out, 0.5 * x)


def test_se_hand_set_gates():
    fc1 = L.LinearParams(Tensor(np.zeros((1, 2))), Tensor(np.ones(1)))  # hidden = relu(1) = 1
    fc2 = L.LinearParams(Tensor(np.array([[10.0], [-10.0]])), Tensor(np.zeros(2)))
    x = np.ones((1, 2, 5))
    out = se_block(Tensor(x), SEParams(fc1, fc2)).values
    np.testing.assert_allclose(out[0, :, 0], [1.0, 0.0], atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_se_gates_bounded(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 4, 9)) * 3
    out = se_block(Tensor(x), _se(4, 2, rng=r)).values
    ratio = out / x
    assert np.all((ratio > 0) & (ratio < 1))
    assert np.abs(out).max() <= np.abs(x).max()


def test_se_gradient(rng):
    def fn(x, w1, b1, w2, b2):
        return se_block(x, SEParams(L.LinearParams(w1, b1), L.LinearParams(w2, b2)))
    arrays = dict(x=rng.standard_normal((2, 4, 6)), w1=rng.standard_normal((2, 4)), b1=rng.standard_normal(2),
                  w2=rng.standard_normal((4, 2)), b2=rng.standard_normal(4))
    assert check_function("se", fn, arrays, rng).passed(1e-4)


def _layer(cfg, i, mode="train", seed=0):
    m = init_params(cfg, seed)
    w = {k: Tensor(v) for k, v in m.params.items()}
    return m, _layer_params(w, m.buffers, i, layer_plan(cfg)[i].stride, mode, cfg.pool_branch_kernel)


def test_standard_and_final_layer_shapes(rng):
    cfg = IncepSEConfig(depth=2)
    _, p0 = _layer(cfg, 0)
    out = incepse_layer(Tensor(rng.standard_normal((2, 12, 1000))), p0)
    assert out.shape == (2, 128, 1000)
    _, p1 = _layer(cfg, 1)
    assert incepse_layer(out, p1).shape == (2, 256, 500)


def test_zero_input_gives_zero_output():
    _, p = _layer(SMALL, 0)
    assert not np.any(incepse_layer(Tensor(np.zeros((2, 12, 50))), p).values)


def test_stride_misconfiguration_detected(rng):
    _, p = _layer(SMALL, 0)
    p.branch_convs[0].stride = 2
    with pytest.raises(ShapeError, match="stride"):
        incepse_layer(Tensor(rng.standard_normal((1, 12, 50))), p)


def test_skip_path_gradient_with_zero_gamma(rng):
    cfg = SMALL.replace(input_channels=3)
    m = init_params(cfg, 0)
    m.params["layers.0.bn.gamma"][...] = 0.0
    m.params["layers.0.bn.beta"][...] = 0.0
    w = {k: Tensor(v) for k, v in m.params.items()}
    p = _layer_params(w, m.buffers, 0, 1, "train", 3)
    x = rng.standard_normal((2, 3, 40))
    g_out = rng.standard_normal((2, 16, 40))

    def input_grad(fn):
        tape = Tape()
        xt = tape.leaf(x)
        return tape.backward(ad.reduce("sum", ad.mul(fn(xt), Tensor(g_out))))[xt]

    full = input_grad(lambda xt: incepse_layer(xt, p))
    skip_only = input_grad(lambda xt: L.conv1d(xt, p.skip_conv))
    np.testing.assert_array_equal(full, skip_only)
    assert np.any(full)


def test_layer_gradient_check():
    assert layer_check(0).passed(1e-3)
    assert layer_check(1, final=True).passed(1e-3)


@pytest.mark.slow
def test_mini_model_gradient_check():
    assert mini_model_check(0).passed(1e-3)


def test_model_output_shapes():
    m = init_params(IncepSEConfig(depth=2, branch_channels=4, bottleneck_channels=4, num_classes=71))
    x = np.random.default_rng(0).standard_normal((4, 12, 1000))
    assert model_forward(x, m).shape == (4, 71)
    m5 = init_params(IncepSEConfig(depth=2, branch_channels=4, bottleneck_channels=4, num_classes=5))
    assert model_forward(x[:1, :, :100], m5).shape == (1, 5)


def test_default_model_feature_shape():
    m = init_params(IncepSEConfig())
    x = np.random.default_rng(0).standard_normal((1, 12, 1000))
    assert model_features(x, m).shape == (1, 256, 500)


def test_eval_forward_deterministic(rng):
    m = init_params(SMALL.replace(dropout_p=0.3), 3)
    x = rng.standard_normal((2, 12, 60))
    assert np.array_equal(model_forward(x, m).values, model_forward(x, m).values)


def test_short_input_rejected(rng):
    with pytest.raises(ShapeError, match="shorter"):
        model_forward(rng.standard_normal((1, 12, 38)), init_params(SMALL))


def test_wrong_lead_count_rejected(rng):
    with pytest.raises(ShapeError):
        model_forward(rng.standard_normal((1, 8, 60)), init_params(SMALL))


def test_init_deterministic_and_exact_constants():
    a, b = init_params(IncepSEConfig(), 7), init_params(IncepSEConfig(), 7)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    for k, v in a.params.items():
        if k.endswith(".bias") or k.endswith("bn.beta"):
            assert not np.any(v), k
        if k.endswith("bn.gamma"):
            assert np.all(v == 1.0), k


def test_init_kaiming_std():
    m = init_params(IncepSEConfig(), 0)
    w = m.params["layers.3.convs.2.weight"]  # 32*32*39 draws
    assert w.size >= 10_000
    theory = math.sqrt(2.0 / (32 * 39))
    assert abs(w.std() / theory - 1) < 0.2
