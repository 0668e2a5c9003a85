import math

import numpy as np
import pytest

from unwarp.core import autodiff as ad
from unwarp.core.autodiff import (NdValue, NonFiniteValueError, ShapeError,
                                  Tape, TapeConsumedError)
from unwarp.core.gradcheck import check_gradients
from unwarp.model.config import ModelConfig
from unwarp.model.network import network_forward
from unwarp.model.params import as_values, init_params, parameter_shapes


def _naive_conv(x: np.ndarray, kernel: np.ndarray, stride: int,
                padding: int) -> np.ndarray:
    kh, kw, _, c_out = kernel.shape
    padded = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    out_h = (padded.shape[0] - kh) // stride + 1
    out_w = (padded.shape[1] - kw) // stride + 1
    out = np.zeros((out_h, out_w, c_out))
    for i in range(out_h):
        for j in range(out_w):
            window = padded[i * stride:i * stride + kh,
                            j * stride:j * stride + kw]
            for o in range(c_out):
                out[i, j, o] = (window * kernel[:, :, :, o]).sum()
    return out


def _attention_weights(rng: np.random.Generator, c: int) -> ad.AttentionWeights:
    parts = {}
    for name in ("wq", "wk", "wv", "wo"):
        parts[name] = NdValue(rng.normal(0.0, 0.5, size=(c, c)))
    for name in ("bq", "bk", "bv", "bo"):
        parts[name] = NdValue(rng.normal(0.0, 0.1, size=(c,)))
    return ad.AttentionWeights(**parts)


def test_conv2d_identity_kernel(rng):
    x = rng.uniform(size=(4, 4, 1))
    out = ad.conv2d(NdValue(x), NdValue(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_all_ones():
    out = ad.conv2d(NdValue(np.ones((5, 5, 1))), NdValue(np.ones((3, 3, 1, 1))))
    assert out.shape == (3, 3, 1)
    np.testing.assert_array_equal(out.data, 9.0)


def test_conv2d_matches_nested_loops(rng):
    x = rng.normal(size=(6, 6, 2))
    kernel = rng.normal(size=(3, 3, 2, 4))
    out = ad.conv2d(NdValue(x), NdValue(kernel), stride=2, padding=1)
    assert out.shape == (3, 3, 4)
    np.testing.assert_allclose(out.data, _naive_conv(x, kernel, 2, 1),
                               atol=1e-12)


def test_conv2d_channel_mismatch_names_both_shapes(rng):
    with pytest.raises(ShapeError, match=r"\(4, 4, 2\).*\(3, 3, 3, 1\)"):
        ad.conv2d(NdValue(rng.normal(size=(4, 4, 2))),
                  NdValue(rng.normal(size=(3, 3, 3, 1))))


def test_matmul():
    a = NdValue(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(ad.matmul(a, NdValue(np.eye(3))).data,
                                  a.data)
    np.testing.assert_array_equal(
        ad.matmul(NdValue([[2.0]]), NdValue([[3.0]])).data, [[6.0]])
    with pytest.raises(ShapeError):
        ad.matmul(a, NdValue(np.ones((2, 2))))


def test_softmax():
    np.testing.assert_allclose(ad.softmax(NdValue(np.full(9, 4.0))).data,
                               np.full(9, 1 / 9))
    np.testing.assert_allclose(
        ad.softmax(NdValue([0.0, math.log(3.0)])).data, [0.25, 0.75])


def test_layer_norm():
    gain, bias = NdValue(np.ones(2)), NdValue(np.zeros(2))
    np.testing.assert_array_equal(
        ad.layer_norm(NdValue([[3.0, 3.0]]), gain, bias).data, [[0.0, 0.0]])
    np.testing.assert_allclose(
        ad.layer_norm(NdValue([[-1.0, 1.0]]), gain, bias).data,
        [[-1.0, 1.0]],
        atol=1e-5)


def test_attention_single_key_returns_projected_value(rng):
    c = 8
    weights = _attention_weights(rng, c)
    v = rng.normal(size=(1, c))
    out, attention = ad.multi_head_attention(NdValue(rng.normal(size=(5, c))),
                                             NdValue(rng.normal(size=(1, c))),
                                             NdValue(v), 2, weights)
    projected = (v @ weights.wv.data + weights.bv.data) @ weights.wo.data \
        + weights.bo.data
    np.testing.assert_allclose(out.data, np.repeat(projected, 5, axis=0),
                               atol=1e-12)
    np.testing.assert_array_equal(attention.data, 1.0)


def test_attention_identical_keys_average_values(rng):
    c = 8
    weights = _attention_weights(rng, c)
    keys = np.repeat(rng.normal(size=(1, c)), 6, axis=0)
    v = rng.normal(size=(6, c))
    out, attention = ad.multi_head_attention(NdValue(rng.normal(size=(3, c))),
                                             NdValue(keys), NdValue(v), 4,
                                             weights)
    assert attention.shape == (4, 3, 6)
    np.testing.assert_allclose(attention.data, 1 / 6, atol=1e-12)
    mean_value = v.mean(axis=0, keepdims=True) @ weights.wv.data \
        + weights.bv.data
    expected = mean_value @ weights.wo.data + weights.bo.data
    np.testing.assert_allclose(out.data, np.repeat(expected, 3, axis=0),
                               atol=1e-10)


def test_attention_rejects_indivisible_heads(rng):
    x = NdValue(rng.normal(size=(2, 6)))
    with pytest.raises(ShapeError):
        ad.multi_head_attention(x, x, x, 4, _attention_weights(rng, 6))


def test_backward_simple_gradients(rng):
    x = NdValue(rng.normal(size=(3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(x)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    with Tape() as tape:
        loss = ad.sum_(ad.mul(x, x))
    ad.backward(tape, loss)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates_reused_values(rng):
    x = NdValue(rng.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ad.relu(x)
        loss = ad.sum_(ad.add(ad.mul(x, 3.0), ad.mul(y, y)))
    ad.backward(tape, loss)
    np.testing.assert_allclose(x.grad, 3.0 + 2 * np.maximum(x.data, 0))


def test_tape_records_in_topological_order(rng):
    x = NdValue(rng.normal(size=(3,)), requires_grad=True)
    with Tape() as tape:
        ad.sum_(ad.gelu(ad.mul(ad.add(x, 1.0), x)))
    positions = {id(node): i for i, node in enumerate(tape.nodes)}
    for i, node in enumerate(tape.nodes):
        for parent in node.parents:
            if id(parent) in positions:
                assert positions[id(parent)] < i


def test_backward_rejects_non_scalar_and_reuse(rng):
    x = NdValue(rng.normal(size=(3,)), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ShapeError):
        ad.backward(tape, y)

    with Tape() as tape:
        loss = ad.sum_(ad.mul(x, 2.0))
    ad.backward(tape, loss)
    with pytest.raises(TapeConsumedError):
        ad.backward(tape, loss)
    with pytest.raises(TapeConsumedError):
        with tape:
            pass


def test_operations_outside_a_tape_are_not_tracked(rng):
    x = NdValue(rng.normal(size=(3,)), requires_grad=True)
    y = ad.mul(x, 2.0)
    assert not y.requires_grad
    assert y.is_leaf


def test_non_finite_values_are_rejected():
    with pytest.raises(NonFiniteValueError, match="add"):
        ad.add(NdValue([np.inf]), 1.0)


def test_precision_is_selected_by_environment(monkeypatch):
    monkeypatch.setenv("UNWARP_PRECISION", "f32")
    assert NdValue([1.0]).data.dtype == np.float32
    monkeypatch.setenv("UNWARP_PRECISION", "f16")
    with pytest.raises(ValueError, match="UNWARP_PRECISION"):
        NdValue([1.0])


def test_pad_edges_and_unfold(rng):
    x = rng.normal(size=(3, 4, 2))
    padded = ad.pad_edges(NdValue(x), "extrapolate")
    assert padded.shape == (5, 6, 2)
    np.testing.assert_allclose(padded.data[0, 1:5], 2 * x[0] - x[1])
    np.testing.assert_allclose(
        ad.pad_edges(NdValue(x), "replicate").data[1:4, 0], x[:, 0])

    neighbors = ad.unfold3x3(padded)
    assert neighbors.shape == (3, 4, 9, 2)
    np.testing.assert_allclose(neighbors.data[:, :, 4], x)
    np.testing.assert_allclose(neighbors.data[1, 1, 0], x[0, 0])


def test_resize_bilinear_extrapolates_linear_maps():
    ramp = np.arange(4.0)[None, :, None].repeat(4, axis=0)
    out = ad.resize_bilinear(NdValue(ramp), 8, 8, extrapolate=True)
    expected = (np.arange(8) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(out.data[3, :, 0], expected, atol=1e-12)


@pytest.mark.parametrize("name", [
    "conv2d", "layer_norm", "softmax", "attention", "resize", "unfold",
    "gelu"
])
def test_gradients_match_finite_differences(rng, name):
    x = NdValue(rng.normal(size=(6, 6, 4)), requires_grad=True)
    kernel = NdValue(rng.normal(size=(3, 3, 4, 2)), requires_grad=True)
    gain = NdValue(rng.uniform(0.5, 1.5, size=4), requires_grad=True)
    bias = NdValue(rng.normal(size=4), requires_grad=True)
    tokens = NdValue(rng.normal(size=(5, 4)), requires_grad=True)
    weights = _attention_weights(rng, 4)
    mixing = rng.normal(size=(64, 64))

    def project(value: NdValue) -> NdValue:
        flat = value.data.size
        return ad.sum_(
            ad.mul(ad.reshape(value, (flat,)),
                   mixing.reshape(-1)[:flat]))

    losses = {
        "conv2d": (lambda: project(
            ad.conv2d(x, kernel, bias=None, stride=2, padding=1)), {
                "x": x,
                "kernel": kernel
            }),
        "layer_norm": (lambda: project(ad.layer_norm(x, gain, bias)), {
            "x": x,
            "gain": gain,
            "bias": bias
        }),
        "softmax": (lambda: project(ad.softmax(x, axis=-1)), {
            "x": x
        }),
        "attention": (lambda: project(
            ad.multi_head_attention(tokens, tokens, tokens, 2, weights)[0]), {
                "tokens": tokens
            }),
        "resize": (lambda: project(
            ad.resize_bilinear(x, 4, 9, extrapolate=True)), {
                "x": x
            }),
        "unfold": (lambda: project(ad.unfold3x3(ad.pad_edges(x))), {
            "x": x
        }),
        "gelu": (lambda: project(ad.gelu(x)), {
            "x": x
        }),
    }
    loss_fn, inputs = losses[name]
    report = check_gradients(loss_fn, inputs)
    assert report.passed, report.failures[:3]
    assert report.checked > 0


def test_gradcheck_skips_kinks():
    # The kink of |x| sits inside the step around the first entry.
    x = NdValue(np.array([0.6e-4, 1.0, -2.0]), requires_grad=True)
    report = check_gradients(lambda: ad.sum_(ad.abs_(x)), {"x": x})
    assert report.passed
    assert report.skipped_nonsmooth == 1
    assert report.checked == 2


def test_gradcheck_reports_wrong_gradients():
    x = NdValue(np.array([0.5, 1.5]), requires_grad=True)

    def broken_square() -> NdValue:
        # Forward x², backward claims 3x.
        return ad.sum_(ad._make("square", x.data**2, (x,), lambda g:
                                (3 * g * x.data,)))

    report = check_gradients(broken_square, {"x": x})
    assert not report.passed
    assert len(report.failures) == 2


def test_tiny_model_gradients_match_finite_differences(rng):
    config = ModelConfig.tiny()
    values = as_values(init_params(config, seed=3, identity_head=False),
                       requires_grad=True)
    image = NdValue(rng.uniform(size=(32, 32, 3)))
    target = rng.uniform(0.0, 32.0, size=(32, 32, 2))

    def loss_fn() -> NdValue:
        return ad.l1_loss(network_forward(image, values, config), target)

    groups = list(parameter_shapes(config))
    assert set(groups) == set(values)
    report = check_gradients(loss_fn, {name: values[name] for name in groups},
                             max_entries=2)
    assert report.passed, report.failures[:3]
    # Kinks are rare, so nearly every sampled entry gets compared.
    assert report.checked >= len(groups)


def test_gradcheck_skips_a_kink_the_coarse_step_barely_crosses():
    # The ReLU kink sits 0.99·h below the first entry: the quotient at h is
    # off by 2.4e-4 relative, the one at h/10 is exact.
    x = NdValue(np.array([0.99e-4, 0.5]), requires_grad=True)

    def loss_fn() -> NdValue:
        return ad.sum_(ad.mul(ad.relu(x), 0.05) + x)

    report = check_gradients(loss_fn, {"x": x})
    assert report.passed, report.failures
    assert report.skipped_nonsmooth == 1
    assert report.checked == 1
