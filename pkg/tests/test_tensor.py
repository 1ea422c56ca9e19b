import math

import numpy as np
import pytest

from globalattn.errors import ConfigError, ContractError, ShapeError
from globalattn.gradcheck import finite_diff_grad, grad_discrepancy
from globalattn.tensor import (GradientTape, Tensor, add, backward,
                               broadcast_mul, concat_channels, conv2d,
                               conv2d_output_size, flatten, l1_mean, linear,
                               maxpool2x2, mul, relu, reshape, scale, sigmoid,
                               softmax_cross_entropy, tensor_mean, tensor_sum)

from oracles import conv2d_reference


def fd_check(build, params, h=1e-5, tol=1e-6):
    """Backward vs central differences on a freshly built graph."""
    with GradientTape() as tape:
        loss = build()
    backward(loss, tape)
    for p in params:
        analytic = p.grad.copy()
        numeric = finite_diff_grad(lambda _: build().item(), p, h)
        assert grad_discrepancy(analytic, numeric, rel_tol=tol) <= tol
    tape.clear()


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_zero_input_gives_zero_output():
    x = Tensor(np.zeros((1, 1, 3, 3)))
    k = Tensor(np.random.default_rng(0).standard_normal((1, 1, 3, 3)))
    out = conv2d(x, k, Tensor(np.zeros(1)), stride=1, padding=1)
    assert out.shape == (1, 1, 3, 3)
    assert np.array_equal(out.data, np.zeros((1, 1, 3, 3)))


def test_conv_center_one_all_ones_kernel():
    # every 3x3 window around each output position contains the single 1
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 1.0
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)),
                 stride=1, padding=1)
    assert np.array_equal(out.data, np.ones((1, 1, 3, 3)))
    ref = conv2d_reference(x, np.ones((1, 1, 3, 3)), np.zeros(1), 1, 1)
    assert np.array_equal(out.data, ref)


def test_conv_preserves_spatial_size_for_stacked_input():
    nc, w, h, kk = 6, 5, 7, 4
    x = Tensor(np.random.default_rng(1).standard_normal((1, nc, w, h)))
    kernel = Tensor(np.random.default_rng(2).standard_normal((kk, nc, 3, 3)))
    out = conv2d(x, kernel, Tensor(np.zeros(kk)), stride=1, padding=1)
    assert out.shape == (1, kk, w, h)


def test_conv_matches_reference_on_random_cases():
    rng = np.random.default_rng(3)
    for stride, padding, k in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 2, 5),
                               (2, 0, 1)]:
        x = rng.standard_normal((2, 3, 7, 6))
        kern = rng.standard_normal((4, 3, k, k))
        bias = rng.standard_normal(4)
        out = conv2d(Tensor(x), Tensor(kern), Tensor(bias), stride, padding)
        ref = conv2d_reference(x, kern, bias, stride, padding)
        assert np.allclose(out.data, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
@pytest.mark.parametrize("padding", [0, 1, 2, 3])
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_output_shape_formula(k, padding, stride):
    w, h = 11, 9
    if w + 2 * padding < k or h + 2 * padding < k:
        pytest.skip("window larger than padded input")
    x = Tensor(np.zeros((1, 2, w, h)))
    kern = Tensor(np.zeros((3, 2, k, k)))
    out = conv2d(x, kern, Tensor(np.zeros(3)), stride, padding)
    assert out.shape == (1, 3, conv2d_output_size(w, k, stride, padding),
                         conv2d_output_size(h, k, stride, padding))


def test_conv_channel_mismatch_raises():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    kern = Tensor(np.zeros((2, 4, 3, 3)))
    with pytest.raises(ShapeError):
        conv2d(x, kern, Tensor(np.zeros(2)), 1, 1)


def test_conv_even_kernel_raises():
    x = Tensor(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ConfigError):
        conv2d(x, Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros(1)), 1, 1)


def test_conv_linear_in_input():
    rng = np.random.default_rng(4)
    kern = Tensor(rng.standard_normal((2, 2, 3, 3)))
    bias = Tensor(np.zeros(2))
    a = rng.standard_normal((1, 2, 5, 5))
    b = rng.standard_normal((1, 2, 5, 5))
    out_sum = conv2d(Tensor(a + b), kern, bias, 1, 1).data
    out_a = conv2d(Tensor(a), kern, bias, 1, 1).data
    out_b = conv2d(Tensor(b), kern, bias, 1, 1).data
    assert np.allclose(out_sum, out_a + out_b, rtol=1e-12, atol=1e-12)


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 2, 6, 5)), requires_grad=True)
    kern = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
    bias = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
    fd_check(lambda: tensor_sum(mul(conv2d(x, kern, bias, 2, 1),
                                    conv2d(x, kern, bias, 2, 1))),
             [x, kern, bias])


# ---------------------------------------------------------------------------
# relu / sigmoid
# ---------------------------------------------------------------------------

def test_relu_examples():
    assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert np.array_equal(relu(Tensor([-3.0, -0.5])).data, [0.0, 0.0])


def test_relu_subgradient_zero_at_zero():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    with GradientTape() as tape:
        loss = tensor_sum(relu(x))
    backward(loss, tape)
    assert np.array_equal(x.grad, [0.0, 1.0])
    x0 = Tensor([0.0], requires_grad=True)
    with GradientTape() as tape:
        loss = tensor_sum(relu(x0))
    backward(loss, tape)
    assert np.array_equal(x0.grad, [0.0])


def test_sigmoid_at_zero():
    assert sigmoid(Tensor([0.0])).data[0] == 0.5


@pytest.mark.parametrize("x", [-3.0, 0.7, 12.0])
def test_sigmoid_symmetry(x):
    s = sigmoid(Tensor([x])).data[0]
    s_neg = sigmoid(Tensor([-x])).data[0]
    assert s == pytest.approx(1.0 - s_neg, abs=1e-15)


def test_sigmoid_large_negative_matches_high_precision():
    mp = pytest.importorskip("mpmath")
    out = sigmoid(Tensor([-50.0])).data[0]
    assert 0.0 < out <= 1e-20
    expected = float(1 / (1 + mp.exp(mp.mpf(50))))
    assert out == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("x", [-1e4, -100.0, 100.0, 1e4])
def test_sigmoid_finite_at_large_magnitudes(x):
    out = sigmoid(Tensor([x])).data[0]
    assert np.isfinite(out)
    assert 0.0 <= out <= 1.0


def test_sigmoid_backward():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal(7), requires_grad=True)
    fd_check(lambda: tensor_sum(mul(sigmoid(x), sigmoid(x))), [x])


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def test_cross_entropy_uniform_logits():
    loss = softmax_cross_entropy(Tensor([[0.0, 0.0, 0.0]]), [1])
    assert loss.item() == pytest.approx(math.log(3.0), rel=1e-12)


def test_cross_entropy_extreme_logits_no_overflow():
    loss = softmax_cross_entropy(Tensor([[1000.0, 0.0]]), [0])
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_batch_mean():
    row_a, row_b = [1.0, -2.0, 0.5], [0.0, 0.3, -1.0]
    la = softmax_cross_entropy(Tensor([row_a]), [2]).item()
    lb = softmax_cross_entropy(Tensor([row_b]), [0]).item()
    both = softmax_cross_entropy(Tensor([row_a, row_b]), [2, 0]).item()
    assert both == pytest.approx((la + lb) / 2.0, rel=1e-14)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        softmax_cross_entropy(Tensor([[0.0, 0.0]]), [2])
    with pytest.raises(IndexError):
        softmax_cross_entropy(Tensor([[0.0, 0.0]]), [-1])


def test_cross_entropy_backward():
    rng = np.random.default_rng(7)
    logits = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    fd_check(lambda: softmax_cross_entropy(logits, [0, 3, 1]), [logits])


def test_cross_entropy_finite_at_large_magnitudes():
    loss = softmax_cross_entropy(Tensor([[1e4, -1e4, 0.0]]), [1])
    assert np.isfinite(loss.item())


# ---------------------------------------------------------------------------
# broadcast multiply
# ---------------------------------------------------------------------------

def test_broadcast_mul_identity_and_zero_maps():
    rng = np.random.default_rng(8)
    images = Tensor(rng.standard_normal((2, 3, 4, 4)))
    ones = Tensor(np.ones((1, 1, 4, 4)))
    assert np.array_equal(broadcast_mul(images, ones).data, images.data)
    zeros = Tensor(np.zeros((1, 1, 4, 4)))
    assert np.array_equal(broadcast_mul(images, zeros).data,
                          np.zeros((2, 3, 4, 4)))


def test_broadcast_mul_map_gradient_sums_over_copies():
    # B=2, C=3 all-ones images, upstream gradient of ones: six copies sum
    images = Tensor(np.ones((2, 3, 2, 2)))
    wmap = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with GradientTape() as tape:
        loss = tensor_sum(broadcast_mul(images, wmap))
    backward(loss, tape)
    assert np.array_equal(wmap.grad, np.full((1, 1, 2, 2), 6.0))
    numeric = finite_diff_grad(
        lambda _: tensor_sum(broadcast_mul(images, wmap)).item(), wmap, 1e-4)
    assert np.allclose(numeric, 6.0, rtol=1e-8)


def test_broadcast_mul_spatial_mismatch():
    with pytest.raises(ShapeError):
        broadcast_mul(Tensor(np.ones((1, 1, 4, 4))),
                      Tensor(np.ones((1, 1, 3, 4))))


def test_broadcast_mul_is_bilinear():
    rng = np.random.default_rng(21)
    a = rng.standard_normal((2, 2, 3, 3))
    b = rng.standard_normal((2, 2, 3, 3))
    m1 = rng.standard_normal((1, 1, 3, 3))
    m2 = rng.standard_normal((1, 1, 3, 3))
    left = broadcast_mul(Tensor(a + b), Tensor(m1)).data
    right = (broadcast_mul(Tensor(a), Tensor(m1)).data
             + broadcast_mul(Tensor(b), Tensor(m1)).data)
    assert np.allclose(left, right, rtol=1e-13, atol=1e-13)
    left = broadcast_mul(Tensor(a), Tensor(m1 + m2)).data
    right = (broadcast_mul(Tensor(a), Tensor(m1)).data
             + broadcast_mul(Tensor(a), Tensor(m2)).data)
    assert np.allclose(left, right, rtol=1e-13, atol=1e-13)


def test_broadcast_mul_backward_both_sides():
    rng = np.random.default_rng(9)
    images = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
    wmap = Tensor(rng.standard_normal((1, 1, 3, 3)), requires_grad=True)
    fd_check(lambda: tensor_sum(mul(broadcast_mul(images, wmap),
                                    broadcast_mul(images, wmap))),
             [images, wmap])


# ---------------------------------------------------------------------------
# l1 mean
# ---------------------------------------------------------------------------

def test_l1_mean_examples():
    assert l1_mean(Tensor([1.0, -1.0, 2.0])).item() == pytest.approx(4.0 / 3.0)
    assert l1_mean(Tensor(np.zeros(5))).item() == 0.0


def test_l1_mean_of_unit_interval_values_stays_in_unit_interval():
    rng = np.random.default_rng(10)
    vals = rng.uniform(0.0, 1.0, size=(1, 1, 6, 6))
    out = l1_mean(Tensor(vals)).item()
    assert 0.0 <= out <= 1.0


def test_l1_mean_backward_sign_convention():
    x = Tensor([1.5, -2.0, 0.0], requires_grad=True)
    with GradientTape() as tape:
        loss = l1_mean(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, [1 / 3, -1 / 3, 0.0])


# ---------------------------------------------------------------------------
# backward / tape semantics
# ---------------------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with GradientTape() as tape:
        loss = tensor_sum(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradientTape() as tape:
        loss = tensor_sum(mul(x, x))
    backward(loss, tape)
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates_over_multiple_consumers():
    x = Tensor([3.0], requires_grad=True)
    with GradientTape() as tape:
        loss = add(tensor_sum(mul(x, x)), tensor_sum(scale(x, 5.0)))
    backward(loss, tape)
    assert np.array_equal(x.grad, [2 * 3.0 + 5.0])


def test_backward_requires_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradientTape() as tape:
        out = mul(x, x)
    with pytest.raises(ContractError):
        backward(out, tape)


def test_cleared_tape_zeroes_grad_buffers():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradientTape() as tape:
        loss = tensor_sum(mul(x, x))
    backward(loss, tape)
    assert np.any(x.grad != 0)
    tape.clear()
    assert np.array_equal(x.grad, [0.0, 0.0])
    assert len(tape) == 0


def test_mean_backward():
    x = Tensor(np.arange(4.0), requires_grad=True)
    with GradientTape() as tape:
        loss = tensor_mean(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.full(4, 0.25))


# ---------------------------------------------------------------------------
# pooling, linear, reshape, concat
# ---------------------------------------------------------------------------

def test_maxpool_forward_and_tie_rule():
    x = np.zeros((1, 1, 2, 2))
    x[0, 0] = [[1.0, 1.0], [1.0, 1.0]]  # four-way tie
    t = Tensor(x, requires_grad=True)
    with GradientTape() as tape:
        out = maxpool2x2(t)
        loss = tensor_sum(out)
    assert out.data[0, 0, 0, 0] == 1.0
    backward(loss, tape)
    expected = np.zeros((1, 1, 2, 2))
    expected[0, 0, 0, 0] = 1.0  # first entry wins the tie
    assert np.array_equal(t.grad, expected)


def test_maxpool_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((2, 2, 4, 6)), requires_grad=True)
    fd_check(lambda: tensor_sum(mul(maxpool2x2(x), maxpool2x2(x))), [x])


def test_maxpool_odd_size_raises():
    with pytest.raises(ShapeError):
        maxpool2x2(Tensor(np.zeros((1, 1, 3, 4))))


def test_linear_and_reshape_backward():
    rng = np.random.default_rng(12)
    x = Tensor(rng.standard_normal((3, 2, 2, 2)), requires_grad=True)
    w = Tensor(rng.standard_normal((8, 4)) * 0.3, requires_grad=True)
    b = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)
    fd_check(lambda: softmax_cross_entropy(linear(flatten(x), w, b), [0, 3, 1]),
             [x, w, b])


def test_concat_channels_roundtrip_and_backward():
    rng = np.random.default_rng(13)
    a = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 3, 3, 3)), requires_grad=True)
    out = concat_channels([a, b])
    assert out.shape == (1, 5, 3, 3)
    assert np.array_equal(out.data[:, :2], a.data)
    assert np.array_equal(out.data[:, 2:], b.data)
    fd_check(lambda: tensor_sum(mul(concat_channels([a, b]),
                                    concat_channels([a, b]))), [a, b])


def test_reshape_is_pure_relabeling():
    x = Tensor(np.arange(12.0))
    out = reshape(x, (3, 4))
    assert np.array_equal(out.data.reshape(-1), x.data)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def test_finite_diff_sum_of_squares():
    x = Tensor([3.0])
    grad = finite_diff_grad(lambda t: float((t.data ** 2).sum()), x, 1e-4)
    assert grad[0] == pytest.approx(6.0, rel=1e-7)


def test_finite_diff_exact_for_linear_functions():
    x = Tensor([1.0, -2.0])
    coeffs = np.array([4.0, 0.25])
    f = lambda t: float(coeffs @ t.data)
    for h in (1e-2, 1e-5):
        grad = finite_diff_grad(f, x, h)
        assert np.allclose(grad, coeffs, rtol=1e-10)


def test_finite_diff_rejects_nonpositive_step():
    with pytest.raises(ContractError):
        finite_diff_grad(lambda t: 0.0, Tensor([1.0]), 0.0)


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_forward_and_backward_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(99)
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))
        kern = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.2,
                      requires_grad=True)
        bias = Tensor(np.zeros(4), requires_grad=True)
        with GradientTape() as tape:
            out = maxpool2x2(relu(conv2d(x, kern, bias, 1, 1)))
            loss = softmax_cross_entropy(linear(flatten(out),
                                                Tensor(np.ones((64, 2)) * 0.1,
                                                       requires_grad=True),
                                                Tensor(np.zeros(2))), [0, 1])
        backward(loss, tape)
        return loss.item(), kern.grad.copy(), out.data.copy()

    loss1, grad1, out1 = run()
    loss2, grad2, out2 = run()
    assert loss1 == loss2
    assert np.array_equal(grad1, grad2)
    assert np.array_equal(out1, out2)
