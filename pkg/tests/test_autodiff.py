import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from skelgcn import autodiff as ad
from skelgcn.autodiff import Tensor

from helpers import numeric_grad, rel_err


def _leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def _check(loss_fn, *arrays, tol=1e-6):
    """Compare backward() against the test-local central-difference helper."""
    leaves = [_leaf(a) for a in arrays]
    ad.backward(loss_fn(*leaves))
    for leaf in leaves:
        def f():
            with ad.no_grad():
                return loss_fn(*leaves).item()
        num = numeric_grad(f, leaf.data)
        assert rel_err(leaf.grad, num) <= tol, leaf


# ---- create

def test_create_echo():
    t = ad.create([2, 2], [1, 2, 3, 4], False)
    assert t.shape == (2, 2)
    np.testing.assert_array_equal(t.data, [[1, 2], [3, 4]])
    assert t.data.dtype == np.float64


def test_create_empty():
    assert ad.create([0], [], False).shape == (0,)


def test_create_length_mismatch():
    with pytest.raises(ValueError):
        ad.create([2], [1, 2, 3], True)


# ---- add / hadamard

def test_add_values_and_identity():
    np.testing.assert_array_equal(ad.add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(ad.add(Tensor(x), Tensor(np.zeros((3, 4)))).data, x)


def test_add_grad_is_ones():
    a, b = _leaf(np.ones((2, 3))), _leaf(np.ones((2, 3)))
    ad.sum(ad.add(a, b)).backward()
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))


def test_add_broadcast_grad_sums_stretched_axes():
    a, b = _leaf(np.zeros((2, 3, 4))), _leaf(np.zeros((3, 1)))
    ad.sum(ad.add(a, b)).backward()
    np.testing.assert_array_equal(b.grad, np.full((3, 1), 8.0))


def test_add_incompatible():
    with pytest.raises(ValueError):
        ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(2)))


def test_hadamard_values():
    np.testing.assert_array_equal(ad.hadamard(Tensor([1, 2, 3]), Tensor([1, 1, 1])).data, [1, 2, 3])
    np.testing.assert_array_equal(ad.hadamard(Tensor([2, 3]), Tensor([4, 5])).data, [8, 15])


def test_hadamard_grad_equals_other_operand():
    rng = np.random.default_rng(1)
    a, b = _leaf(rng.normal(size=(3, 4))), _leaf(rng.normal(size=(3, 4)))
    ad.sum(ad.hadamard(a, b)).backward()
    num = numeric_grad(lambda: float((a.data * b.data).sum()), a.data)
    assert np.max(np.abs(num - b.data)) <= 1e-6
    np.testing.assert_allclose(a.grad, b.data, rtol=0, atol=0)


def test_hadamard_broadcast_grad():
    rng = np.random.default_rng(2)
    _check(lambda a, b: ad.sum(ad.hadamard(a, b)), rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 1, 4)))


# ---- matmul

def test_matmul_identity():
    m = np.random.default_rng(3).normal(size=(3, 3))
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(m)).data, m)


def test_matmul_hand_value():
    out = ad.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_grad():
    rng = np.random.default_rng(4)
    w = Tensor(rng.normal(size=(3, 2)))
    _check(lambda a, b: ad.sum(ad.hadamard(ad.matmul(a, b), w)),
           rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))


def test_matmul_batched_grad():
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(2, 3, 5)))
    _check(lambda a, b: ad.sum(ad.hadamard(ad.matmul(a, b), w)),
           rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)))
    w2 = Tensor(rng.normal(size=(2, 3, 5)))
    _check(lambda a, b: ad.sum(ad.hadamard(ad.matmul(a, b), w2)),
           rng.normal(size=(3, 4)), rng.normal(size=(2, 4, 5)))


def test_matmul_inner_mismatch():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# ---- conv2d

def test_conv2d_identity_kernel():
    x = np.random.default_rng(6).normal(size=(1, 5, 5))
    np.testing.assert_array_equal(ad.conv2d(Tensor(x), Tensor([[1.0]])).data, x)


def _conv2d_direct(x, k):
    # direct summation with explicit bounds checks
    t = x.shape[-1]
    r = k.shape[0] // 2
    out = np.zeros_like(x)
    for i in range(t):
        for j in range(t):
            s = 0.0
            for a in range(k.shape[0]):
                for b in range(k.shape[1]):
                    ii, jj = i + a - r, j + b - r
                    if 0 <= ii < t and 0 <= jj < t:
                        s += x[..., ii, jj] * k[a, b]
            out[..., i, j] = s
    return out


def test_conv2d_all_ones():
    out = ad.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((3, 3)))).data
    assert out[0, 1, 1] == 9 and out[0, 0, 0] == 4
    np.testing.assert_array_equal(out, _conv2d_direct(np.ones((1, 3, 3)), np.ones((3, 3))))


def test_conv2d_matches_direct_summation():
    rng = np.random.default_rng(7)
    x, k = rng.normal(size=(2, 6, 6)), rng.normal(size=(5, 5))
    np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(k)).data, _conv2d_direct(x, k), atol=1e-12)


def test_conv2d_grads():
    rng = np.random.default_rng(8)
    w = Tensor(rng.normal(size=(1, 5, 5)))
    _check(lambda x, k: ad.sum(ad.hadamard(ad.conv2d(x, k), w)),
           rng.normal(size=(1, 5, 5)), rng.normal(size=(3, 3)))


def test_conv2d_even_kernel_rejected():
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((2, 2))))


# ---- small ops

def test_relu_sum_mean_permute_slice():
    np.testing.assert_array_equal(ad.relu(Tensor([-1, 0, 2])).data, [0, 0, 2])
    assert ad.mean(Tensor(np.full((2, 3, 4), 5.0))).item() == 5.0
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    back = ad.permute(ad.permute(x, (2, 0, 1)), (1, 2, 0))
    np.testing.assert_array_equal(back.data, x.data)
    np.testing.assert_array_equal(ad.slice(x, 1, 0, 3).data, x.data)
    np.testing.assert_array_equal(ad.slice(x, 2, 1, 4, 2).data, x.data[:, :, 1:4:2])


def test_shape_op_errors():
    x = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ad.sum(x, axes=2)
    with pytest.raises(ValueError):
        ad.permute(x, (0, 0))
    with pytest.raises(ValueError):
        ad.slice(x, 1, 0, 4)
    with pytest.raises(ValueError):
        ad.slice(x, 3, 0, 1)


def test_small_op_grads():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4, 5))
    x[np.abs(x) < 1e-3] += 1e-2  # keep clear of the relu kink
    w_relu = Tensor(x ** 2)
    w_mean = Tensor(rng.normal(size=4))
    w_perm = Tensor(rng.normal(size=(4, 3, 3)))
    w_pad = Tensor(rng.normal(size=(3, 7, 5)))
    w_cat = Tensor(rng.normal(size=(6, 4, 5)))
    w_gather = Tensor(rng.normal(size=(3, 2, 2)))
    rows, cols = np.array([[0, 1], [3, 3]]), np.array([[2, 2], [4, 2]])
    _check(lambda t: ad.sum(ad.hadamard(ad.relu(t), w_relu)), x)
    _check(lambda t: ad.sum(ad.hadamard(ad.mean(t, axes=(0, 2)), w_mean)), x)
    _check(lambda t: ad.sum(ad.hadamard(ad.permute(ad.slice(t, 2, 0, 5, 2), (1, 2, 0)), w_perm)), x)
    _check(lambda t: ad.sum(ad.hadamard(ad.pad(t, 1, 2, 1), w_pad)), x)
    _check(lambda t: ad.sum(ad.hadamard(ad.concat([t, ad.scale(t, 2.0)], 0), w_cat)), x)
    _check(lambda t: ad.sum(ad.hadamard(ad.gather2d(t, rows, cols), w_gather)), x)
    # repeated index (3, 2) twice in one row: gradients must add
    dup_r, dup_c = np.array([[3, 3]]), np.array([[2, 2]])
    t = _leaf(x)
    ad.sum(ad.gather2d(t, dup_r, dup_c)).backward()
    assert t.grad[0, 3, 2] == 2.0 and t.grad.sum() == 6.0


# ---- batch norm

def test_batch_norm_constant_channel_gives_beta():
    x = np.random.default_rng(10).normal(size=(4, 2, 3))
    x[:, 1, :] = 7.0
    gamma, beta = Tensor([1.5, 2.0]), Tensor([0.3, -0.4])
    out = ad.batch_norm(Tensor(x), gamma, beta, np.zeros(2), np.ones(2), training=True).data
    np.testing.assert_allclose(out[:, 1, :], -0.4, atol=1e-12)


def test_batch_norm_fixed_point():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(50, 3, 8))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    out = ad.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True).data
    assert np.max(np.abs(out - x)) <= 1e-3


def test_batch_norm_running_stats_and_eval():
    rng = np.random.default_rng(12)
    x = rng.normal(2.0, 3.0, size=(6, 2, 5))
    rm, rv = np.zeros(2), np.ones(2)
    ad.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=True)
    mu = x.mean(axis=(0, 2))
    var = x.var(axis=(0, 2), ddof=1)
    np.testing.assert_allclose(rm, 0.1 * mu)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * var)
    out = ad.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=False).data
    np.testing.assert_allclose(out, (x - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5))


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_grad(training):
    rng = np.random.default_rng(13)
    w = Tensor(rng.normal(size=(4, 3, 5)))
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
    _check(lambda x, g, b: ad.sum(ad.hadamard(ad.batch_norm(x, g, b, rm.copy(), rv.copy(), training), w)),
           rng.normal(size=(4, 3, 5)), rng.normal(size=3), rng.normal(size=3), tol=1e-4)


def test_batch_norm_empty_channel():
    with pytest.raises(ValueError):
        ad.batch_norm(Tensor(np.zeros((0, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                      np.zeros(2), np.ones(2), True)


# ---- softmax cross-entropy

def test_ce_uniform_logits():
    for c in (2, 5, 60):
        assert abs(ad.softmax_cross_entropy(Tensor(np.zeros((3, c))), [0, 1, 1]).item() - math.log(c)) < 1e-12


def test_ce_monotone_in_true_logit():
    losses = []
    for v in np.linspace(0, 30, 16):
        losses.append(ad.softmax_cross_entropy(Tensor([[v, 0.0, 0.0]]), [0]).item())
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-12


def test_ce_grad():
    rng = np.random.default_rng(14)
    _check(lambda z: ad.softmax_cross_entropy(z, [2, 0]), rng.normal(size=(2, 3)))


def test_ce_label_out_of_range():
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(Tensor(np.zeros((1, 3))), [3])


def test_ce_stable_for_large_logits():
    loss = ad.softmax_cross_entropy(Tensor([[1000.0, 0.0]]), [1]).item()
    assert loss == pytest.approx(1000.0)


# ---- backward

def test_backward_sum_ones():
    x = _leaf(np.zeros((2, 3)))
    ad.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_accumulates_over_uses():
    x = _leaf(np.zeros(4))
    ad.sum(ad.add(x, x)).backward()
    np.testing.assert_array_equal(x.grad, np.full(4, 2.0))


def test_backward_fanout_is_sum_of_consumers():
    rng = np.random.default_rng(15)
    x0 = rng.normal(size=(3, 3))
    ws = [rng.normal(size=(3, 3)) for _ in range(4)]
    separate = np.zeros((3, 3))
    for w in ws:
        x = _leaf(x0)
        ad.sum(ad.hadamard(ad.matmul(x, Tensor(w)), Tensor(w))).backward()
        separate += x.grad
    x = _leaf(x0)
    total = ad.sum(ad.hadamard(ad.matmul(x, Tensor(ws[0])), Tensor(ws[0])))
    for w in ws[1:]:
        total = ad.add(total, ad.sum(ad.hadamard(ad.matmul(x, Tensor(w)), Tensor(w))))
    total.backward()
    np.testing.assert_allclose(x.grad, separate, atol=1e-12)


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError):
        ad.backward(ad.scale(_leaf(np.ones(2)), 2.0))


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(16)
    x, k = rng.normal(size=(2, 7, 7)), rng.normal(size=(3, 3))
    a = ad.conv2d(Tensor(x), Tensor(k)).data
    b = ad.conv2d(Tensor(x.copy()), Tensor(k.copy())).data
    assert np.array_equal(a, b)


def test_no_grad_records_nothing():
    x = _leaf(np.ones(3))
    with ad.no_grad():
        y = ad.scale(x, 2.0)
    assert y.node is None and not y.requires_grad


# ---- grad_check

def test_grad_check_quadratic():
    x = _leaf([3.0])
    err = ad.grad_check(lambda t: ad.sum(ad.hadamard(t, t)), [x])
    assert x.grad[0] == 6.0
    assert err <= 1e-9


def test_grad_check_flags_wrong_gradient(monkeypatch):
    x = _leaf(np.random.default_rng(17).normal(size=5))
    orig = ad.scale

    def bad_scale(a, c):
        out = orig(a, c)
        if out.node is not None:
            out.node.backward = lambda g: (g * c * 1.01,)
        return out

    assert ad.grad_check(lambda t: ad.sum(bad_scale(t, 3.0)), [x]) > 1e-3


def test_grad_check_two_layer_model_200_params():
    rng = np.random.default_rng(18)
    # small weights keep the softmax away from saturation (non-degenerate point)
    w1 = _leaf(0.3 * rng.normal(size=(10, 12)))
    w2 = _leaf(0.5 * rng.normal(size=(12, 6)))
    b1 = _leaf(0.1 * rng.normal(size=12))
    # nudge the relu inputs off the kink
    x = Tensor(rng.normal(size=(4, 10)))
    hidden = x.data @ w1.data + b1.data
    b1.data += np.where(np.abs(hidden) < 1e-3, 1e-3, 0.0).max(axis=0)

    def loss(w1, b1, w2):
        h = ad.relu(ad.add(ad.matmul(x, w1), b1))
        return ad.softmax_cross_entropy(ad.matmul(h, w2), [0, 1, 2, 3])

    assert w1.size + w2.size + b1.size == 204
    assert ad.grad_check(loss, [w1, b1, w2]) <= 1e-4


# ---- properties

_arrays = hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=4),
                     elements=st.floats(-10, 10))


@settings(max_examples=50, deadline=None)
@given(_arrays, st.randoms(use_true_random=False))
def test_permute_inverse_roundtrip(a, r):
    order = list(range(a.ndim))
    r.shuffle(order)
    inverse = list(np.argsort(order))
    np.testing.assert_array_equal(ad.permute(ad.permute(Tensor(a), order), inverse).data, a)


@settings(max_examples=50, deadline=None)
@given(_arrays)
def test_full_slice_identity(a):
    for axis in range(a.ndim):
        np.testing.assert_array_equal(ad.slice(Tensor(a), axis, 0, a.shape[axis]).data, a)


_nondegenerate = st.floats(0.1, 5) | st.floats(-5, -0.1)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (2, 3), elements=_nondegenerate),
       hnp.arrays(np.float64, (3, 2), elements=_nondegenerate))
def test_matmul_grad_property(a, b):
    _check(lambda x, y: ad.sum(ad.hadamard(ad.matmul(x, y), ad.matmul(x, y))), a, b, tol=1e-4)
