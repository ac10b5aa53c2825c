"""Normalization machinery: hand-computed moment oracles, masking, running
statistics, and the EMA recursion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detrend import tensor as T
from detrend.normalizers import (
    EPSILON,
    AffineParams,
    BnRunningStats,
    bn_forward,
    ema,
    ln_forward,
)
from detrend.tensor import Tensor


def make_affine(features, beta=True, beta_init=0.0, dtype=np.float64):
    return AffineParams(features, with_beta=beta, beta_init=beta_init, dtype=dtype)


# -- batch norm ------------------------------------------------------------


def test_bn_two_point_batch_oracle():
    # batch {1, 3}: mean 2, var 1 -> normalized {-1, +1} (up to epsilon)
    x = Tensor(np.array([[1.0], [3.0]]))
    stats = BnRunningStats(1)
    out = bn_forward(x, make_affine(1), stats, t=0, train=True)
    expected = np.array([[-1.0], [1.0]]) / np.sqrt(1 + EPSILON)
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)
    np.testing.assert_allclose(stats.mean[0], [2.0])
    np.testing.assert_allclose(stats.var[0], [1.0])


def test_bn_moments_after_normalization(rng64):
    x = Tensor(rng64.standard_normal((16, 5)) * 3 + 2)
    out = bn_forward(x, make_affine(5), BnRunningStats(5), t=0, train=True)
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=0), 1.0, atol=1e-4)


def test_bn_spatial_pools_over_positions(rng64):
    x = Tensor(rng64.standard_normal((4, 3, 5, 5)))
    out = bn_forward(x, make_affine(3), BnRunningStats(3), t=0, train=True)
    # per-channel moments over batch AND space
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_bn_mask_excludes_padded_samples():
    x = Tensor(np.array([[1.0], [3.0], [1000.0]]))
    stats = BnRunningStats(1)
    mask = np.array([True, True, False])
    out = bn_forward(x, make_affine(1), stats, t=0, train=True, valid_mask=mask)
    # stats as if the padded row did not exist
    np.testing.assert_allclose(stats.mean[0], [2.0])
    np.testing.assert_allclose(stats.var[0], [1.0])
    np.testing.assert_allclose(out.data[:2], np.array([[-1.0], [1.0]]) / np.sqrt(1 + EPSILON))


def test_bn_needs_two_valid_samples():
    x = Tensor(np.ones((3, 2)))
    with pytest.raises(ValueError):
        bn_forward(x, make_affine(2), BnRunningStats(2), t=0, train=True,
                   valid_mask=np.array([True, False, False]))


def test_bn_affine_applies_after_normalization():
    x = Tensor(np.array([[1.0], [3.0]]))
    aff = make_affine(1, beta_init=-2.0)
    aff.gamma.data[:] = 0.5
    out = bn_forward(x, aff, BnRunningStats(1), t=0, train=True)
    expected = 0.5 * np.array([[-1.0], [1.0]]) / np.sqrt(1 + EPSILON) - 2.0
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_bn_running_stats_first_update_copies_then_blends():
    stats = BnRunningStats(2)
    stats.update(0, np.array([1.0, 2.0]), np.array([4.0, 9.0]))
    np.testing.assert_allclose(stats.mean[0], [1.0, 2.0])
    stats.update(0, np.array([3.0, 4.0]), np.array([8.0, 1.0]))
    # momentum 0.1: 0.9*old + 0.1*new
    np.testing.assert_allclose(stats.mean[0], [0.9 * 1 + 0.1 * 3, 0.9 * 2 + 0.1 * 4])
    np.testing.assert_allclose(stats.var[0], [0.9 * 4 + 0.1 * 8, 0.9 * 9 + 0.1 * 1])


def test_bn_eval_uses_running_stats_and_clamps_t():
    stats = BnRunningStats(1)
    stats.update(0, np.array([2.0]), np.array([1.0]))
    stats.update(1, np.array([0.0]), np.array([4.0]))
    x = Tensor(np.array([[4.0]]))
    out0 = bn_forward(x, make_affine(1), stats, t=0, train=False)
    np.testing.assert_allclose(out0.data, [[2.0 / np.sqrt(1 + EPSILON)]])
    # t beyond the trained horizon reuses the last timestep's statistics
    out9 = bn_forward(x, make_affine(1), stats, t=9, train=False)
    out1 = bn_forward(x, make_affine(1), stats, t=1, train=False)
    np.testing.assert_allclose(out9.data, out1.data)


def test_bn_eval_before_any_update_raises():
    with pytest.raises(ValueError):
        bn_forward(Tensor(np.ones((2, 1))), make_affine(1), BnRunningStats(1), t=0, train=False)


def test_bn_batch_stats_are_differentiated(rng64):
    # gradient of sum(BN(x)) w.r.t. x is ~0 because the batch mean shifts too;
    # a stop-gradient implementation would give exactly ones instead
    x = Tensor(rng64.standard_normal((6, 3)), requires_grad=True)
    out = bn_forward(x, make_affine(3), BnRunningStats(3), t=0, train=True)
    T.tsum(out).backward()
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-9)


def test_bn_gradient_matches_central_difference(rng64):
    xval = rng64.standard_normal((5, 2))
    aff = make_affine(2)

    def loss(x):
        o = bn_forward(x, aff, BnRunningStats(2), t=0, train=True, update=False)
        return T.tsum(T.mul(o, T.add(o, 0.3)))

    x = Tensor(xval.copy(), requires_grad=True)
    loss(x).backward()
    step = 1e-6
    num = np.zeros_like(xval)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        lp = float(loss(x).data)
        flat[i] = orig - step
        lm = float(loss(x).data)
        flat[i] = orig
        num.reshape(-1)[i] = (lp - lm) / (2 * step)
    np.testing.assert_allclose(x.grad, num, rtol=1e-4, atol=1e-7)


# -- layer norm ------------------------------------------------------------


def test_ln_three_point_oracle():
    # {0, 2, 4}: mean 2, var 8/3, normalized {-1.2247.., 0, +1.2247..}
    x = Tensor(np.array([[0.0, 2.0, 4.0]]))
    out = ln_forward(x, make_affine(3))
    r = 2.0 / np.sqrt(8.0 / 3.0 + EPSILON)
    np.testing.assert_allclose(out.data, [[-r, 0.0, r]], rtol=1e-12)
    assert out.data[0, 2] == pytest.approx(1.2247, abs=1e-3)


def test_ln_is_per_sample(rng64):
    x = rng64.standard_normal((4, 6))
    out = ln_forward(Tensor(x), make_affine(6))
    # each row independently normalized
    for i in range(4):
        row = ln_forward(Tensor(x[i : i + 1]), make_affine(6))
        np.testing.assert_allclose(out.data[i], row.data[0], rtol=1e-10)


def test_ln_spatial_uses_all_positions(rng64):
    x = rng64.standard_normal((2, 3, 4, 4))
    out = ln_forward(Tensor(x), make_affine(3))
    np.testing.assert_allclose(out.data.mean(axis=(1, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=(1, 2, 3)), 1.0, atol=1e-4)


def test_ln_batch_independence(rng64):
    # adding more samples to the batch cannot change an existing sample's output
    x = rng64.standard_normal((1, 5))
    big = np.concatenate([x, 100 * np.ones((3, 5))])
    a = ln_forward(Tensor(x), make_affine(5)).data[0]
    b = ln_forward(Tensor(big), make_affine(5)).data[0]
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_ln_single_activation_raises():
    with pytest.raises(T.ShapeError):
        ln_forward(Tensor(np.ones((3, 1))), make_affine(1))


# -- affine params ---------------------------------------------------------


def test_affine_init_values():
    aff = AffineParams(4, with_beta=True, beta_init=-2.0)
    np.testing.assert_array_equal(aff.gamma.data, np.ones(4))
    np.testing.assert_array_equal(aff.beta.data, np.full(4, -2.0))
    no_beta = AffineParams(4, with_beta=False)
    assert no_beta.beta is None
    assert set(no_beta.params("p")) == {"p.gamma"}


# -- ema -------------------------------------------------------------------


def test_ema_hand_recursion():
    # alpha=0.5 on ones from mu0=0: 0.5, 0.75, 0.875
    np.testing.assert_allclose(ema([1.0, 1.0, 1.0], 0.5), [0.5, 0.75, 0.875])


def test_ema_alpha_limits():
    xs = [3.0, 1.0, 4.0]
    np.testing.assert_allclose(ema(xs, 1.0), xs)  # alpha=1 tracks the input
    np.testing.assert_allclose(ema(xs, 0.0, mu0=7.0), [7.0, 7.0, 7.0])  # alpha=0 frozen


def test_ema_rejects_bad_alpha():
    with pytest.raises(ValueError):
        ema([1.0], 1.5)


@given(st.floats(0.01, 0.99), st.lists(st.floats(-5, 5), min_size=1, max_size=30))
@settings(max_examples=50, deadline=None)
def test_ema_stays_within_input_hull(alpha, xs):
    lo, hi = min(xs + [0.0]), max(xs + [0.0])
    out = ema(xs, alpha)
    assert all(lo - 1e-9 <= v <= hi + 1e-9 for v in out)


@given(st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_ema_constant_input_converges_geometrically(alpha):
    out = ema([1.0] * 50, alpha)
    # closed form: 1 - (1-alpha)^t
    np.testing.assert_allclose(out, 1.0 - (1.0 - alpha) ** np.arange(1, 51), rtol=1e-9)
