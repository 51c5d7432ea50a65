import math

import numpy as np
import pytest
from oracles import central_difference, discrete_cr, discrete_mi, gradient_agrees, naive_cond_stats

from crreg import (
    cond_stats,
    correlation_ratio,
    cr_loss,
    default_config,
    eval_timed,
    make_config,
    mi_loss,
    mutual_information,
)


def test_constant_y_gives_flat_bin_means(rng):
    x = rng.random((6, 6, 6))
    cfg = default_config(x)
    st = cond_stats(x, np.full(x.shape, 0.7), cfg)
    occupied = st.bin_mass > 1e-6
    assert np.allclose(st.bin_means[occupied], 0.7, rtol=1e-9)
    assert st.var_cond_mean == pytest.approx(0.0, abs=1e-20)


def test_two_clusters_are_fully_explained():
    x = np.where(np.arange(64).reshape(4, 4, 4) % 2 == 0, 0.2, 0.8)
    y = np.where(x < 0.5, 1.0, 3.0)
    st = cond_stats(x, y, make_config(0.0, 1.0, 32, 0.25))
    assert st.var_y == pytest.approx(1.0, rel=1e-15)
    assert st.var_cond_mean == pytest.approx(st.var_y, rel=1e-9)


def test_cond_stats_match_naive_loop(rng):
    x = rng.random((8, 8, 8))
    y = rng.random((8, 8, 8)) + x
    cfg = default_config(x)
    st = cond_stats(x, y, cfg)
    means, mass, var_cond, var_y = naive_cond_stats(x, y, cfg)
    assert abs(st.var_cond_mean - var_cond) <= 1e-12
    assert st.var_y == pytest.approx(var_y, rel=1e-12)
    assert np.allclose(st.bin_mass, mass, rtol=1e-10)
    occupied = mass > 1e-8
    assert np.allclose(st.bin_means[occupied], means[occupied], rtol=1e-9)
    assert st.mean_x == pytest.approx(x.mean(), rel=1e-14)
    assert st.var_x == pytest.approx(x.var(), rel=1e-12)


def test_total_variance_bound(rng):
    for _ in range(20):
        x = rng.random((5, 5, 5))
        y = rng.standard_normal((5, 5, 5)) + rng.uniform(0, 3) * np.cos(4 * x)
        st = cond_stats(x, y, default_config(x, 16, rng.uniform(0.1, 3)))
        assert 0 <= st.var_cond_mean <= st.var_y + 1e-9


def test_self_dependence_approaches_one():
    levels = np.linspace(0.0, 1.0, 64)
    x = np.tile(levels, 8).reshape(8, 8, 8)
    e = correlation_ratio(x, x, default_config(x, 32, 0.25))
    assert e.value > 0.99


def test_constant_y_is_degenerate(rng):
    x = rng.random((4, 4, 4))
    e = correlation_ratio(x, np.ones_like(x), default_config(x))
    assert e.value == 0.0 and e.degenerate
    assert not e.grad_wrt_first.any() and not e.grad_wrt_second.any()


def test_independent_noise_matches_discrete_oracle(rng):
    x = rng.random((16, 16, 16))
    y = rng.random((16, 16, 16))
    e = correlation_ratio(x, y, default_config(x, 32))
    reference = discrete_cr(x, y, 32, x.min(), x.max())
    assert e.value < 0.15
    assert abs(e.value - reference) < 0.05


def test_soft_equals_discrete_on_bin_centers(rng):
    cfg = make_config(0.0, 1.0, 16, bandwidth_scale=1 / 8)
    x = cfg.bin_centers[rng.integers(0, 16, size=(8, 8, 8))]
    y = np.sin(5 * x) + 0.3 * rng.random(x.shape)
    soft = correlation_ratio(x, y, cfg).value
    hard = discrete_cr(x, y, 16, 0.0, 1.0)
    assert abs(soft - hard) < 1e-3


def test_dims_must_match():
    cfg = make_config(0.0, 1.0)
    with pytest.raises(ValueError, match="dims"):
        correlation_ratio(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)), cfg)
    with pytest.raises(ValueError, match="dims"):
        mutual_information(np.zeros((2, 2, 2)), np.zeros((3, 2, 2)), cfg, cfg)


def test_self_registration_loss(rng):
    x = rng.random((8, 8, 8))
    cfg = default_config(x, 32, 0.25)
    assert cr_loss(x, x, cfg, cfg).value <= -0.99


def test_both_constant_loss_is_zero():
    c = np.full((3, 3, 3), 2.0)
    cfg = make_config(0.0, 4.0)
    e = cr_loss(c, c, cfg, cfg)
    assert e.value == 0.0 and e.degenerate


def test_loss_symmetry(rng):
    a = rng.random((6, 6, 6))
    b = a**2 + 0.1 * rng.random(a.shape)
    ca, cb = default_config(a), default_config(b)
    assert cr_loss(a, b, ca, cb).value == pytest.approx(cr_loss(b, a, cb, ca).value, abs=1e-12)
    assert mutual_information(a, b, ca, cb).value == pytest.approx(
        mutual_information(b, a, cb, ca).value, abs=1e-12)


def test_mi_independent_is_small(rng):
    x = rng.random((16, 16, 16))
    y = rng.permutation(x.ravel()).reshape(x.shape)
    cfg = default_config(x)
    mi = mutual_information(x, y, cfg, cfg).value
    reference = discrete_mi(x, y, 32, (x.min(), x.max()), (y.min(), y.max()), bias_correct=True)
    assert mi < 0.1
    assert abs(mi - reference) < 0.05


def test_mi_of_identical_images_is_marginal_entropy(rng):
    cfg = make_config(0.0, 1.0, 16, bandwidth_scale=1 / 8)
    x = cfg.bin_centers[rng.integers(0, 16, size=(10, 10, 10))]
    p = np.bincount(np.searchsorted(cfg.bin_centers, x.ravel()), minlength=16) / x.size
    entropy = -sum(q * math.log(q) for q in p if q > 0)
    mi_self = mutual_information(x, x, cfg, cfg).value
    assert mi_self == pytest.approx(entropy, abs=1e-3)
    for f in (lambda v: v**2, lambda v: 1 - v, lambda v: np.sin(np.pi * v)):
        y = f(x)
        assert mi_self >= mutual_information(x, y, cfg, default_config(y, 16, 1 / 8)).value - 1e-6


def test_mi_loss_is_negated(rng):
    x = rng.random((4, 4, 4))
    y = x**2
    cx, cy = default_config(x), default_config(y)
    a = mutual_information(x, y, cx, cy)
    b = mi_loss(x, y, cx, cy)
    assert b.value == -a.value
    assert np.array_equal(b.grad_wrt_second, -a.grad_wrt_second)


@pytest.mark.parametrize("which", ["eta", "cr", "mi"])
def test_gradients_match_central_differences(rng, which):
    x = rng.random((6, 6, 6))
    y = np.cos(3 * x) + 0.2 * rng.random(x.shape)
    cx, cy = make_config(-0.1, 1.1), make_config(-1.2, 1.4)
    fn = {
        "eta": lambda: correlation_ratio(x, y, cx),
        "cr": lambda: cr_loss(x, y, cx, cy),
        "mi": lambda: mutual_information(x, y, cx, cy),
    }[which]
    e = fn()
    for _ in range(15):
        idx = tuple(rng.integers(0, 6, 3))
        for arr, grad in ((x, e.grad_wrt_first), (y, e.grad_wrt_second)):
            numeric = central_difference(lambda: fn().value, arr, idx)
            assert gradient_agrees(grad[idx], numeric), (idx, grad[idx], numeric)


def test_timed_single_repeat_matches_untimed(rng):
    x = rng.random((8, 8, 8))
    y = x**2
    cx, cy = default_config(x), default_config(y)
    for name, fn in (("cr", cr_loss), ("mi", mi_loss)):
        e, seconds = eval_timed(name, x, y, cx, cy, repeats=1)
        assert e.value == fn(x, y, cx, cy).value
        assert math.isfinite(seconds) and seconds >= 0


def test_timed_rejects_zero_repeats(rng):
    x = rng.random((4, 4, 4))
    cfg = default_config(x)
    with pytest.raises(ValueError):
        eval_timed("cr", x, x, cfg, cfg, repeats=0)
