import numpy as np
import pytest

from crreg import PhantomSpec, dice, jacobian_det, make_phantom, warp
from crreg.metrics import warp_labels
from crreg.phantom import REMAPS, PhantomError, _random_field, invert_field
from crreg.transform import identity_grid, sample_trilinear

SMALL = dict(dims=(16, 16, 16), deformation_amplitude=1.5, deformation_smoothness=3.0)


def test_same_seed_same_bytes():
    a = make_phantom(PhantomSpec(seed=5, **SMALL))
    b = make_phantom(PhantomSpec(seed=5, **SMALL))
    for x, y in zip(a, b):
        arr_x = getattr(x, "data", getattr(x, "vectors", getattr(x, "labels", None)))
        arr_y = getattr(y, "data", getattr(y, "vectors", getattr(y, "labels", None)))
        assert arr_x.tobytes() == arr_y.tobytes()


def test_different_seed_differs():
    a = make_phantom(PhantomSpec(seed=1, **SMALL))
    b = make_phantom(PhantomSpec(seed=2, **SMALL))
    assert not np.array_equal(a.fixed.data, b.fixed.data)


@pytest.mark.parametrize("remap", sorted(REMAPS))
def test_zero_amplitude_is_pure_remap(remap):
    ph = make_phantom(PhantomSpec(dims=(12, 12, 12), deformation_amplitude=0.0, remap=remap))
    assert not ph.truth.vectors.any()
    assert np.array_equal(ph.moving.data, REMAPS[remap](ph.fixed.data))
    assert np.array_equal(ph.labels_moving.labels, ph.labels_fixed.labels)


def test_fixed_intensities_and_labels(small_phantom):
    f = small_phantom.fixed.data
    assert f.min() >= 0.0 and f.max() <= 1.0
    labels = np.unique(small_phantom.labels_fixed.labels)
    assert len(labels[labels > 0]) >= 3


def test_moving_is_remapped_pullback(small_phantom):
    ph = small_phantom
    pulled = warp(ph.fixed, invert_field(ph.truth.vectors)).warped
    assert np.array_equal(ph.moving.data, pulled ** 2)


def test_labels_follow_truth(small_phantom):
    ph = small_phantom
    before = dice(ph.labels_fixed, ph.labels_moving)[1]
    after = dice(ph.labels_fixed, warp_labels(ph.labels_moving, ph.truth))[1]
    assert after > before


def test_default_truth_is_diffeomorphic(default_phantom):
    det = jacobian_det(default_phantom.truth)
    assert det.min() > 0.1
    amp = np.linalg.norm(default_phantom.truth.vectors, axis=-1).max()
    assert 0.0 < amp <= 3.0 + 1e-9


def test_inverse_composes_to_identity():
    rng = np.random.default_rng(0)
    u = _random_field(rng, (12, 12, 12), 2.0, 3.0)
    v = invert_field(u)
    grid = identity_grid((12, 12, 12))
    # q + v(q) = p with q = p + u(p), checked where q stays inside the box
    q = grid + u
    v_at_q = np.stack([sample_trilinear(v[..., c], q)[0] for c in range(3)], axis=-1)
    inside = np.all((q >= 0) & (q <= 11), axis=-1)
    assert np.abs(q + v_at_q - grid)[inside].max() < 0.05


def test_impossible_jacobian_bound_raises(monkeypatch):
    import crreg.phantom as phantom

    monkeypatch.setattr(phantom, "MIN_JACOBIAN", 2.0)
    with pytest.raises(PhantomError, match="rescalings"):
        phantom.make_phantom(PhantomSpec(**SMALL))


def test_unknown_remap():
    with pytest.raises(ValueError, match="remap"):
        make_phantom(PhantomSpec(dims=(8, 8, 8), remap="cubic"))
