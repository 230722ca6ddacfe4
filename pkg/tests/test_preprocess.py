import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wnet.data import Sample
from wnet.preprocess import (
    augment_sample,
    deepest_zero_crossing,
    expand_dataset,
    normalize_sample,
    pad_ascan,
    pad_sample,
)


def brute_zero_crossing(a):
    """Scan every index directly; independent of the vectorised version."""
    best = None
    for z in range(len(a)):
        if a[z] == 0 or (z > 0 and a[z - 1] * a[z] < 0):
            best = z
    return best


@pytest.mark.parametrize(
    "ascan, z",
    [([1, 2, -1, -3, 0, 2], 4), ([1, 1, 1], None), ([0, 5], 0), ([3, -1], 1), ([-1, -2, 0, 0], 3)],
)
def test_deepest_zero_crossing(ascan, z):
    assert deepest_zero_crossing(ascan) == z


def test_zero_crossing_needs_two_samples():
    with pytest.raises(ValueError):
        deepest_zero_crossing([1.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=2, max_size=30))
def test_zero_crossing_matches_brute_force(values):
    assert deepest_zero_crossing(values) == brute_zero_crossing(values)


def test_pad_ascan_reflection_example():
    out = pad_ascan(np.array([1, 2, -1, -3, 0, 2], dtype=float), 9)
    assert out.tolist() == [1, 2, -1, -3, 0, 3, 1, -2, -1]


def test_pad_ascan_identity_and_zeros():
    a = np.array([0.5, -1.0, 2.0])
    assert pad_ascan(a, 3).tolist() == a.tolist()
    assert not pad_ascan(np.zeros(5), 11).any()


def test_pad_ascan_no_crossing_zero_fills():
    assert pad_ascan(np.array([1.0, 2.0, 3.0]), 5).tolist() == [1, 2, 3, 0, 0]


def test_pad_ascan_repeats_reflection():
    # first pivot z=2 gives length 5; the result's own deepest crossing (z=4) extends to 9
    a = np.array([1.0, -1.0, 2.0, 3.0])
    out = pad_ascan(a, 9)
    assert out[:3].tolist() == [1, -1, 2]
    assert out[3:5].tolist() == [1, -1]
    z2 = deepest_zero_crossing(out[:5])
    assert z2 == 4
    assert out[5:].tolist() == [-out[3], -out[2], -out[1], -out[0]]


def test_pad_ascan_rejects_short_target():
    with pytest.raises(ValueError):
        pad_ascan(np.ones(4), 3)


@settings(max_examples=300, deadline=None)
@given(st.integers(4, 120), st.floats(1.0, 3.0), st.integers(0, 2**32 - 1))
def test_pad_continuity_property(n, ratio, seed):
    a = np.random.default_rng(seed).standard_normal(n)
    target = int(n * ratio)
    z = deepest_zero_crossing(a)
    q = pad_ascan(a, target)
    assert q.shape == (target,)
    if z is None or target == n:
        return
    assert abs(q[z]) == abs(a[z])
    assert np.abs(np.diff(q[z:])).max() <= np.abs(np.diff(a)).max()


def _sample(rows=6, cols=3, seed=0, native=None):
    rng = np.random.default_rng(seed)
    return Sample(
        "s", "A", rng.standard_normal((rows, cols)).astype(np.float32),
        rng.uniform(0, 1, (rows, cols)).astype(np.float32),
        rng.integers(1, 6, (rows, cols)).astype(np.uint8), native or rows,
    )


def test_pad_sample_592_to_784():
    s = _sample(592, 4)
    p = pad_sample(s, 784)
    assert p.shape == (784, 4)
    assert (p.label[592:] == 0).all()
    assert (p.grey[592:] == 0.0).all()
    assert p.native_rows == 592
    for j in range(4):
        np.testing.assert_array_equal(p.rf[:, j], pad_ascan(s.rf[:, j], 784))


def test_pad_sample_noop_and_error():
    s = _sample(16)
    assert pad_sample(s, 16) is s
    with pytest.raises(ValueError):
        pad_sample(s, 8)


def test_normalize_sample():
    s = _sample()
    rf = s.rf.copy()
    rf[2, 1] = -30000.0
    n = normalize_sample(s.with_(rf=rf))
    assert n.rf[2, 1] == -1.0
    assert np.abs(n.rf).max() == 1.0
    np.testing.assert_array_equal(n.grey, s.grey)
    np.testing.assert_array_equal(normalize_sample(n).rf, n.rf)
    z = s.with_(rf=np.zeros_like(rf))
    assert not normalize_sample(z).rf.any()


def test_augment_flip_involution():
    s = _sample()
    twice = augment_sample(augment_sample(s, True, 1.0), True, 1.0)
    for f in ("rf", "grey", "label"):
        np.testing.assert_array_equal(getattr(twice, f), getattr(s, f))


def test_augment_scaling_and_clamp():
    s = _sample()
    grey = s.grey.copy()
    grey[0, 0], grey[0, 1] = 1.0, 0.95
    s = s.with_(grey=grey)
    assert augment_sample(s, False, 0.8).grey[0, 0] == np.float32(0.8)
    assert augment_sample(s, False, 1.1).grey[0, 1] == 1.0
    np.testing.assert_array_equal(augment_sample(s, False, 0.8).label, s.label)
    with pytest.raises(ValueError):
        augment_sample(s, False, 1.5)


def test_augment_permutes_labels_only():
    s = _sample(8, 5)
    a = augment_sample(s, True, 0.8)
    assert sorted(a.label.ravel()) == sorted(s.label.ravel())
    np.testing.assert_array_equal(a.label, s.label[:, ::-1])


def test_expand_dataset_counts():
    s = _sample()
    assert len(expand_dataset([s], scales=[1.0])) == 2
    out = expand_dataset([s] * 141)
    assert len(out) == 846
    ident = expand_dataset([s])[1]  # (no flip, scale 1.0)
    for f in ("rf", "grey", "label"):
        np.testing.assert_array_equal(getattr(ident, f), getattr(s, f))
