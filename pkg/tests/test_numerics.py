import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relbal.numerics import (
    InvalidInputError,
    ShapeError,
    euclidean_distance,
    make_rng,
    pairwise_distances,
    softmax,
    spawn_seeds,
    stable_log,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = st.integers(1, 12).flatmap(lambda n: arrays(np.float64, n, elements=finite))


def test_softmax_symmetric():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)


def test_softmax_analytic():
    np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_large_logits_match_arbitrary_precision():
    mpmath.mp.dps = 50
    logits = [1000.0, 0.0]
    denom = mpmath.exp(1000) + mpmath.exp(0)
    expected = [float(mpmath.exp(1000) / denom), float(mpmath.exp(0) / denom)]
    out = softmax(logits)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-300)


def test_softmax_temperature():
    np.testing.assert_allclose(softmax([2.0, 0.0], temperature=2.0), softmax([1.0, 0.0]), atol=1e-15)


@pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 1.0]])
def test_softmax_rejects_non_finite(bad):
    with pytest.raises(InvalidInputError):
        softmax(bad)


def test_softmax_rejects_bad_temperature():
    with pytest.raises(InvalidInputError):
        softmax([0.0, 1.0], temperature=0.0)


@given(vectors)
def test_softmax_is_a_distribution(x):
    p = softmax(x)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert abs(p.sum() - 1) < 1e-12
    if np.ptp(x) < 700:  # beyond this exp underflows in float64
        assert np.all(p > 0)


@given(vectors, st.floats(-1e3, 1e3))
def test_softmax_shift_invariant(x, c):
    np.testing.assert_allclose(softmax(x + c), softmax(x), atol=1e-12)


@given(vectors)
def test_softmax_preserves_order(x):
    p = softmax(x)
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(p[order]) >= 0)


def test_stable_log_examples():
    assert stable_log([1.0])[0] == 0.0
    assert stable_log([0.0])[0] == math.log(1e-12)
    np.testing.assert_allclose(stable_log([0.5, 0.5]), [-math.log(2)] * 2, atol=1e-15)
    assert stable_log([0.0], floor=1e-3)[0] == math.log(1e-3)


def test_euclidean_examples():
    assert euclidean_distance([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert euclidean_distance([3.0, 4.0], [0.0, 0.0]) == 5.0


def test_euclidean_matches_scalar_loop():
    rng = make_rng(3)
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    total = 0.0
    for i in range(8):
        total += (a[i] - b[i]) ** 2
    assert abs(euclidean_distance(a, b) - math.sqrt(total)) < 1e-12


def test_euclidean_shape_mismatch():
    with pytest.raises(ShapeError):
        euclidean_distance([1.0, 2.0], [1.0])


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_euclidean_metric_axioms(seed):
    x, y, z = make_rng(seed).standard_normal((3, 6)) * 10
    assert abs(euclidean_distance(x, y) - euclidean_distance(y, x)) < 1e-12
    assert euclidean_distance(x, z) <= euclidean_distance(x, y) + euclidean_distance(y, z) + 1e-9


def test_pairwise_distances_agree():
    rng = make_rng(4)
    x, y = rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
    d = pairwise_distances(x, y)
    for i in range(3):
        for j in range(4):
            assert abs(d[i, j] - euclidean_distance(x[i], y[j])) < 1e-12


def test_rng_reproducible_bytes():
    a = make_rng(2024).random(1000).tobytes()
    b = make_rng(2024).random(1000).tobytes()
    assert a == b
    assert make_rng(2025).random(1000).tobytes() != a


def test_spawned_streams_differ_and_repeat():
    s1 = [make_rng(s).random(4) for s in spawn_seeds(5, 3)]
    s2 = [make_rng(s).random(4) for s in spawn_seeds(5, 3)]
    for a, b in zip(s1, s2):
        assert a.tobytes() == b.tobytes()
    assert s1[0].tobytes() != s1[1].tobytes()
