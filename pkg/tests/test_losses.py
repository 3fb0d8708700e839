import math
import warnings

import numpy as np
import pytest

import oracles
from relbal.head import DisabledFeatureError, HeadConfig, forward, init_params
from relbal.losses import (
    LossWeights,
    anchor_loss,
    anchor_loss_grad,
    center_loss,
    class_distribution_loss,
    total_loss,
)
from relbal.numerics import InvalidInputError, ShapeError, make_rng
from relbal.train import finite_difference_audit

TINY = HeadConfig(num_classes=3, dim=8, hidden=6, anchors_per_class=2, tokens=2, n_heads=2)


def test_nll_examples():
    eye = np.eye(3)
    assert class_distribution_loss(eye, eye) == 0.0
    assert class_distribution_loss([[0.5, 0.5]], [[1.0, 0.0]]) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(ShapeError):
        class_distribution_loss(np.ones((2, 3)) / 3, np.eye(3))


def test_nll_matches_scalar_and_is_order_free():
    rng = make_rng(0)
    L, Y = rng.dirichlet(np.ones(4), 3), rng.dirichlet(np.ones(4), 3)
    ref = -sum(Y[i, j] * math.log(L[i, j]) for i in range(3) for j in range(4)) / 3
    assert class_distribution_loss(L, Y) == pytest.approx(ref, abs=1e-12)
    perm = [2, 0, 1]
    assert class_distribution_loss(L[perm], Y[perm]) == pytest.approx(ref, abs=1e-12)


def test_nll_floor():
    assert class_distribution_loss([[0.0, 1.0]], [[1.0, 0.0]]) == pytest.approx(-math.log(1e-12))


def test_anchor_loss_examples():
    assert anchor_loss(np.ones((2, 3, 4))) == 0.0
    assert anchor_loss(np.array([[[0.0, 0.0]], [[1.0, 0.0]]])) == pytest.approx(-1.0, abs=1e-15)


def test_anchor_loss_matches_pair_loop():
    a = make_rng(1).standard_normal((2, 2, 5))
    assert anchor_loss(a) == pytest.approx(oracles.anchor_loss(a.tolist()), abs=1e-12)
    b = make_rng(2).standard_normal((4, 3, 6)) * 3
    assert anchor_loss(b) == pytest.approx(oracles.anchor_loss(b.tolist()), abs=1e-12)


def test_anchor_loss_two_point_gradient():
    a, b = np.array([1.0, 2.0]), np.array([-0.5, 0.25])
    g = anchor_loss_grad(np.stack([a, b])[:, None, :])
    np.testing.assert_allclose(g[0, 0], -2 * (a - b), atol=1e-15)
    np.testing.assert_allclose(g[1, 0], -2 * (b - a), atol=1e-15)


def test_anchor_loss_single_anchor_warns():
    with pytest.warns(RuntimeWarning):
        assert anchor_loss(np.zeros((1, 1, 3))) == 0.0


def test_anchor_loss_moves_down_when_anchor_leaves():
    a = make_rng(3).standard_normal((3, 2, 4))
    base = anchor_loss(a)
    assert base <= 0
    moved = a.copy()
    away = moved[0, 0] - np.delete(a.reshape(-1, 4), 0, axis=0).mean(axis=0)
    moved[0, 0] += 0.5 * away
    assert anchor_loss(moved) < base


def test_center_loss_examples():
    anchors = np.array([[[0.0, 0.0], [5.0, 5.0]], [[2.0, 0.0], [9.0, 9.0]]])
    assert center_loss([[5.0, 5.0]], [0], anchors) == 0.0
    assert center_loss([[0.0, 2.0]], [0], anchors) == pytest.approx(4.0)
    with pytest.raises(DisabledFeatureError):
        center_loss([[0.0, 0.0]], [0], np.zeros((2, 0, 2)))


def test_center_loss_matches_enumeration():
    rng = make_rng(4)
    anchors = rng.standard_normal((3, 3, 4))
    z, y = rng.standard_normal((7, 4)), rng.integers(0, 3, 7)
    ref = oracles.center_loss(z.tolist(), y.tolist(), anchors.tolist())
    assert center_loss(z, y, anchors) == pytest.approx(ref, abs=1e-12)
    assert center_loss(z, y, anchors) >= 0


def test_total_is_weighted_sum():
    params = init_params(TINY, make_rng(5))
    rng = make_rng(6)
    w = LossWeights(0.7, 0.3, 0.2)
    rep = total_loss(rng.standard_normal((5, 8)), rng.integers(0, 3, 5), params, w, rng=make_rng(1))
    assert rep.total == w.cls * rep.cls + w.anchor * rep.anchor + w.center * rep.center
    assert rep.gradient.shape == (params.num_parameters(),)


def test_total_reduces_to_plain_nll():
    cfg = HeadConfig(num_classes=3, dim=8, hidden=6, anchors_per_class=0, tokens=2, n_heads=2)
    params = init_params(cfg, make_rng(0))
    params.params["attn.wout"][:] = 0.0
    E, y = make_rng(1).standard_normal((4, 8)), np.array([0, 2, 1, 1])
    rep = total_loss(E, y, params, LossWeights(1, 0, 0), mode="eval")
    l = forward(E, params)["l"]
    assert rep.total == pytest.approx(-np.mean(np.log(l[np.arange(4), y])), abs=1e-12)


def test_total_rejects_bad_inputs():
    params = init_params(TINY, make_rng(0))
    with pytest.raises(InvalidInputError):
        total_loss(np.zeros((0, 8)), np.zeros(0, int), params, mode="eval")
    with pytest.raises(ShapeError):
        total_loss(np.zeros((2, 8)), [0, 1], params, targets=np.ones((2, 4)) / 4, mode="eval")
    with pytest.raises(InvalidInputError):
        LossWeights(0, 0, 0)


@pytest.mark.parametrize("cfg", [
    TINY,
    HeadConfig(num_classes=3, dim=8, hidden=6, anchors_per_class=0, tokens=2, n_heads=2),
    HeadConfig(num_classes=3, dim=8, hidden=6, anchors_per_class=2, tokens=1, n_heads=2),
    HeadConfig(num_classes=3, dim=8, input_dim=5, hidden=6, anchors_per_class=2, tokens=2, n_heads=2),
])
def test_gradient_matches_finite_differences(cfg):
    rng = make_rng(7)
    params = init_params(cfg, rng)
    E = rng.standard_normal((4, cfg.in_dim))
    y = rng.integers(0, 3, 4)
    rep = finite_difference_audit(params, E, y, LossWeights(1.0, 0.3, 0.2), seed=3)
    assert rep.passed, (rep.max_rel_error, rep.worst_name)


def test_gradient_with_smoothed_targets():
    rng = make_rng(8)
    params = init_params(TINY, rng)
    E, y = rng.standard_normal((4, 8)), np.array([0, 1, 2, 0])
    targets = np.full((4, 3), 0.05) + 0.85 * np.eye(3)[y]
    rep = finite_difference_audit(params, E, y, targets=targets, seed=1)
    assert rep.passed, (rep.max_rel_error, rep.worst_name)


def test_losses_do_not_mutate_params():
    params = init_params(TINY, make_rng(9))
    before = params.flat().copy()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        total_loss(make_rng(1).standard_normal((4, 8)), [0, 1, 2, 0], params, rng=make_rng(2))
    assert np.array_equal(params.flat(), before)
