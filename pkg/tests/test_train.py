import json

import numpy as np
import pytest

from relbal.data import MissingClassError, SyntheticSpec, generate_split
from relbal.head import HeadConfig, init_params
from relbal.losses import LossWeights
from relbal.numerics import InvalidInputError, ShapeError, make_rng
from relbal.train import (
    OptimizerState,
    TrainConfig,
    adam_step,
    finite_difference_audit,
    lr_at,
    predict_labels,
    train,
)

# hand-stepped Adam on f(x) = 1.5 x0^2 + 0.25 x1^2, lr 0.1, from (1, -2)
ADAM_TRACE = [
    (0.9000000003333333, -1.900000001),
    (0.800412228351611, -1.8001664876318761),
    (0.7015862724265686, -1.7006233943434113),
]


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 0.0003
    assert lr_at(10, cfg) == pytest.approx(2.8533e-4, rel=1e-4)
    assert lr_at(5, TrainConfig(gamma=1.0)) == 0.0003
    lrs = [lr_at(e, cfg) for e in range(50)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(InvalidInputError):
        lr_at(-1, cfg)


def test_train_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(gamma=1.5)
    with pytest.raises(InvalidInputError):
        TrainConfig(base_lr=0.0)


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(p, {"w": np.zeros(2)}, OptimizerState.zeros_like(p), 0.1)
    assert np.array_equal(new["w"], p["w"]) and state.step == 1


def test_adam_first_step_is_lr_per_coordinate():
    p = {"w": np.zeros(3)}
    for scale in (1e-3, 1.0, 1e3):
        new, _ = adam_step(p, {"w": np.array([1.0, -1.0, 2.0]) * scale}, OptimizerState.zeros_like(p), 0.01)
        np.testing.assert_allclose(np.abs(new["w"]), 0.01, rtol=1e-5)


def test_adam_trace_matches_hand_stepped_reference():
    p = {"x": np.array([1.0, -2.0])}
    opt = OptimizerState.zeros_like(p)
    for ref in ADAM_TRACE:
        grads = {"x": np.array([3.0, 0.5]) * p["x"]}
        p, opt = adam_step(p, grads, opt, 0.1)
        np.testing.assert_allclose(p["x"], ref, atol=1e-12)
    assert opt.step == 3


def test_adam_shape_mismatch():
    p = {"x": np.zeros(2)}
    with pytest.raises(ShapeError):
        adam_step(p, {"x": np.zeros(3)}, OptimizerState.zeros_like(p), 0.1)


@pytest.fixture(scope="module")
def separable():
    spec = SyntheticSpec(num_classes=4, dim=16, per_class=80, spread=1e-3, separation=2.5, seed=11)
    return generate_split(spec, 50)


def small_cfg(**kw):
    base = dict(epochs=50, batch_size=32, per_group=80, per_class=40, tokens=4, n_heads=2, hidden=16, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs_returns_init(separable):
    tr, te = separable
    cfg = small_cfg(epochs=0)
    res = train(tr, te, cfg)
    ref = init_params(cfg.head_config(4, 16), make_rng(np.random.SeedSequence(3).spawn(3)[0]))
    assert res.history == []
    for name in ref.params:
        assert np.array_equal(res.params.params[name], ref.params[name])


def test_separable_data_is_learned(separable):
    tr, te = separable
    res = train(tr, te, small_cfg(eval_every=10))
    assert res.history[-1]["eval_accuracy"] >= 0.99
    assert res.history[-1]["loss_total"] < res.history[0]["loss_total"]


def test_plain_softmax_baseline_learns(separable):
    tr, te = separable
    res = train(tr, te, small_cfg(anchors=0, weights=LossWeights(1.0, 0.0, 0.0)))
    assert res.history[-1]["eval_accuracy"] >= 0.99
    assert all(h["loss_anchor"] == 0 and h["loss_center"] == 0 for h in res.history)


def test_training_is_bit_reproducible(separable, tmp_path):
    tr, te = separable
    cfg = small_cfg(epochs=4, eval_every=2)
    a = train(tr, te, cfg, log_path=tmp_path / "a.jsonl", checkpoint_path=tmp_path / "a.ckpt")
    b = train(tr, te, cfg, log_path=tmp_path / "b.jsonl", checkpoint_path=tmp_path / "b.ckpt")
    assert a.history == b.history
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    c = train(tr, te, small_cfg(epochs=4, eval_every=2, seed=4))
    assert c.history != a.history


def test_log_records(separable, tmp_path):
    tr, te = separable
    train(tr, te, small_cfg(epochs=3, eval_every=2), log_path=tmp_path / "log.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1, 2]
    assert set(rows[0]) == {"epoch", "lr", "loss_cls", "loss_anchor", "loss_center", "loss_total", "eval_accuracy"}
    assert rows[0]["eval_accuracy"] is None and rows[1]["eval_accuracy"] is not None
    assert rows[2]["eval_accuracy"] is not None
    assert rows[1]["lr"] == pytest.approx(0.0003 * 0.995)


def test_evaluation_leaves_params_alone(separable):
    tr, te = separable
    params = train(tr, te, small_cfg(epochs=1)).params
    before = params.flat().copy(), {k: v.copy() for k, v in params.buffers.items()}
    predict_labels(params, te.embeddings)
    assert np.array_equal(params.flat(), before[0])
    assert all(np.array_equal(params.buffers[k], v) for k, v in before[1].items())


def test_missing_class_propagates(separable):
    tr, te = separable
    partial = tr.subset(np.flatnonzero(tr.labels != 2))
    with pytest.raises(MissingClassError):
        train(partial, te, small_cfg(epochs=1))


def test_mismatched_eval_set(separable):
    tr, _ = separable
    other, _ = generate_split(SyntheticSpec(num_classes=4, dim=8, per_class=5), 5)
    with pytest.raises(ShapeError):
        train(tr, other, small_cfg(epochs=1))


# --- gradient audit ------------------------------------------------------------

def audit_instance(seed=0, **kw):
    cfg = HeadConfig(**{**dict(num_classes=3, dim=8, hidden=6, anchors_per_class=2, tokens=2, n_heads=2), **kw})
    rng = make_rng(seed)
    return init_params(cfg, rng), rng.standard_normal((4, cfg.in_dim)), rng.integers(0, 3, 4)


def zero_anchor_grad(grads):
    grads["anchors"][:] = 0.0
    return grads


def test_audit_passes_on_correct_gradients():
    rep = finite_difference_audit(*audit_instance(1))
    assert rep.passed and rep.max_rel_error < 1e-4 and rep.flagged == []


def test_audit_flags_tampered_anchor_gradient():
    rep = finite_difference_audit(*audit_instance(2), tamper=zero_anchor_grad)
    assert not rep.passed
    assert rep.flagged == ["anchors"]
    assert rep.worst_name == "anchors"


@pytest.mark.parametrize("tamper", [None, zero_anchor_grad])
def test_audit_verdict_is_step_robust(tamper):
    args = audit_instance(3)
    verdicts = {finite_difference_audit(*args, step=h, tamper=tamper).passed for h in (1e-5, 1e-6)}
    assert len(verdicts) == 1
