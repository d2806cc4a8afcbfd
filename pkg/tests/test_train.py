import numpy as np
import pytest

from usamnet.checkpoint import load_checkpoint
from usamnet.data import AugmentConfig
from usamnet.errors import ConfigurationError, NoValidPixelsError
from usamnet.model import ModelConfig, build_model
from usamnet.synthetic import generate_dataset
from usamnet.tensor import Tensor, backward
from usamnet.train import (
    AdamState,
    LossRecord,
    TrainConfig,
    adam_step,
    lr_at_epoch,
    read_loss_log,
    smooth_l1_masked_loss,
    train_epochs,
    write_loss_log,
)

SMALL = dict(width_divisor=8, input_height=32, input_width=32)


# ---------------------------------------------------------------------------
# masked smooth-L1


def _loss(pred, target, valid, beta=1.0):
    return smooth_l1_masked_loss(Tensor(np.asarray(pred, np.float32)), np.asarray(target, np.float32), np.asarray(valid), beta)


def test_loss_zero_residual():
    p = np.full((1, 1, 2, 2), 3.0)
    assert _loss(p, p, np.ones_like(p, bool)).item() == 0.0


@pytest.mark.parametrize("d, expected", [(0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
def test_loss_single_pixel_examples(d, expected):
    pred = np.array([[[[5.0 + d, 100.0]]]])
    target = np.array([[[[5.0, 0.0]]]])
    valid = np.array([[[[True, False]]]])
    assert _loss(pred, target, valid).item() == pytest.approx(expected)


def test_loss_beta():
    # |d| = 1 < beta = 2: 0.5 * 1 / 2
    assert _loss([[[[1.0]]]], [[[[0.0]]]], [[[[True]]]], beta=2.0).item() == pytest.approx(0.25)
    with pytest.raises(ConfigurationError):
        _loss([[[[1.0]]]], [[[[0.0]]]], [[[[True]]]], beta=0.0)


def test_loss_gradient_is_zero_at_invalid_pixels(rng):
    pred = Tensor(rng.uniform(0, 10, (2, 1, 4, 4)).astype(np.float32))
    target = rng.uniform(0, 10, (2, 1, 4, 4)).astype(np.float32)
    valid = rng.random((2, 1, 4, 4)) > 0.5
    pred.requires_grad = True
    loss = smooth_l1_masked_loss(pred, target, valid)
    backward(loss)
    assert np.all(pred.grad[~valid] == 0)
    assert np.any(pred.grad[valid] != 0)
    # perturbing an invalid target pixel leaves the loss unchanged
    t2 = target.copy()
    t2[~valid] += 50.0
    assert smooth_l1_masked_loss(Tensor(pred.data), t2, valid).item() == loss.item()


def test_loss_invariant_to_appended_invalid_pixels(rng):
    pred = rng.uniform(0, 10, (1, 1, 4, 4))
    target = rng.uniform(0, 10, (1, 1, 4, 4))
    valid = rng.random((1, 1, 4, 4)) > 0.3
    base = _loss(pred, target, valid).item()
    pad = lambda a, v: np.concatenate([a, np.full((1, 1, 4, 7), v, dtype=np.asarray(a).dtype)], axis=3)
    assert _loss(pad(pred, 9.0), pad(target, 1.0), pad(valid, False)).item() == pytest.approx(base, rel=1e-6)


def test_loss_without_valid_pixels():
    with pytest.raises(NoValidPixelsError):
        _loss([[[[1.0]]]], [[[[0.0]]]], [[[[False]]]])


def test_loss_shape_mismatch():
    with pytest.raises(ConfigurationError):
        _loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)), np.ones((1, 1, 2, 2), bool))


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0], np.float32))
    state = AdamState.zeros_like([p])
    adam_step([p], [np.zeros(2, np.float32)], state, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_is_lr():
    p = Tensor(np.array([0.0]))
    state = AdamState.zeros_like([p])
    adam_step([p], [np.array([3.0])], state, lr=0.1)
    assert p.data[0] == pytest.approx(-0.1, rel=1e-7)


def test_adam_minimizes_square():
    x = Tensor(np.array([5.0]))
    state = AdamState.zeros_like([x])
    for _ in range(500):
        adam_step([x], [2.0 * x.data], state, lr=0.1)
    assert abs(x.data[0]) < 0.01
    assert state.t == 500


def test_adam_lr_zero_only_updates_state():
    p = Tensor(np.array([1.0, 2.0], np.float32))
    state = AdamState.zeros_like([p])
    adam_step([p], [np.array([0.5, -1.0], np.float32)], state, lr=0.0)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert state.t == 1 and np.any(state.m[0] != 0) and np.any(state.v[0] != 0)


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(2))
    with pytest.raises(ConfigurationError):
        adam_step([p], [np.zeros(3)], AdamState.zeros_like([p]), lr=0.1)


# ---------------------------------------------------------------------------
# schedule and config


def test_lr_schedule_examples():
    cfg = TrainConfig()
    assert lr_at_epoch(cfg, 0) == 0.001
    assert lr_at_epoch(cfg, 1) == pytest.approx(0.0009, rel=1e-12)
    assert lr_at_epoch(cfg, 10) == pytest.approx(3.4868e-4, rel=1e-4)
    with pytest.raises(ConfigurationError):
        lr_at_epoch(cfg, -1)


@pytest.mark.parametrize("kwargs", [{"base_lr": 0.0}, {"lr_decay": 0.0}, {"lr_decay": 1.5}, {"batch_size": 0}, {"steps_per_epoch": 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


def test_train_config_dict_round_trip():
    cfg = TrainConfig(epochs=3, augment=AugmentConfig(jitter_strength=0.2))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_loss_log_round_trip(tmp_path):
    recs = [LossRecord(0, 1, 0.001, 2.5), LossRecord(0, 2, 0.001, 1.0 / 3.0)]
    write_loss_log(recs[:1], tmp_path / "loss.csv")
    write_loss_log(recs[1:], tmp_path / "loss.csv", append=True)
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "epoch,step,lr,loss"
    assert read_loss_log(tmp_path / "loss.csv") == recs


# ---------------------------------------------------------------------------
# training loop


@pytest.fixture(scope="module")
def samples():
    return generate_dataset(4, seed=3, height=32, width=32, max_disparity=6)


def _model():
    return build_model(ModelConfig.for_variant("seg-attn", **SMALL), seed=0)


def _cfg(**kw):
    base = dict(epochs=3, batch_size=2, steps_per_epoch=2, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def _params(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def test_training_is_deterministic(samples):
    a = train_epochs(_model(), samples, _cfg(epochs=5))
    b = train_epochs(_model(), samples, _cfg(epochs=5))
    assert len(a.loss_log) == 10
    assert [r.loss for r in a.loss_log] == [r.loss for r in b.loss_log]
    assert a.loss_log[0].loss != a.loss_log[-1].loss


def test_loss_log_contents(samples):
    res = train_epochs(_model(), samples, _cfg())
    assert [r.step for r in res.loss_log] == list(range(1, 7))
    assert [r.epoch for r in res.loss_log] == [0, 0, 1, 1, 2, 2]
    for r in res.loss_log:
        assert r.lr == lr_at_epoch(_cfg(), r.epoch)
    assert res.checkpoint.epoch == 3 and res.checkpoint.step == 6


@pytest.mark.parametrize("stop_after", [2, 3])
def test_resume_reproduces_uninterrupted_run(samples, tmp_path, stop_after):
    """Stop at an epoch boundary (2 steps) or mid-epoch (3 steps), resume, and compare bit for bit."""
    full_model = _model()
    full = train_epochs(full_model, samples, _cfg())

    first = train_epochs(_model(), samples, _cfg(max_steps=stop_after), checkpoint_dir=tmp_path)
    ckpt = load_checkpoint(tmp_path / "last.ckpt")
    assert ckpt.step == stop_after
    resumed_model = _model()
    rest = train_epochs(resumed_model, samples, _cfg(), resume=ckpt)

    log = first.loss_log + rest.loss_log
    assert [(r.epoch, r.step, r.lr, r.loss) for r in log] == [(r.epoch, r.step, r.lr, r.loss) for r in full.loss_log]
    # lr continues at the checkpoint's epoch
    for r in rest.loss_log:
        assert abs(r.lr - 0.001 * 0.9**r.epoch) <= 1e-12 * r.lr
    assert rest.loss_log[0].step == stop_after + 1
    for n, p in _params(full_model).items():
        np.testing.assert_array_equal(p, _params(resumed_model)[n], err_msg=n)


def test_checkpoint_every_epoch(samples, tmp_path):
    train_epochs(_model(), samples, _cfg(), checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["epoch_001.ckpt", "epoch_002.ckpt", "epoch_003.ckpt", "last.ckpt"]


def test_all_invalid_batches_are_skipped(samples):
    data = [s.copy() for s in samples]
    data[2].valid_mask[...] = False
    data[3].valid_mask[...] = False
    cfg = _cfg(epochs=2, steps_per_epoch=None, shuffle=False, augment=AugmentConfig(top_replace_prob=0.0))
    res = train_epochs(_model(), data, cfg)
    assert res.skipped == [(0, 1), (1, 1)]
    assert [r.step for r in res.loss_log] == [1, 2]


def test_empty_dataset_rejected():
    with pytest.raises(ConfigurationError):
        train_epochs(_model(), [], _cfg())


@pytest.mark.slow
def test_smoothed_loss_is_non_increasing():
    """20-step window means of the 4-sample overfit task never rise."""
    data = generate_dataset(4, seed=0, height=64, width=64)
    model = build_model(ModelConfig.for_variant("seg-attn", width_divisor=8, input_height=64, input_width=64), seed=0)
    cfg = TrainConfig(epochs=30, batch_size=4, steps_per_epoch=10, max_steps=300, seed=0,
                      augment=AugmentConfig(jitter_strength=0.0, top_replace_prob=0.0))
    losses = np.array([r.loss for r in train_epochs(model, data, cfg).loss_log])
    windows = losses.reshape(-1, 20).mean(axis=1)
    assert np.all(np.diff(windows) <= 0), windows
