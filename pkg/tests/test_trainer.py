import numpy as np
import pytest

from sparsefuse.backbone import DepthModel, ModelConfig
from sparsefuse.errors import ConfigurationError, NumericAbort
from sparsefuse.scene_gen import generate_frame
from sparsefuse.trainer import Adam, TrainConfig, Trainer, grad_check, train, train_pair


@pytest.fixture(scope="module")
def frames():
    return [generate_frame(s, 32, 64) for s in range(8)]


def _params(model):
    return {k: v.copy() for k, v in model.named_parameters()}


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(steps=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(steps=5, pretrain_steps=6)
    with pytest.raises(ConfigurationError):
        TrainConfig(ratio_low=0.1, ratio_high=0.05)


def test_adam_first_step_is_lr_times_sign():
    class One:
        def __init__(self):
            self.p = np.array([1.0, -2.0, 3.0])
            self.g = np.array([0.5, -4.0, 0.0])

        def named_parameters(self):
            return [("p", self.p)]

        def named_grads(self):
            return [("p", self.g)]

    m = One()
    Adam(0.1).step(m)
    np.testing.assert_allclose(m.p, [0.9, -1.9, 3.0], atol=1e-7)


def test_zero_learning_rate_leaves_parameters(frames):
    model = DepthModel(ModelConfig())
    before = _params(model)
    Trainer(model, frames[:2], TrainConfig(steps=3, pretrain_steps=1, batch_size=2, learning_rate=0.0)).run()
    assert all(np.array_equal(before[k], v) for k, v in model.named_parameters())


def test_training_is_deterministic(frames):
    cfg = TrainConfig(steps=4, pretrain_steps=2, batch_size=2)
    a, la = train(ModelConfig(), cfg, frames[:4])
    b, lb = train(ModelConfig(), cfg, frames[:4])
    assert [(r.ratio, r.loss) for r in la.records] == [(r.ratio, r.loss) for r in lb.records]
    pb = dict(b.named_parameters())
    assert all(np.array_equal(v, pb[k]) for k, v in a.named_parameters())


def test_ratios_uniform_and_in_range(frames):
    cfg = TrainConfig(steps=6, pretrain_steps=0, batch_size=1, learning_rate=0.0)
    log = Trainer(DepthModel(ModelConfig()), frames[:1], cfg).run()
    r = np.array([x.ratio for x in log.records])
    assert np.all((r >= cfg.ratio_low) & (r <= cfg.ratio_high))
    assert len(set(r)) == 6


def test_pretrain_leaves_fusion_parameters_untouched(frames):
    model = DepthModel(ModelConfig())
    before = _params(model)
    Trainer(model, frames[:2], TrainConfig(steps=3, pretrain_steps=3, batch_size=2)).run()
    after = dict(model.named_parameters())
    for k, v in before.items():
        moved = not np.array_equal(v, after[k])
        if k.startswith(("encoder.", "neck.")):
            assert not moved, k
    assert any(not np.array_equal(v, after[k]) for k, v in before.items() if k.startswith("backbone."))
    assert model.fusion_active


@pytest.mark.slow
def test_loss_decreases_on_small_set(frames):
    cfg = TrainConfig(steps=500, pretrain_steps=100, batch_size=4)
    _, log = train(ModelConfig(), cfg, frames)
    losses = log.losses()
    assert len(log) == 500
    assert losses[-50:].mean() < 0.5 * losses[:50].mean()


def test_train_pair_is_symmetric(frames):
    cfg = TrainConfig(steps=2, pretrain_steps=1, batch_size=2)
    pair = train_pair(ModelConfig(), cfg, frames[:2])
    (pa, la), (pb, lb) = pair["partialconv"], pair["interpolation"]
    assert pa.label == "partialconv" and pb.label == "interpolation"
    assert [r.ratio for r in la.records] == [r.ratio for r in lb.records]
    assert pa.num_parameters() == pb.num_parameters()


def test_log_csv(frames, tmp_path):
    _, log = train(ModelConfig(), TrainConfig(steps=3, pretrain_steps=1, batch_size=1), frames[:1])
    path = tmp_path / "log.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,ratio,loss,grad_norm"
    assert len(lines) == 4


def test_numeric_abort_carries_dump(frames):
    model = DepthModel(ModelConfig())
    model.decoder.head.params["bias"][:] = np.nan
    with pytest.raises(NumericAbort) as info:
        Trainer(model, frames[:1], TrainConfig(steps=1, pretrain_steps=0, batch_size=1)).run()
    assert info.value.dump["step"] == 0
    assert info.value.dump["frame_seed"] == frames[0].seed


def test_zero_upstream_gives_zero_grads(frames):
    f = frames[0]
    model = DepthModel(ModelConfig())
    from sparsefuse.sparsifier import sample_mask, sparsify
    s = sparsify(f.gt, sample_mask(32, 64, 0.05, 0, allowed=f.valid))
    model.zero_grad()
    model.forward(f.rgb, s)
    model.backward(np.zeros((32, 64)))
    assert all(np.all(g == 0) for _, g in model.named_grads())


@pytest.fixture(scope="module")
def checked(frames):
    model = DepthModel(ModelConfig())
    rng = np.random.default_rng(0)
    for b in model.neck.blocks:
        b.bn.params["gamma"][:] = 0.5
    model.scale_head.fc2.params["weight"][:] = 0.05 * rng.normal(size=(1, 32))
    buffers = {k: v.copy() for k, v in model.named_buffers()}
    report = grad_check(model, frames[0], n_params=60, h=1e-5, seed=3)
    return model, buffers, report


def test_grad_check_accuracy(checked):
    _, _, report = checked
    assert len(report.entries) >= 60
    assert report.max_rel_error <= 1e-3
    assert report.groups() == ["backbone", "decoder", "encoder", "neck", "scale_head"]
    assert "max relative error" in report.summary()


def test_grad_check_never_probes_masks_and_restores_buffers(checked):
    model, buffers, report = checked
    params = dict(model.named_parameters())
    assert all(e.name in params for e in report.entries + report.skipped)
    assert not any("mask" in e.name for e in report.entries)
    assert all(np.array_equal(buffers[k], v) for k, v in model.named_buffers())
