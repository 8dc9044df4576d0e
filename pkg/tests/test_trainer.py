import numpy as np
import pytest

from vidseg import synth, trainer
from vidseg.trainer import TrainConfig


def tiny_spec(**kw):
    base = dict(classes=4, videos_per_class=4, frames=12, height=16, width=16,
                untrimmed=True, seed=2)
    base.update(kw)
    return synth.DatasetSpec(**base)


def tiny_config(**kw):
    base = dict(dataset=tiny_spec(), epochs=2, batch_size=4, bank_capacity=64,
                hidden_dim=16, feature_dim=12, embed_dim=8, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_cosine_lr_endpoints_and_midpoint():
    assert trainer.cosine_lr(0, 100, 0.2) == pytest.approx(0.2)
    assert trainer.cosine_lr(100, 100, 0.2) == pytest.approx(0.0, abs=1e-17)
    assert trainer.cosine_lr(50, 100, 0.2) == pytest.approx(0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(epochs=0).validate()
    with pytest.raises(ValueError):
        tiny_config(batch_size=0).validate()
    with pytest.raises(ValueError):
        tiny_config(learning_rate=-0.1).validate()
    with pytest.raises(ValueError):
        tiny_config(use_inter=False, use_intra=False, use_segment=False,
                    use_order=False).validate()
    # the intra loss alone is refused
    with pytest.raises(ValueError):
        tiny_config(use_inter=False, use_intra=True, use_segment=False,
                    use_order=False).validate()
    tiny_config().validate()


def test_order_only_first_step_loss_is_ln4():
    cfg = tiny_config(use_inter=False, use_intra=False, use_segment=False, use_order=True)
    train_videos, _ = synth.generate_dataset(cfg.dataset)
    state = trainer.init_state(cfg, total_steps=4)
    state.query["order_clf.weight"] = np.zeros_like(state.query["order_clf.weight"])
    state.query["order_clf.bias"] = np.zeros_like(state.query["order_clf.bias"])
    batch = trainer.assemble_batch(train_videos, range(4), cfg, 0, 0)
    metrics = trainer.train_step(state, batch, cfg)
    assert metrics["loss_order"] == pytest.approx(np.log(4.0), abs=1e-12)
    assert metrics["loss_inter"] == 0.0
    assert metrics["loss_intra"] == 0.0
    assert metrics["loss_segment"] == 0.0


def test_key_momentum_one_freezes_key_params():
    cfg = tiny_config(key_momentum=1.0)
    train_videos, _ = synth.generate_dataset(cfg.dataset)
    state = trainer.init_state(cfg, total_steps=4)
    before = {k: v.tobytes() for k, v in state.key.items()}
    for s in range(2):
        batch = trainer.assemble_batch(train_videos, range(4), cfg, 0, s)
        trainer.train_step(state, batch, cfg)
    assert {k: v.tobytes() for k, v in state.key.items()} == before


def test_zero_lr_keeps_query_but_fills_banks():
    cfg = tiny_config(learning_rate=0.0)
    train_videos, _ = synth.generate_dataset(cfg.dataset)
    state = trainer.init_state(cfg, total_steps=4)
    before = {k: v.tobytes() for k, v in state.query.items()}
    batch = trainer.assemble_batch(train_videos, range(4), cfg, 0, 0)
    trainer.train_step(state, batch, cfg)
    assert {k: v.tobytes() for k, v in state.query.items()} == before
    assert state.bank_inter.fill == 3 * 4  # three frame embeddings per sample
    assert state.bank_segment.fill == 4  # one tuple embedding per sample


def test_disabled_losses_leave_heads_at_init_and_metrics_zero():
    cfg = tiny_config(use_segment=False, use_order=False)
    state, _, _ = trainer.fit(cfg)
    init = trainer.init_state(cfg)
    for name in state.query:
        if name.startswith(("head_segment", "head_order", "order_clf")):
            assert np.array_equal(state.query[name], init.query[name]), name
        elif name.startswith("encoder"):
            assert not np.array_equal(state.query[name], init.query[name]), name
    for row in state.history:
        assert row["loss_segment"] == 0.0
        assert row["loss_order"] == 0.0
        assert row["loss_inter"] > 0.0
    assert state.bank_segment.fill == 0


def test_key_params_only_move_by_momentum():
    # with momentum 0 the key equals the query after every step
    cfg = tiny_config(key_momentum=0.0)
    state, _, _ = trainer.fit(cfg)
    for name in state.query:
        assert np.array_equal(state.key[name], state.query[name])


def test_bank_fill_arithmetic():
    cfg = tiny_config(epochs=3, bank_capacity=1000)
    state, train_videos, _ = trainer.fit(cfg)
    per_epoch = trainer.steps_per_epoch(len(train_videos), cfg.batch_size)
    expected_inter = min(1000, 3 * per_epoch * 3 * cfg.batch_size)
    expected_segment = min(1000, 3 * per_epoch * cfg.batch_size)
    assert state.bank_inter.fill == expected_inter
    assert state.bank_segment.fill == expected_segment
    assert state.step == 3 * per_epoch


def test_single_batch_when_batch_covers_dataset():
    cfg = tiny_config(epochs=1, batch_size=16)  # dataset has 12 train videos
    state, train_videos, _ = trainer.fit(cfg)
    assert len(train_videos) == 12
    assert state.step == 1


def test_fit_is_deterministic():
    cfg = tiny_config()
    s1, _, _ = trainer.fit(cfg)
    s2, _, _ = trainer.fit(cfg)
    for name in s1.query:
        assert s1.query[name].tobytes() == s2.query[name].tobytes()
    assert s1.history == s2.history
    assert s1.bank_inter.negatives_view().tobytes() == s2.bank_inter.negatives_view().tobytes()


def test_loss_decreases_over_training():
    # bank-free objective so the loss scale is comparable across epochs
    cfg = tiny_config(epochs=8, use_inter=False, use_segment=False,
                      use_intra=True, use_order=True)
    state, _, _ = trainer.fit(cfg)
    assert state.history[-1]["loss_total"] < state.history[0]["loss_total"]


def test_frame_source_uniform_mode_runs():
    cfg = tiny_config(frame_source="uniform")
    state, _, _ = trainer.fit(cfg)
    assert state.step == 2 * 3


def test_segment_count_one_trains():
    cfg = tiny_config(segments=1)
    state, _, _ = trainer.fit(cfg)
    assert state.query["order_clf.weight"].shape[0] == 2 * 1 * cfg.embed_dim


def test_pretrain_writes_interval_checkpoints(tmp_path):
    cfg = tiny_config(epochs=4, checkpoint_interval=2)
    checkpoint, metrics, state = trainer.pretrain(cfg, tmp_path)
    assert checkpoint.exists() and metrics.exists()
    assert (tmp_path / "checkpoint_epoch0002.ckpt").exists()
    # the final epoch is covered by the main checkpoint, not duplicated
    assert not (tmp_path / "checkpoint_epoch0004.ckpt").exists()
    assert state.epoch == 4


def test_gradient_suite_passes_on_small_model():
    cfg = tiny_config()
    results = trainer.gradient_suite(cfg, n_seeds=2, probes_per_param=3)
    names = {name for name, _, _ in results}
    assert names == {"inter", "intra", "segment", "order", "total"}
    for name, seed, report in results:
        assert report.passed, f"{name} seed {seed}: {report}"
