"""Training loop: determinism, early stopping, checkpoint/resume round trips."""

import json

import numpy as np
import pytest

from hazelab.errors import FormatError
from hazelab.network import EncoderConfig, Model, ModelConfig, init_weights
from hazelab.ops import mse_loss
from hazelab.optim import adam_step
from hazelab.scenes import procedural_sources
from hazelab.synthesis import HazeParams, epoch_stream
from hazelab.tensor import Tensor
from hazelab.training import (
    TrainConfig,
    TrainState,
    early_stop_decision,
    evaluate_loss,
    load_checkpoint,
    train,
)


def tiny_model_config(kind="full"):
    return ModelConfig(EncoderConfig.preset("tiny"), kind=kind)


def small_train_config(**kw):
    defaults = dict(max_epochs=2, batch_size=4, betas=(0.2, 0.4), seed=9)
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def small_sources():
    return procedural_sources(4, 50, (64, 64)), procedural_sources(2, 60, (64, 64))


class TestEarlyStop:
    def cfg(self):
        return TrainConfig(patience=7, convergence_window=3, convergence_threshold=1e-3)

    def test_continue_when_validation_just_improved(self):
        state = TrainState(epoch=10, epochs_since_best=0,
                           train_loss_history=[0.5] * 10)
        assert early_stop_decision(state, self.cfg()) is False

    def test_continue_while_train_loss_still_drops(self):
        # 7 stagnant validation epochs but train loss falling 5% per epoch
        hist = [0.5 * 0.95**i for i in range(12)]
        state = TrainState(epoch=12, epochs_since_best=7, train_loss_history=hist)
        assert early_stop_decision(state, self.cfg()) is False

    def test_stop_when_both_conditions_hold(self):
        hist = [0.5] * 9 + [0.20000, 0.20001, 0.20000]
        state = TrainState(epoch=12, epochs_since_best=7, train_loss_history=hist)
        assert early_stop_decision(state, self.cfg()) is True

    def test_never_stops_before_patience_epochs(self):
        for epoch in range(1, 7):
            state = TrainState(
                epoch=epoch,
                epochs_since_best=epoch,
                train_loss_history=[0.2] * epoch,
            )
            cfg = self.cfg()
            if epoch < cfg.patience:
                assert early_stop_decision(state, cfg) is False

    def test_max_epochs_is_hard_stop(self):
        state = TrainState(epoch=5, epochs_since_best=0, train_loss_history=[0.1] * 5)
        assert early_stop_decision(state, TrainConfig(max_epochs=5)) is True


class TestLossSanity:
    def test_loss_non_increasing_first_10_steps_on_fixed_batch(self):
        """Learning-rate sanity at lr=1e-4 on one fixed batch."""
        cfg = tiny_model_config()
        model = Model(cfg, init_weights(cfg, 0))
        sources = procedural_sources(4, 20, (64, 64))
        params = [HazeParams.colored(0.3)]
        samples = list(epoch_stream(sources, params, seed=0, epoch_index=0))
        x = Tensor(np.stack([s.hazy.transpose(2, 0, 1) for s in samples]))
        y = Tensor(np.stack([s.clean.transpose(2, 0, 1) for s in samples]))
        losses = []
        for _ in range(10):
            loss = mse_loss(model.forward(x).prediction, y)
            losses.append(loss.item())
            loss.backward()
            adam_step(model.params, lr=1e-4)
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


class TestTrainLoop:
    def test_two_runs_identical_loss_trace(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        for sub in ("a", "b"):
            train(tiny_model_config(), train_srcs, val_srcs, small_train_config(),
                  tmp_path / sub)
        assert (tmp_path / "a" / "loss_trace.csv").read_bytes() == (
            tmp_path / "b" / "loss_trace.csv"
        ).read_bytes()

    def test_log_records_have_expected_fields(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        train(tiny_model_config(), train_srcs, val_srcs,
              small_train_config(max_epochs=1), tmp_path)
        lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert set(record) == {"epoch", "train_loss", "val_loss", "wall_ms"}

    def test_best_checkpoint_reproduces_logged_val_loss(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        config = small_train_config()
        weights, state = train(tiny_model_config(), train_srcs, val_srcs, config, tmp_path)
        model = Model(tiny_model_config(), weights)
        val_seed = state.rng_descriptor["val_seed"]
        loss = evaluate_loss(model, val_srcs, config.haze_params(), val_seed,
                             config.batch_size)
        assert loss == pytest.approx(state.best_val_loss, abs=1e-6)

    def test_resume_matches_uninterrupted_run(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        cfg = tiny_model_config()
        # straight 3-epoch run
        _, straight = train(cfg, train_srcs, val_srcs,
                            small_train_config(max_epochs=3), tmp_path / "full")
        # 2 epochs, then resume for 1 more
        train(cfg, train_srcs, val_srcs, small_train_config(max_epochs=2), tmp_path / "part")
        _, resumed = train(
            cfg, train_srcs, val_srcs, small_train_config(max_epochs=3),
            tmp_path / "part", resume_path=tmp_path / "part" / "last.ckpt",
        )
        assert resumed.epoch == 3
        assert resumed.train_loss_history == straight.train_loss_history
        assert resumed.val_loss_history == straight.val_loss_history

    def test_resume_with_wrong_config_rejected(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        train(tiny_model_config(), train_srcs, val_srcs,
              small_train_config(max_epochs=1), tmp_path)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "last.ckpt", tiny_model_config(kind="baseline"))

    def test_corrupt_checkpoint_rejected(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        train(tiny_model_config(), train_srcs, val_srcs,
              small_train_config(max_epochs=1), tmp_path)
        path = tmp_path / "last.ckpt"
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError):
            load_checkpoint(path, tiny_model_config())

    def test_checkpoint_header_is_readable_json(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        train(tiny_model_config(), train_srcs, val_srcs,
              small_train_config(max_epochs=1), tmp_path)
        blob = (tmp_path / "best.ckpt").read_bytes()
        assert blob[:4] == b"HZC1"
        import struct

        (hlen,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8 : 8 + hlen])
        assert {"epoch", "step", "best_val_loss", "config_hash"} <= set(header)

    def test_baseline_kind_trains(self, tmp_path, small_sources):
        train_srcs, val_srcs = small_sources
        weights, state = train(
            tiny_model_config(kind="baseline"), train_srcs, val_srcs,
            small_train_config(max_epochs=1), tmp_path,
        )
        assert state.epoch == 1
        assert "color.conv1.w" in weights.tensors
        assert weights.tensors["color.conv1.w"].shape == (24, 6, 1, 1)

    def test_validation_uses_distinct_seed(self, small_sources):
        """Validation losses must come from the val stream, not the train one."""
        train_srcs, val_srcs = small_sources
        config = small_train_config()
        val_seed = None
        from hazelab.training import _val_seed

        val_seed = _val_seed(config.seed)
        assert val_seed != config.seed
