"""Training loop: on-the-fly haze generation, validation, early stopping,
checkpointing.

Per epoch the hazy samples are regenerated (fresh illumination draws) and
shuffled deterministically; validation always regenerates the same fixed-seed
sample set, so its loss is comparable across epochs.  Early stopping requires
both a converged train loss and `patience` epochs without validation
improvement.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericError
from .network import BaselineModel, ModelConfig, ModelWeights, build_model, init_weights
from .ops import mse_loss
from .optim import adam_step
from .synthesis import HazeParams, HazySample, SceneSource, epoch_stream
from .tensor import Tensor

CKPT_MAGIC = b"HZC1"
_VAL_STREAM_TAG = 0x56414C  # distinguishes the validation stream's seed


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 7
    max_epochs: int = 200
    convergence_window: int = 3
    convergence_threshold: float = 1e-3
    seed: int = 0
    betas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4)
    hue: tuple[float, float] = (0.0, 1.0)
    saturation: tuple[float, float] = (0.0, 0.5)
    value: tuple[float, float] = (0.6, 1.0)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("train.batch_size: must be >= 1")
        if self.patience < 1:
            raise ConfigError("train.patience: must be >= 1")
        if self.convergence_threshold <= 0:
            raise ConfigError("train.convergence_threshold: must be > 0")
        if self.seed < 0:
            raise ConfigError("train.seed: must be >= 0")

    def haze_params(self) -> list[HazeParams]:
        return [
            HazeParams(beta=b, hue=self.hue, saturation=self.saturation, value=self.value)
            for b in self.betas
        ]


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    best_val_loss: float = float("inf")
    best_val_epoch: int = -1
    epochs_since_best: int = 0
    train_loss_history: list[float] = field(default_factory=list)
    val_loss_history: list[float] = field(default_factory=list)
    rng_descriptor: dict = field(default_factory=dict)


def early_stop_decision(state: TrainState, config: TrainConfig) -> bool:
    """Stop iff train loss has converged AND validation stagnated, or at max epochs."""
    if state.epoch >= config.max_epochs:
        return True
    hist = state.train_loss_history
    w = config.convergence_window
    if len(hist) >= w:
        window = hist[-w:]
        hi = max(window)
        converged = hi > 0 and (hi - min(window)) / hi < config.convergence_threshold
    else:
        converged = False
    return converged and state.epochs_since_best >= config.patience


def _batch_tensors(samples: list[HazySample]) -> tuple[Tensor, Tensor, np.ndarray]:
    hazy = np.stack([s.hazy.transpose(2, 0, 1) for s in samples])
    clean = np.stack([s.clean.transpose(2, 0, 1) for s in samples])
    illum = np.stack([s.illumination for s in samples])
    return Tensor(hazy), Tensor(clean), illum


def _forward_loss(model, batch: tuple[Tensor, Tensor, np.ndarray]) -> Tensor:
    hazy, clean, illum = batch
    if isinstance(model, BaselineModel):
        pred = model.forward(hazy, illum)
    else:
        pred = model.forward(hazy).prediction
    return mse_loss(pred, clean)


def _val_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, _VAL_STREAM_TAG]).generate_state(1)[0])


def evaluate_loss(model, sources, params, seed: int, batch_size: int) -> float:
    """Mean MSE over the fixed-seed validation stream."""
    total = 0.0
    count = 0
    batch: list[HazySample] = []
    for sample in epoch_stream(sources, params, seed, epoch_index=0, shuffle=False):
        batch.append(sample)
        if len(batch) == batch_size:
            total += _forward_loss(model, _batch_tensors(batch)).item() * len(batch)
            count += len(batch)
            batch = []
    if batch:
        total += _forward_loss(model, _batch_tensors(batch)).item() * len(batch)
        count += len(batch)
    return total / count


def train(
    model_config: ModelConfig,
    train_sources: list[SceneSource],
    val_sources: list[SceneSource],
    config: TrainConfig,
    out_dir,
    resume_path=None,
    log_fn=None,
) -> tuple[ModelWeights, TrainState]:
    """Run the optimization loop; returns the best-validation weights and state.

    Writes train_log.jsonl (with wall time), loss_trace.csv (deterministic),
    best.ckpt and last.ckpt under out_dir.
    """
    if not train_sources:
        raise ConfigError("data: empty training source set")
    if not val_sources:
        raise ConfigError("data: empty validation source set")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params_list = config.haze_params()
    val_seed = _val_seed(config.seed)

    if resume_path is not None:
        weights, adam_arrays, step_count, state = load_checkpoint(resume_path, model_config)
        model = build_model(model_config, weights)
        model.params.import_state(adam_arrays, step_count)
        log_mode = "a"
    else:
        model = build_model(model_config, init_weights(model_config, config.seed))
        state = TrainState(rng_descriptor={"seed": config.seed, "val_seed": val_seed})
        log_mode = "w"

    log_path = out_dir / "train_log.jsonl"
    trace_path = out_dir / "loss_trace.csv"
    log_f = open(log_path, log_mode)
    trace_f = open(trace_path, log_mode)
    if log_mode == "w":
        trace_f.write("epoch,train_loss,val_loss\n")

    try:
        while not early_stop_decision(state, config):
            epoch = state.epoch
            t0 = time.monotonic()
            total = 0.0
            count = 0
            batch: list[HazySample] = []

            def run_batch(batch):
                nonlocal total, count
                loss = _forward_loss(model, _batch_tensors(batch))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} step {state.step} "
                        f"(seed {config.seed}, first sample {batch[0].sample_id})"
                    )
                loss.backward()
                adam_step(model.params, config.learning_rate, config.beta1, config.beta2)
                total += value * len(batch)
                count += len(batch)
                state.step += 1

            for sample in epoch_stream(train_sources, params_list, config.seed, epoch):
                batch.append(sample)
                if len(batch) == config.batch_size:
                    run_batch(batch)
                    batch = []
            if batch:  # keep the last incomplete batch
                run_batch(batch)

            train_loss = total / count
            val_loss = evaluate_loss(model, val_sources, params_list, val_seed, config.batch_size)
            state.epoch += 1
            state.train_loss_history.append(train_loss)
            state.val_loss_history.append(val_loss)
            if val_loss < state.best_val_loss:
                state.best_val_loss = val_loss
                state.best_val_epoch = state.epoch
                state.epochs_since_best = 0
                save_checkpoint(out_dir / "best.ckpt", model, state, model_config)
            else:
                state.epochs_since_best += 1
            save_checkpoint(out_dir / "last.ckpt", model, state, model_config)

            wall_ms = int((time.monotonic() - t0) * 1000)
            record = {
                "epoch": state.epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "wall_ms": wall_ms,
            }
            log_f.write(json.dumps(record) + "\n")
            log_f.flush()
            trace_f.write(f"{state.epoch},{train_loss:.9e},{val_loss:.9e}\n")
            trace_f.flush()
            if log_fn is not None:
                log_fn(
                    f"epoch {state.epoch}: train_loss={train_loss:.6f} "
                    f"val_loss={val_loss:.6f} ({wall_ms} ms)"
                )
    finally:
        log_f.close()
        trace_f.close()

    best_weights, _, _, _ = load_checkpoint(out_dir / "best.ckpt", model_config)
    return best_weights, state


# -- checkpoint files ---------------------------------------------------------------


def save_checkpoint(path, model, state: TrainState, model_config: ModelConfig):
    """Readable JSON header, then HZW1 weights, then Adam-state tensors."""
    from .network import named_arrays_to_bytes

    header = {
        "format": "HZC1",
        "config_hash": model_config.config_hash(),
        "epoch": state.epoch,
        "step": state.step,
        "best_val_loss": state.best_val_loss,
        "best_val_epoch": state.best_val_epoch,
        "epochs_since_best": state.epochs_since_best,
        "train_loss_history": state.train_loss_history,
        "val_loss_history": state.val_loss_history,
        "rng_descriptor": state.rng_descriptor,
        "adam_step_count": model.params.step_count,
    }
    weights = model.export_weights()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        header_bytes = (json.dumps(header) + "\n").encode("utf-8")
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(named_arrays_to_bytes(weights.tensors, weights.normalization))
        f.write(named_arrays_to_bytes(model.params.export_state()))
    tmp.replace(path)


def load_checkpoint(path, model_config: ModelConfig):
    """Returns (weights, adam arrays, adam step count, TrainState)."""
    from .network import _check_tensor_bag, declared_shapes, named_arrays_from_bytes

    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    try:
        (hlen,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: corrupt checkpoint header ({e})") from e
    if header.get("config_hash") != model_config.config_hash():
        raise FormatError(
            f"{path}: checkpoint config hash {header.get('config_hash')} does not match "
            f"the requested model config {model_config.config_hash()}"
        )
    pos = 8 + hlen
    weights_raw, normalization, pos = named_arrays_from_bytes(blob, pos, str(path))
    adam_raw, _, pos = named_arrays_from_bytes(blob, pos, str(path))
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")

    expected = declared_shapes(model_config)
    _check_tensor_bag(weights_raw, expected)
    weights = ModelWeights(
        tensors={name: weights_raw[name].reshape(expected[name]) for name in expected},
        normalization=normalization,
    )
    state = TrainState(
        epoch=header["epoch"],
        step=header["step"],
        best_val_loss=header["best_val_loss"],
        best_val_epoch=header["best_val_epoch"],
        epochs_since_best=header["epochs_since_best"],
        train_loss_history=list(header["train_loss_history"]),
        val_loss_history=list(header["val_loss_history"]),
        rng_descriptor=dict(header["rng_descriptor"]),
    )
    return weights, adam_raw, int(header["adam_step_count"]), state
