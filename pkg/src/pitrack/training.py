"""Optimization loop, checkpointing, and model evaluation.

Training is plain truncated backpropagation through the recurrence: each
scene is one forward pass with the carried state detached at truncation
boundaries, the sliding-window assignment loss on all frames, and one
backward pass; a batch averages scene gradients in a fixed order before an
adaptive-moment update. Everything is seed-driven and single-threaded, so a
run is bitwise reproducible.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend, losses, metrics, sim
from . import tensor as T
from .recurrent import BaselineModel, ModelConfig, PirnnModel


class TrainingDiverged(RuntimeError):
    """A loss or parameter became non-finite during optimization."""


@dataclass
class TrainConfig:
    train_data: str = "train.jsonl"
    val_data: str = "val.jsonl"
    model: ModelConfig = field(default_factory=ModelConfig)
    model_kind: str = "pirnn"  # "pirnn" or "baseline"
    window: int = 11
    aux_fpit_weight: float = 0.0
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_scenes: int = 8
    truncation: int = 50
    epochs: int = 30
    seed: int = 0
    checkpoint: str = "checkpoint.json"
    log: str = "train_log.csv"
    eval_every: int = 1
    precision: str = "f64"  # "f32" trades test-grade precision for speed

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.model_kind not in ("pirnn", "baseline"):
            raise ValueError(f"unknown model_kind: {self.model_kind!r}")
        if self.precision not in ("f64", "f32"):
            raise ValueError(f"precision must be f64 or f32, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


class AdamState:
    """First and second moment buffers kept alongside a ParamStore."""

    def __init__(self, params: T.ParamStore):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step = 0


def adam_step(params: T.ParamStore, state: AdamState, step_size: float,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
    """One bias-corrected adaptive-moment update over all parameters."""
    state.step += 1
    for name, t in params.items():
        g = t.grad
        if g is None:
            g = np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
        backend.adam_update(t.data, g, state.m[name], state.v[name],
                            step_size, beta1, beta2, epsilon, state.step)


def build_model(cfg: TrainConfig, rng=None, store=None):
    kind = PirnnModel if cfg.model_kind == "pirnn" else BaselineModel
    if store is not None:
        return kind(cfg.model, store=store)
    return kind(cfg.model, rng=rng, dtype=cfg.dtype)


def scene_loss(model, scene, targets, cfg: TrainConfig) -> T.Tensor:
    if isinstance(model, PirnnModel):
        outs, _ = model.forward(scene.detections, truncation=cfg.truncation)
    else:
        outs = model.forward(scene.detections, truncation=cfg.truncation)
    loss = losses.spit_loss(outs, targets, cfg.window)
    if cfg.aux_fpit_weight > 0.0:
        aux = losses.spit_loss(outs, targets, 1)
        loss = T.add(loss, T.affine(aux, cfg.aux_fpit_weight))
    return loss


def _predict(model, scene) -> np.ndarray:
    if isinstance(model, PirnnModel):
        outs, _ = model.forward(scene.detections)
    else:
        outs = model.forward(scene.detections)
    return np.stack([o.data for o in outs])


def _validate_dataset(scenes, cfg: TrainConfig, label: str):
    if not scenes:
        raise sim.DatasetError(f"{label} dataset is empty")
    for scene in scenes:
        if scene.detections is None:
            raise sim.DatasetError(f"{label} scene {scene.index} has no detections")
        if scene.detections.shape[1] != cfg.model.slots:
            raise sim.DatasetError(
                f"{label} scene {scene.index} has {scene.detections.shape[1]} detector "
                f"slots, model expects {cfg.model.slots}"
            )
        if cfg.truncation > scene.frames:
            raise sim.DatasetError(
                f"truncation {cfg.truncation} exceeds scene length {scene.frames}"
            )


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    best_val_loss: float
    best_epoch: int
    epochs_run: int


LOG_HEADER = ["epoch", "step", "train_loss", "val_loss", "val_ids_per_min", "val_mean_err_deg"]


def train(cfg: TrainConfig) -> TrainResult:
    """Run the full loop and retain the best-validation checkpoint."""
    train_scenes = sim.load_scenes(cfg.train_data)
    val_scenes = sim.load_scenes(cfg.val_data)
    _validate_dataset(train_scenes, cfg, "train")
    _validate_dataset(val_scenes, cfg, "val")
    train_targets = [s.targets() for s in train_scenes]
    val_targets = [s.targets() for s in val_scenes]

    model = build_model(cfg, rng=np.random.default_rng([cfg.seed, 0]))
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    adam = AdamState(model.params)

    best_val = math.inf
    best_epoch = -1
    step = 0
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_scenes))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_scenes):
            batch = order[start:start + cfg.batch_scenes]
            model.params.zero_grads()
            batch_loss = 0.0
            for idx in batch:
                loss = scene_loss(model, train_scenes[idx], train_targets[idx], cfg)
                T.backward(T.affine(loss, 1.0 / len(batch)))
                batch_loss += loss.item() / len(batch)
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}")
            adam_step(model.params, adam, cfg.step_size, cfg.beta1, cfg.beta2, cfg.epsilon)
            model.params.check_finite()
            step += 1
            epoch_losses.append(batch_loss)

        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            val_loss, ids_rate, mean_err = _validation_pass(model, val_scenes, val_targets, cfg)
            rows.append([epoch, step, float(np.mean(epoch_losses)), val_loss, ids_rate, mean_err])
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                model.params.save(cfg.checkpoint)

    with open(cfg.log, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for row in rows:
            writer.writerow([row[0], row[1]] + [f"{x:.10g}" for x in row[2:]])
    return TrainResult(
        checkpoint_path=cfg.checkpoint,
        log_path=cfg.log,
        best_val_loss=best_val,
        best_epoch=best_epoch,
        epochs_run=cfg.epochs,
    )


def _validation_pass(model, scenes, targets, cfg: TrainConfig):
    losses_ = []
    reports = []
    for scene, tg in zip(scenes, targets):
        preds = _predict(model, scene)
        losses_.append(losses.spit_loss(list(preds), tg, cfg.window))
        reports.append(metrics.evaluate_scene(preds, scene))
    agg = metrics.aggregate_reports(reports)
    return float(np.mean(losses_)), agg["ids_per_active_min"], agg["mean_error_deg"]


def load_checkpoint(path, cfg: TrainConfig):
    """Rebuild a model from a checkpoint, validating names and shapes."""
    if not os.path.exists(path):
        raise T.CheckpointError(f"checkpoint not found: {path}")
    kind = PirnnModel if cfg.model_kind == "pirnn" else BaselineModel
    schema = kind.schema(cfg.model)
    store = T.ParamStore.load(path, expected_schema=schema, dtype=cfg.dtype)
    return kind(cfg.model, store=store)


def evaluate(cfg: TrainConfig, dataset_path: str, arm: str, checkpoint_path: str | None = None,
             gate_deg: float = 20.0, activity_threshold: float = 0.5):
    """Score one arm on a dataset: the model, the baseline, or raw detections.

    Returns (per-scene reports, aggregate, per-scene prediction arrays).
    """
    scenes = sim.load_scenes(dataset_path)
    if not scenes:
        raise sim.DatasetError(f"dataset is empty: {dataset_path}")
    if arm == "detector":
        predictions = [scene.detections for scene in scenes]
    else:
        eval_cfg = replace(cfg, model_kind=arm)
        model = load_checkpoint(checkpoint_path, eval_cfg)
        predictions = [_predict(model, scene) for scene in scenes]
    reports = [
        metrics.evaluate_scene(pred, scene, gate_deg, activity_threshold)
        for pred, scene in zip(predictions, scenes)
    ]
    return reports, metrics.aggregate_reports(reports), predictions
