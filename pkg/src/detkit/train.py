"""Two-phase overfit trainer for the toy detector.

Phase 1 trains only the neck and head (stem and both residual blocks stay
frozen, their parameters bit-identical); phase 2 fine-tunes everything.
The learning rate follows a cosine schedule over the full epoch range.
Training is deterministic for a fixed seed: dataset generation, parameter
initialization and batch shuffling all draw from one seeded generator, and
every reduction happens in a fixed order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import synth_dataset
from .losses import detection_loss, detection_loss_grad
from .model import ToyNetSpec, backbone_param_names, init_params, net_backward, net_forward
from .optim import AdamWState, adamw_step, cosine_lr
from .tensor import ConfigError, Tensor


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite; carries the epoch and step for diagnosis."""


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 42
    epochs: int = 200
    batch_size: int = 5
    lr_max: float = 5e-3
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    loss_variant: str = "wiou"
    freeze_fraction: float = 0.3
    dataset_count: int = 50
    image_size: int = 64
    num_classes: int = 3
    box_weight: float = 5.0
    obj_weight: float = 2.5
    cls_weight: float = 2.5
    dtype: str = "float64"
    net: ToyNetSpec = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.dataset_count < 1:
            raise ConfigError("epochs must be >= 0, batch size and dataset count >= 1")
        if not 0.0 <= self.freeze_fraction <= 1.0:
            raise ConfigError("freeze fraction must be in [0, 1]")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.net is None:
            object.__setattr__(self, "net", ToyNetSpec(
                image_size=self.image_size, num_classes=self.num_classes))
        if self.net.image_size != self.image_size or self.net.num_classes != self.num_classes:
            raise ConfigError("net spec disagrees with image size or class count")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    phase: str
    lr: float
    box_loss: float
    objectness_loss: float
    class_loss: float
    total_loss: float

    def to_json_line(self) -> str:
        return json.dumps({
            "epoch": self.epoch,
            "phase": self.phase,
            "lr": self.lr,
            "box_loss": self.box_loss,
            "objectness_loss": self.objectness_loss,
            "class_loss": self.class_loss,
            "total_loss": self.total_loss,
        }, sort_keys=True)


def _batch_loss_and_grads(params, cfg: TrainConfig, images, target_lists):
    """Mean loss over a batch plus parameter gradients (single net backward)."""
    x = Tensor(np.concatenate([im.data for im in images], axis=0))
    head, cache = net_forward(params, cfg.net, x)
    upstream = np.zeros_like(head.data)
    totals = np.zeros(4)
    bsz = len(images)
    for i, targets in enumerate(target_lists):
        single = Tensor(head.data[i:i + 1])
        br = detection_loss(single, targets, cfg.loss_variant, float(cfg.net.stride),
                            cfg.box_weight, cfg.obj_weight, cfg.cls_weight)
        g = detection_loss_grad(single, targets, cfg.loss_variant, float(cfg.net.stride),
                                cfg.box_weight, cfg.obj_weight, cfg.cls_weight)
        upstream[i] = g.data[0] / bsz
        totals += np.array([br.box_loss, br.objectness_loss, br.class_loss, br.total])
    grads = net_backward(params, cfg.net, cache, Tensor(upstream))
    return totals / bsz, grads


def train_toy(config: TrainConfig):
    """Run the two-phase schedule; returns (params, [EpochStats])."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    data = synth_dataset(config.seed, config.dataset_count, config.image_size,
                         config.num_classes)
    if config.dtype != "float64":
        data = [(img.astype(config.np_dtype), t) for img, t in data]
    params = init_params(config.net, rng, dtype=config.np_dtype)
    state = AdamWState.init(params, weight_decay=config.weight_decay)
    frozen = backbone_param_names(params)
    freeze_epochs = round(config.freeze_fraction * config.epochs)

    stats: list[EpochStats] = []
    n = len(data)
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, max(config.epochs, 1), config.lr_max, config.lr_min)
        phase = "frozen-backbone" if epoch < freeze_epochs else "full"
        if epoch == freeze_epochs and freeze_epochs > 0:
            # fresh optimizer for fine-tuning: newly thawed parameters must not
            # inherit a large shared step count (zero moments with stale bias
            # correction amplify their first updates ~3x and wreck the backbone)
            state = AdamWState.init(params, weight_decay=config.weight_decay)
        order = rng.permutation(n)
        epoch_totals = np.zeros(4)
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            images = [data[i][0] for i in idx]
            targets = [data[i][1] for i in idx]
            try:
                totals, grads = _batch_loss_and_grads(params, config, images, targets)
            except (FloatingPointError, OverflowError) as exc:
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {batches}: {exc}"
                ) from exc
            if not np.isfinite(totals).all():
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {batches}")
            if phase == "frozen-backbone":
                grads = {k: v for k, v in grads.items() if k not in frozen}
            adamw_step(params, grads, state, lr)
            epoch_totals += totals
            batches += 1
        epoch_totals /= max(batches, 1)
        stats.append(EpochStats(
            epoch=epoch, phase=phase, lr=lr,
            box_loss=float(epoch_totals[0]),
            objectness_loss=float(epoch_totals[1]),
            class_loss=float(epoch_totals[2]),
            total_loss=float(epoch_totals[3]),
        ))
        if not math.isfinite(epoch_totals[3]):
            raise TrainingDiverged(f"non-finite epoch loss at epoch {epoch}")
    return params, stats
