"""Multi-resolution loss, training loop, prediction and checkpoint round-trips."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import PointCloud, sample_block
from .metrics import confusion, per_class_metrics
from .model import ArchConfig, PreparedBlock, RFFSNet, prepare_block
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, add, mul, softmax_bce

log = logging.getLogger(__name__)

DEFAULT_LOSS_WEIGHTS = (1.0, 0.3, 0.3, 0.3)
LOSS_WEIGHT_PRESETS = {
    "vaihingen": (1.0, 0.3, 0.3, 0.3),
    "lasdu": (1.0, 1.5, 1.5, 1.5),
    "dfc2019": (1.0, 1.5, 1.5, 1.5),
    "single": (1.0, 0.0, 0.0, 0.0),
    # weight combinations explored in the loss-weight ablation
    "w-0.5-1.0-1.5": (1.0, 0.5, 1.0, 1.5),
    "w-1.5-1.0-0.5": (1.0, 1.5, 1.0, 0.5),
    "w-1.0": (1.0, 1.0, 1.0, 1.0),
    "w-1.5": (1.0, 1.5, 1.5, 1.5),
    "w-2.0": (1.0, 2.0, 2.0, 2.0),
    "w-0.5": (1.0, 0.5, 0.5, 0.5),
    "w-0.3": (1.0, 0.3, 0.3, 0.3),
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    weights: tuple[float, ...] = DEFAULT_LOSS_WEIGHTS

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if any(v < 0 or not np.isfinite(v) for v in w):
            raise ValueError(f"loss weights must be finite and non-negative: {w}")
        if not any(v > 0 for v in w):
            raise ValueError("at least one loss weight must be positive")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, i) -> float:
        return self.weights[i]


def mrfa_loss(logits: Sequence[Tensor], labels: Sequence[np.ndarray], weights=DEFAULT_LOSS_WEIGHTS,
              reduction: str = "mean") -> tuple[Tensor, list[float]]:
    """Weighted sum of per-level softmax binary cross-entropies.

    Returns the total (differentiable) and every level's unweighted value.
    Levels with weight 0 are evaluated for reporting only and contribute
    nothing to the gradient.
    """
    w = weights if isinstance(weights, LossWeights) else LossWeights(tuple(weights))
    if not (len(logits) == len(labels) == len(w)):
        raise ValueError(f"{len(logits)} logit levels, {len(labels)} label levels, {len(w)} weights")
    total = None
    parts = []
    for s, a, lam in zip(logits, labels, w.weights):
        if s.shape[0] != len(a):
            raise ValueError(f"level has {s.shape[0]} predictions for {len(a)} labels")
        term = softmax_bce(s if lam > 0 else s.detach(), a, reduction)
        parts.append(term.item())
        if lam > 0:
            weighted = mul(term, lam)
            total = weighted if total is None else add(total, weighted)
    return total, parts


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 16
    lr: float = 0.002
    weight_decay: float = 0.01
    seed: int = 0
    loss_weights: tuple[float, ...] = DEFAULT_LOSS_WEIGHTS
    loss_reduction: str = "mean"
    n_target: int = 4096

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.n_target < 1:
            raise ValueError("epochs, batch_size, lr and n_target must be positive")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError("loss_reduction must be 'mean' or 'sum'")
        self.loss_weights = LossWeights(tuple(self.loss_weights)).weights

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Trainer:
    """Owns a model, its optimizer state and the epoch counter."""

    model: RFFSNet
    config: TrainConfig
    state: AdamState
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    class_names: tuple[str, ...] = ()

    @classmethod
    def create(cls, arch: ArchConfig, config: TrainConfig, class_names=()) -> "Trainer":
        model = RFFSNet(arch, seed=config.seed)
        return cls(model, config, AdamState(lr=config.lr, weight_decay=config.weight_decay),
                   class_names=tuple(class_names))

    def step(self, batch: Sequence[PreparedBlock], batch_id: str = "") -> tuple[float, list[float]]:
        params = self.model.parameters()
        acc = [np.zeros_like(p.data) for p in params]
        total = 0.0
        levels = np.zeros(len(self.config.loss_weights))
        for block in batch:
            with Tape() as tape:
                logits = self.model(block)
                loss, parts = mrfa_loss(logits, block.labels, self.config.loss_weights,
                                        self.config.loss_reduction)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss in batch {batch_id}")
            for a, g in zip(acc, tape.backward(loss, params)):
                a += g
            total += value
            levels += parts
        n = len(batch)
        grads = [a / n for a in acc]
        names = [name for name, _ in self.model.named_parameters()]
        adam_step(params, grads, self.state, names)
        return total / n, (levels / n).tolist()

    def run_epoch(self, blocks: Sequence[PreparedBlock]) -> dict:
        rng = np.random.default_rng([self.config.seed, self.epoch])
        order = rng.permutation(len(blocks))
        losses, levels = [], []
        bs = self.config.batch_size
        for b, start in enumerate(range(0, len(order), bs)):
            batch = [blocks[i] for i in order[start:start + bs]]
            loss, parts = self.step(batch, batch_id=f"{self.epoch}:{b}")
            losses.append(loss)
            levels.append(parts)
        metrics = evaluate_blocks(self.model, blocks)
        record = {
            "epoch": self.epoch,
            "total_loss": float(np.mean(losses)),
            "per_level_losses": [float(v) for v in np.mean(levels, axis=0)],
            "oa": metrics.oa,
            "mf1": metrics.mf1,
            "miou": metrics.miou,
        }
        self.history.append(record)
        self.epoch += 1
        return record

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        arrays = dict(self.model.state_dict())
        names = [n for n, _ in self.model.named_parameters()]
        if self.state.m:
            for n, m, v in zip(names, self.state.m, self.state.v):
                arrays[f"adam.m.{n}"] = m
                arrays[f"adam.v.{n}"] = v
        meta = {
            "arch": self.model.cfg.to_dict(),
            "train": {**asdict(self.config), "loss_weights": list(self.config.loss_weights)},
            "epoch": self.epoch,
            "adam_step": self.state.step,
            "class_names": list(self.class_names),
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path, arch: ArchConfig | None = None) -> "Trainer":
        arrays, meta = load_checkpoint(path)
        saved_arch = ArchConfig.from_dict(meta["arch"])
        if arch is not None and arch.to_dict() != saved_arch.to_dict():
            raise ValueError("checkpoint architecture does not match the requested configuration")
        config = TrainConfig.from_dict({**meta["train"], "loss_weights": tuple(meta["train"]["loss_weights"])})
        trainer = cls.create(saved_arch, config, meta.get("class_names", ()))
        model_state = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
        trainer.model.load_state_dict(model_state)
        names = [n for n, _ in trainer.model.named_parameters()]
        if meta["adam_step"] > 0:
            trainer.state.m = [arrays[f"adam.m.{n}"].copy() for n in names]
            trainer.state.v = [arrays[f"adam.v.{n}"].copy() for n in names]
        trainer.state.step = meta["adam_step"]
        trainer.epoch = meta["epoch"]
        return trainer


def prepare_training_blocks(clouds: Sequence[PointCloud], arch: ArchConfig, n_target: int = 4096,
                            seed: int = 0) -> list[PreparedBlock]:
    """Fixed-size sample of every block, with its hierarchy and graphs built once."""
    out = []
    for i, cloud in enumerate(clouds):
        if cloud.labels is None:
            raise ValueError(f"training block {i} has no labels")
        idx = sample_block(len(cloud), n_target, seed=seed + i)
        out.append(prepare_block(cloud.subset(idx), arch, seed=0))
    return out


def train(arch: ArchConfig, config: TrainConfig, clouds: Sequence[PointCloud], checkpoint_path=None,
          log_path=None, class_names=(), trainer: Trainer | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> Trainer:
    """Train for ``config.epochs`` epochs (continuing ``trainer`` when given).

    A checkpoint and one JSON metrics line are written after every epoch.
    """
    if not clouds:
        raise ValueError("no training blocks")
    blocks = prepare_training_blocks(clouds, arch, config.n_target, config.seed)
    trainer = trainer or Trainer.create(arch, config, class_names)
    target = trainer.epoch + config.epochs
    while trainer.epoch < target:
        record = trainer.run_epoch(blocks)
        log.info("epoch %d loss %.4f oa %.4f", record["epoch"], record["total_loss"], record["oa"])
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if checkpoint_path is not None:
            trainer.save(checkpoint_path)
        if on_epoch is not None:
            on_epoch(record)
    return trainer


def predict_prepared(model: RFFSNet, block: PreparedBlock) -> np.ndarray:
    logits = model(block)[0].data
    return np.argmax(logits, axis=1)


def predict(model: RFFSNet, cloud: PointCloud) -> np.ndarray:
    """Full-resolution class ids for every point of a block.

    Blocks too small for the level ladder are padded by resampling; each
    original point takes the prediction of its first copy.
    """
    cfg = model.cfg
    need = cfg.k * int(np.prod(cfg.ratios))
    if len(cloud) >= need:
        return predict_prepared(model, prepare_block(cloud, cfg))
    idx = sample_block(len(cloud), need, seed=0)
    pred = predict_prepared(model, prepare_block(cloud.subset(idx), cfg))
    first = np.full(len(cloud), -1)
    for pos in range(len(idx) - 1, -1, -1):
        first[idx[pos]] = pos
    return pred[first]


def evaluate_blocks(model: RFFSNet, blocks: Sequence[PreparedBlock]):
    truth = np.concatenate([b.labels[0] for b in blocks])
    pred = np.concatenate([predict_prepared(model, b) for b in blocks])
    return per_class_metrics(confusion(truth, pred, model.cfg.num_classes))
