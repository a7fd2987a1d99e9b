"""Contrastive pretraining and supervised fine-tuning loops."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from .augmentation import AugmentConfig, augment_batch, stack_views
from .autodiff import backward, make_optimizer
from .encoders import Network
from .losses import LossConfig, bidirectional_loss, cross_entropy, finetune_loss, mse_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by pretraining and fine-tuning.

    ``lr`` is the step size; the Gaussian jitter of the strong view lives in
    ``augment.sigma_eta``.
    """

    tau: float = 0.1
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    finetune_epochs: int = 100
    finetune_lr: float = 1e-3
    freeze_encoder: bool = False
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1 or self.finetune_epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0 or self.finetune_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if isinstance(self.augment, Mapping):
            object.__setattr__(self, "augment", AugmentConfig(**self.augment))

    def optimizer_kwargs(self) -> dict:
        if self.optimizer == "adam":
            return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.adam_eps}
        return {}

    def to_dict(self) -> dict:
        return asdict(self)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches; a trailing batch of one row is folded into the previous one."""
    order = rng.permutation(n)
    batches = [order[i: i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _epoch_rng(seed: int, phase: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), phase, epoch])


def pretrain(pool: np.ndarray, net: Network, cfg: TrainConfig) -> list[dict]:
    """Bidirectional contrastive pretraining on unlabeled rows.

    Fresh strong/weak views are drawn every epoch. Returns one history row
    per epoch with the mean L_S, L_W and L_STC over its batches.
    """
    pool = np.asarray(pool, dtype=float)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise ValueError(f"pretraining pool must be a non-empty matrix, got shape {pool.shape}")
    batch_size = min(cfg.batch_size, pool.shape[0])
    if batch_size < 2:
        raise ValueError("pretraining needs at least two rows")
    params = net.encoder_params()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr, **cfg.optimizer_kwargs())
    aug = replace(cfg.augment, seed=cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        batches = minibatches(pool.shape[0], batch_size, _epoch_rng(cfg.seed, 0, epoch))
        for b, idx in enumerate(batches):
            strong, weak = stack_views(augment_batch(pool[idx], aug, key=(epoch,), indices=idx))
            l_s, l_w, l_stc = bidirectional_loss(net.embed(strong), net.embed(weak), cfg.tau)
            parts = np.array([l_s.item(), l_w.item(), l_stc.item()])
            if not np.all(np.isfinite(parts)):
                raise TrainingError(f"non-finite contrastive loss at epoch {epoch}, batch {b}: "
                                    f"L_S={parts[0]}, L_W={parts[1]}, L_STC={parts[2]}")
            opt.zero_grad()
            backward(l_stc, params)
            opt.step()
            sums += parts
        mean = sums / len(batches)
        history.append({"epoch": epoch, "L_S": float(mean[0]), "L_W": float(mean[1]), "L_STC": float(mean[2])})
        log.debug("pretrain epoch %d L_STC=%.6f", epoch, mean[2])
    return history


@dataclass(frozen=True)
class PositionScaler:
    """Affine map between native coordinates and the standardized training target.

    A single scale for both axes keeps distances proportional.
    """

    center: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    @classmethod
    def fit(cls, positions: np.ndarray) -> "PositionScaler":
        positions = np.asarray(positions, dtype=float)
        center = positions.mean(axis=0)
        scale = float(np.sqrt(((positions - center) ** 2).sum(axis=1).mean() / 2))
        return cls((float(center[0]), float(center[1])), scale if scale > 0 else 1.0)

    def forward(self, positions: np.ndarray) -> np.ndarray:
        return (np.asarray(positions, dtype=float) - np.asarray(self.center)) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + np.asarray(self.center)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PositionScaler":
        return cls(tuple(d["center"]), float(d["scale"]))


def finetune(X: np.ndarray, positions: np.ndarray, floors: np.ndarray, buildings: np.ndarray,
             net: Network, cfg: TrainConfig, loss_cfg: LossConfig | None = None,
             scaler: PositionScaler | None = None) -> tuple[list[dict], PositionScaler]:
    """Train the task heads (and, unless frozen, the encoder) on labeled rows.

    Regression runs on standardized coordinates; ``scaler`` maps them back.
    """
    loss_cfg = loss_cfg or LossConfig(tau=cfg.tau)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"labeled set must be a non-empty matrix, got shape {X.shape}")
    floors = np.asarray(floors, dtype=np.intp)
    buildings = np.asarray(buildings, dtype=np.intp)
    if floors.max() >= net.cfg.n_floors or buildings.max() >= net.cfg.n_buildings:
        raise ValueError("class labels exceed the head sizes configured for the network")
    scaler = scaler or PositionScaler.fit(positions)
    target = scaler.forward(positions)
    params = net.head_params() if cfg.freeze_encoder else list(net.params.values())
    opt = make_optimizer(cfg.optimizer, params, cfg.finetune_lr, **cfg.optimizer_kwargs())
    batch_size = max(2, min(cfg.batch_size, X.shape[0]))
    history = []
    for epoch in range(cfg.finetune_epochs):
        sums = np.zeros(4)
        batches = (minibatches(X.shape[0], batch_size, _epoch_rng(cfg.seed, 1, epoch))
                   if X.shape[0] > 1 else [np.arange(1)])
        for b, idx in enumerate(batches):
            pos, floor_logits, building_logits = net.predict(X[idx])
            mse = mse_loss(pos, target[idx])
            ce_f = cross_entropy(floor_logits, floors[idx])
            ce_b = cross_entropy(building_logits, buildings[idx])
            loss = finetune_loss(mse, ce_f, ce_b, loss_cfg)
            parts = np.array([mse.item(), ce_f.item(), ce_b.item(), loss.item()])
            if not np.all(np.isfinite(parts)):
                raise TrainingError(f"non-finite fine-tune loss at epoch {epoch}, batch {b}: {parts}")
            opt.zero_grad()
            backward(loss, params)
            opt.step()
            sums += parts
        mean = sums / len(batches)
        history.append({"epoch": epoch, "mse": float(mean[0]), "ce_floor": float(mean[1]),
                        "ce_building": float(mean[2]),
                        "loss": float(mean[3])})
    return history, scaler


def predict(net: Network, X: np.ndarray, scaler: PositionScaler, batch_size: int = 256):
    """Positions in native units plus floor and building class indices."""
    X = np.asarray(X, dtype=float)
    pos, fl, bl = [], [], []
    for start in range(0, X.shape[0], batch_size):
        p, f, b = net.predict(X[start: start + batch_size])
        pos.append(p.data)
        fl.append(f.data)
        bl.append(b.data)
    positions = scaler.inverse(np.concatenate(pos))
    return positions, np.concatenate(fl).argmax(axis=1), np.concatenate(bl).argmax(axis=1)


def write_history_csv(path, history: list[dict]) -> None:
    if not history:
        raise ValueError("empty history")
    keys = list(history[0])
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in history:
            fh.write(",".join(str(row[k]) if k == "epoch" else repr(float(row[k])) for k in keys) + "\n")
