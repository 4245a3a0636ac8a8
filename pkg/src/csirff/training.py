"""Two-stage training: supervised contrastive pre-training, then cross-entropy."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Adam
from .core import CsiDataset, ValidationError
from .net import FingerprintNet, ce_loss, one_hot, supcon_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 512
    patience: int = 10
    tau: float = 0.07
    max_epochs: int = 30
    seed: int = 0
    float32: bool = True
    freeze_extractor: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    net: FingerprintNet
    best_epoch: int
    best_val_loss: float
    log: list = field(default_factory=list)


def balanced_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of class-balanced index batches, each with >= 2 samples of every class."""
    classes = np.unique(labels)
    per_class = max(2, batch_size // len(classes))
    pools = {c: rng.permutation(np.flatnonzero(labels == c)) for c in classes}
    for c, idx in pools.items():
        if len(idx) < 2:
            raise ValidationError(f"class {c} has fewer than 2 training samples")
    n_batches = max(1, int(np.ceil(len(labels) / (per_class * len(classes)))))
    cursor = {c: 0 for c in classes}
    batches = []
    for _ in range(n_batches):
        parts = []
        for c in classes:
            pool = pools[c]
            take = np.arange(cursor[c], cursor[c] + per_class) % len(pool)
            parts.append(pool[take])
            cursor[c] += per_class
        batch = np.concatenate(parts)
        batches.append(batch[rng.permutation(len(batch))])
    return batches


def _fixed_batches(labels: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Deterministic class-interleaved batches for validation."""
    classes = np.unique(labels)
    per_class = [np.flatnonzero(labels == c) for c in classes]
    interleaved = []
    longest = max(len(p) for p in per_class)
    for i in range(longest):
        for p in per_class:
            if i < len(p):
                interleaved.append(p[i])
    interleaved = np.asarray(interleaved)
    return [interleaved[lo:lo + batch_size] for lo in range(0, len(interleaved), batch_size)]


def _stage1_loss(net, csi, labels, tau):
    r = net.extract(net.encode(csi))
    return supcon_loss(net.project(r), labels, tau)


def _stage2_loss(net, csi, labels):
    r = net.extract(net.encode(csi))
    return ce_loss(net.classify(r), one_hot(labels, net.config.num_classes))


def _val_stage1(net, data: CsiDataset, cfg: TrainConfig) -> float:
    losses, weights = [], []
    for idx in _fixed_batches(data.device_id, cfg.batch_size):
        labels = data.device_id[idx]
        if not np.any(np.bincount(labels) >= 2):
            continue
        losses.append(_stage1_loss(net, data.csi[idx], labels, cfg.tau).item())
        weights.append(len(idx))
    return float(np.average(losses, weights=weights))


def _val_stage2(net, data: CsiDataset, cfg: TrainConfig) -> float:
    total = 0.0
    for lo in range(0, len(data), cfg.batch_size):
        sl = slice(lo, lo + cfg.batch_size)
        total += _stage2_loss(net, data.csi[sl], data.device_id[sl]).item() * len(data.csi[sl])
    return total / len(data)


def _fit(net, params, train: CsiDataset, val: CsiDataset, cfg: TrainConfig, loss_fn, val_fn,
         stage: int, epoch_callback=None) -> TrainResult:
    rng = np.random.default_rng([cfg.seed, stage])
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    best = (np.inf, 0, net.state_dict())
    history = []
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        train_losses = []
        for idx in balanced_batches(train.device_id, cfg.batch_size, rng):
            net.zero_grad()
            loss = loss_fn(net, train.csi[idx], train.device_id[idx])
            loss.backward()
            opt.step()
            train_losses.append(loss.item())
        val_loss = val_fn(net, val, cfg)
        row = {"stage": stage, "epoch": epoch, "train_loss": float(np.mean(train_losses)),
               "val_loss": val_loss, "elapsed": time.perf_counter() - t0}
        history.append(row)
        log.info("stage %d epoch %d train %.4f val %.4f", stage, epoch, row["train_loss"], val_loss)
        if epoch_callback is not None:
            epoch_callback(row)
        if val_loss < best[0]:
            best = (val_loss, epoch, net.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.load_state_dict(best[2])
    return TrainResult(net, best[1], best[0], history)


def _check_classes(train: CsiDataset, net: FingerprintNet | None = None) -> None:
    counts = np.bincount(train.device_id)
    present = counts[counts > 0]
    if len(present) == 0 or present.min() < 2:
        raise ValidationError("every class needs at least 2 training samples")
    if net is not None and train.device_id.max() >= net.config.num_classes:
        raise ValidationError("labels exceed the classifier's num_classes")


def train_stage1(net: FingerprintNet, train: CsiDataset, val: CsiDataset, cfg: TrainConfig,
                 epoch_callback=None) -> TrainResult:
    """Train extractor and projection head with the supervised contrastive loss."""
    _check_classes(train)
    params = net.parameters(FingerprintNet.EXTRACTOR_PREFIXES + ("proj",))
    return _fit(net, params, train, val, cfg,
                lambda n, c, y: _stage1_loss(n, c, y, cfg.tau), _val_stage1, 1, epoch_callback)


def train_stage2(net: FingerprintNet, train: CsiDataset, val: CsiDataset, cfg: TrainConfig,
                 epoch_callback=None) -> TrainResult:
    """Fine-tune the extractor jointly with the classifier under cross-entropy.

    ``cfg.freeze_extractor`` trains only the classifier.
    """
    _check_classes(train, net)
    prefixes = ("cls",) if cfg.freeze_extractor else FingerprintNet.EXTRACTOR_PREFIXES + ("cls",)
    return _fit(net, net.parameters(prefixes), train, val, cfg, _stage2_loss, _val_stage2, 2,
                epoch_callback)


def transfer_extractor(src: FingerprintNet, dst: FingerprintNet) -> None:
    """Copy extractor weights from a stage-1 network into ``dst``."""
    if src.config.to_dict() | {"num_classes": 0} != dst.config.to_dict() | {"num_classes": 0}:
        raise ValidationError("checkpoint architecture does not match")
    state = {k: v for k, v in src.state_dict().items()
             if k.split(".")[0] in FingerprintNet.EXTRACTOR_PREFIXES}
    dst.load_state_dict(state, strict=False)


def train_two_stage(train: CsiDataset, val: CsiDataset, net_config, cfg: TrainConfig,
                    use_supcon: bool = True, epoch_callback=None) -> tuple[FingerprintNet, list]:
    """Stage 1 (unless ``use_supcon`` is False, the no-contrastive ablation) then stage 2."""
    dtype = np.float32 if cfg.float32 else np.float64
    net = FingerprintNet(net_config, seed=cfg.seed, dtype=dtype)
    history = []
    if use_supcon:
        history += train_stage1(net, train, val, cfg, epoch_callback).log
    history += train_stage2(net, train, val, cfg, epoch_callback).log
    return net, history


def clone(net: FingerprintNet) -> FingerprintNet:
    return copy.deepcopy(net)
