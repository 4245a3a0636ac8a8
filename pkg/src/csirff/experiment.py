"""Scaled-down synthetic identification experiment.

Devices get planted fingerprints. Each device is measured through the pulse
filter on a flat channel and denoised into one augmentation base. The bases
are augmented over a set of channel models and SNRs, a network is trained on
the result, and it is evaluated on channels of a model never seen in training.
Test records come in positions; at each position ``n_rx`` receive chains see
independent channel realizations and each chain is measured ``n_meas`` times
with fresh noise.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import AugmentPlan, BaseCsi, build_dataset, split
from .channels import (ChannelModelSpec, compose_filter, default_pulse_filter, flat_channel,
                       model_spec, sample_channel)
from .core import CsiDataset, NoiseSpec, add_noise, denoise, derive_seed, forward_csi, plant_fingerprint
from .extraction import extract_ss
from .fusion import evaluate
from .net import NetworkConfig
from .training import TrainConfig, train_two_stage

log = logging.getLogger(__name__)

#: (n_csi, n_rx) windows used for the fusion sweep, keyed by N_c.
FUSION_SWEEP = {1: (1, 1), 4: (1, 4), 8: (2, 4), 16: (4, 4)}


@dataclass(frozen=True)
class ExperimentConfig:
    n_devices: int = 5
    sigma_f: float = 0.02
    base_snr_db: float = 30.0
    denoise_window: int = 100
    train_types: tuple = (("Flat", True), ("B", True), ("B", False), ("C", True), ("C", False))
    snr_grid_db: tuple = (10.0, 20.0, 30.0, 40.0)
    realizations_per_type: int = 200
    strategy: str = "denoised"
    test_model: str = "D"
    test_los: bool = False
    test_snr_db: float = 30.0
    test_positions: int = 40
    n_rx: int = 4
    n_meas: int = 4
    normalize_input: bool = True
    batch_size: int = 128
    max_epochs: int = 30
    patience: int = 10
    use_supcon: bool = True
    seed: int = 0

    def specs(self) -> list[ChannelModelSpec]:
        return [model_spec(tag, los) for tag, los in self.train_types]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_types"] = [list(t) for t in self.train_types]
        d["snr_grid_db"] = list(self.snr_grid_db)
        return d


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    accuracy: dict = field(default_factory=dict)   # N_c -> mean accuracy (AP fusion)
    data_fusion_accuracy: float = float("nan")
    train_seconds: float = 0.0
    total_seconds: float = 0.0
    history: list = field(default_factory=list)
    net: object = None

    @property
    def single_shot(self) -> float:
        return self.accuracy[1]

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(),
                "accuracy": {str(k): v for k, v in self.accuracy.items()},
                "data_fusion_accuracy": self.data_fusion_accuracy,
                "train_seconds": self.train_seconds, "total_seconds": self.total_seconds}


def make_bases(cfg: ExperimentConfig) -> tuple[list, list[BaseCsi]]:
    """Planted fingerprints and their denoised, filtered flat-channel measurements."""
    filt = default_pulse_filter()
    ch = compose_filter(flat_channel(), filt)
    fps = [plant_fingerprint(cfg.seed, cfg.sigma_f, d) for d in range(cfg.n_devices)]
    bases = []
    for fp in fps:
        recs = [forward_csi(fp, ch, NoiseSpec(cfg.base_snr_db, derive_seed(cfg.seed, 0xBA5E, fp.device_id, k)))
                for k in range(cfg.denoise_window)]
        base = denoise(recs, cfg.denoise_window)
        if cfg.strategy == "fingerprint":
            base = 1.0 + extract_ss(base)
        bases.append(BaseCsi(base, fp.device_id))
    return fps, bases


def make_training_set(cfg: ExperimentConfig, bases, path=None):
    plan = AugmentPlan(cfg.strategy, tuple(cfg.specs()), cfg.snr_grid_db, cfg.realizations_per_type, cfg.seed)
    return build_dataset(bases, plan, path)


def make_test_set(cfg: ExperimentConfig, fps) -> CsiDataset:
    """Unseen-channel test records; channel seeds are disjoint from augmentation seeds."""
    filt = default_pulse_filter()
    spec = model_spec(cfg.test_model, cfg.test_los, allow_extreme=True)
    n = cfg.test_positions * cfg.n_rx * cfg.n_meas
    csi = np.empty((cfg.n_devices * n, 52), np.complex128)
    dev, pos, rx = (np.empty(len(csi), np.int64) for _ in range(3))
    tag = 0
    i = 0
    for fp in fps:
        chan_seed = derive_seed(cfg.seed, 0x7E57, fp.device_id)
        for p in range(cfg.test_positions):
            for r in range(cfg.n_rx):
                ch = compose_filter(sample_channel(spec, chan_seed, p * cfg.n_rx + r), filt)
                tag = ch.tag_byte
                clean = ch.freq_response * (1.0 + fp.deviation)
                for m in range(cfg.n_meas):
                    noise = NoiseSpec(cfg.test_snr_db, derive_seed(cfg.seed, 0x7E57, fp.device_id, p, r, m))
                    csi[i] = add_noise(clean, noise)
                    dev[i], pos[i], rx[i] = fp.device_id, p, r
                    i += 1
    return CsiDataset(csi, dev, pos, rx, np.full(len(csi), tag), np.full(len(csi), cfg.test_snr_db))


def run_experiment(cfg: ExperimentConfig, train_path=None, test_path=None,
                   epoch_callback=None) -> ExperimentResult:
    """Build data, train both stages, and evaluate AP fusion over the N_c sweep."""
    from .io import read_csir, write_csir

    t0 = time.perf_counter()
    fps, bases = make_bases(cfg)
    if train_path is not None:
        make_training_set(cfg, bases, train_path)
        data = read_csir(train_path)
    else:
        data = make_training_set(cfg, bases)
    test = make_test_set(cfg, fps)
    if test_path is not None:
        write_csir(test_path, test)
        test = read_csir(test_path)
    parts = split(data, (0.8, 0.1, 0.1), cfg.seed)
    tcfg = TrainConfig(batch_size=cfg.batch_size, max_epochs=cfg.max_epochs, patience=cfg.patience,
                       seed=cfg.seed)
    ncfg = NetworkConfig(num_classes=cfg.n_devices, normalize_input=cfg.normalize_input)
    t1 = time.perf_counter()
    net, history = train_two_stage(data[parts.train], data[parts.val], ncfg, tcfg,
                                   use_supcon=cfg.use_supcon, epoch_callback=epoch_callback)
    result = ExperimentResult(cfg, train_seconds=time.perf_counter() - t1, history=history, net=net)
    probs = net.predict_dataset(test)
    for n_c, (n_csi, n_rx) in FUSION_SWEEP.items():
        if n_rx > cfg.n_rx or n_csi > cfg.n_meas:
            continue
        rep = evaluate(net, test, "ap", n_csi, n_rx, probs=probs)
        result.accuracy[n_c] = rep.mean_accuracy
        log.info("%s", rep.summary())
    n_csi, n_rx = FUSION_SWEEP[16]
    if n_rx <= cfg.n_rx and n_csi <= cfg.n_meas:
        result.data_fusion_accuracy = evaluate(net, test, "data", n_csi, n_rx).mean_accuracy
    result.total_seconds = time.perf_counter() - t0
    return result
