"""Channel/noise augmentation of base CSI and dataset splitting.

Two base kinds are supported:

* ``"denoised"`` -- a denoised CSI measurement ``c_d``; output ``h_a * c_d + z_a``.
  It keeps whatever filtering the measurement already carries.
* ``"fingerprint"`` -- an extracted ``1 + f_hat``; output ``h_a * (1 + f_hat) + z_a``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .channels import ChannelRealization, ChannelModelSpec, model_spec, sample_channel
from .core import (CsiDataset, CsiRecord, N_SUBCARRIERS, NoiseSpec, ValidationError,
                   add_noise, as_subcarriers, derive_seed)

STRATEGIES = ("denoised", "fingerprint")
DEFAULT_SNR_GRID = tuple(float(s) for s in range(5, 41, 5))


@dataclass(frozen=True)
class BaseCsi:
    """A labelled augmentation base (denoised CSI or ``1 + f_hat``)."""

    csi: np.ndarray
    device_id: int
    position_id: int = 0
    rx_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "csi", as_subcarriers(self.csi))


@dataclass(frozen=True)
class AugmentPlan:
    strategy: str = "denoised"
    channel_specs: tuple = field(default_factory=lambda: tuple(
        model_spec(t, los) for t in ("B", "C", "D") for los in (True, False)))
    snr_grid_db: tuple = DEFAULT_SNR_GRID
    realizations_per_type: int = 100
    base_seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown augmentation strategy {self.strategy!r}")
        if not self.channel_specs or not self.snr_grid_db:
            raise ValidationError("channel and SNR grids must be non-empty")
        if self.realizations_per_type < 1:
            raise ValidationError("realizations_per_type must be >= 1")
        object.__setattr__(self, "channel_specs", tuple(self.channel_specs))
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))

    def records_per_base(self) -> int:
        return len(self.channel_specs) * self.realizations_per_type * len(self.snr_grid_db)

    def total_records(self, n_bases: int) -> int:
        return n_bases * self.records_per_base()

    def to_dict(self) -> dict:
        return {"strategy": self.strategy,
                "channel_types": [[s.tag, s.los] for s in self.channel_specs],
                "snr_grid_db": list(self.snr_grid_db),
                "realizations_per_type": self.realizations_per_type,
                "base_seed": self.base_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPlan":
        specs = tuple(model_spec(tag, bool(los), allow_extreme=True) for tag, los in d["channel_types"])
        return cls(d.get("strategy", "denoised"), specs, tuple(d["snr_grid_db"]),
                   int(d["realizations_per_type"]), int(d.get("base_seed", 0)))


def augment_one(base, ch: ChannelRealization, noise: NoiseSpec, strategy: str = "denoised",
                device_id: int = 0, position_id: int = 0, rx_index: int = 0) -> CsiRecord:
    """``h_a * base + z_a`` with noise drawn after the channel multiplication."""
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown augmentation strategy {strategy!r}")
    out = add_noise(ch.freq_response * as_subcarriers(base, "base"), noise)
    return CsiRecord(out, device_id, position_id, rx_index,
                     math.inf if noise.is_noiseless else float(noise.snr_db), ch.tag_byte)


def _base_chunks(index: int, base: BaseCsi, plan: AugmentPlan) -> Iterator[CsiDataset]:
    for t, spec in enumerate(plan.channel_specs):
        csi, tags, snrs = [], [], []
        for r in range(plan.realizations_per_type):
            ch = sample_channel(spec, derive_seed(plan.base_seed, index, t), r)
            clean = ch.freq_response * base.csi
            for s, snr in enumerate(plan.snr_grid_db):
                noise = NoiseSpec(snr, derive_seed(plan.base_seed, index, t, r, s))
                csi.append(add_noise(clean, noise))
                tags.append(ch.tag_byte)
                snrs.append(snr)
        n = len(csi)
        yield CsiDataset(np.stack(csi), np.full(n, base.device_id), np.full(n, base.position_id),
                         np.full(n, base.rx_index), tags, snrs)


def generate(bases: Sequence[BaseCsi], plan: AugmentPlan) -> Iterator[CsiDataset]:
    """Stream augmented records, one chunk per (base, channel type), in canonical order."""
    if not bases:
        raise ValidationError("no augmentation bases")
    for i, base in enumerate(bases):
        yield from _base_chunks(i, base, plan)


def build_dataset(bases: Sequence[BaseCsi], plan: AugmentPlan, path=None):
    """Augment every base over the plan's channel and SNR grids.

    With ``path`` the records stream to a CSIR file and a manifest is written
    next to it (``<path>.manifest.json``); the manifest is returned. Without a
    path the whole dataset is returned in memory.
    """
    if path is None:
        return CsiDataset.concat(list(generate(bases, plan)))
    from .io import CsirWriter

    manifest = {"plan": plan.to_dict(), "bases": len(bases),
                "expected_records": plan.total_records(len(bases)), "written": 0,
                "counts": {}, "complete": False}
    manifest_path = f"{path}.manifest.json"
    try:
        with CsirWriter(path, manifest["expected_records"]) as writer:
            for chunk in generate(bases, plan):
                writer.write(chunk)
                manifest["written"] += len(chunk)
                for dev, tag, snr in zip(chunk.device_id, chunk.channel_tag, chunk.snr_db):
                    key = f"{dev}/{tag}/{snr:g}"
                    manifest["counts"][key] = manifest["counts"].get(key, 0) + 1
        manifest["complete"] = True
    finally:
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    fractions: tuple = (0.8, 0.1, 0.1)


def split(dataset: CsiDataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Stratified train/val/test split; every class appears in all three parts."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValidationError("fractions must be three non-negative numbers summing to 1")
    rng = np.random.default_rng([seed, 0x5B])
    parts = ([], [], [])
    for c in np.unique(dataset.device_id):
        idx = rng.permutation(np.flatnonzero(dataset.device_id == c))
        if len(idx) < 3:
            raise ValidationError(f"class {c} has {len(idx)} samples; at least 3 are needed")
        n_val = max(1, int(round(fractions[1] * len(idx))))
        n_test = max(1, int(round(fractions[2] * len(idx))))
        n_train = len(idx) - n_val - n_test
        if n_train < 1:
            raise ValidationError(f"class {c} too small for the requested fractions")
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    return DatasetSplit(train, val, test, fractions)
