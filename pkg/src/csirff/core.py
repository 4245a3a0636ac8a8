"""Domain types and the forward CSI signal model.

A CSI estimate on the 52 active subcarriers of a legacy 20 MHz 802.11 frame is
modelled as ``c = h * (1 + f) + z`` (elementwise), where ``h`` is the channel
frequency response, ``f`` the per-device hardware deviation (the fingerprint)
and ``z`` complex white Gaussian noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

N_SUBCARRIERS = 52
FFT_SIZE = 64

#: Signed subcarrier indices of the active bins, -26..-1, +1..+26.
SUBCARRIER_INDICES = np.concatenate([np.arange(-26, 0), np.arange(1, 27)])
#: Positions of the active bins on the 64-point FFT grid.
FFT_BINS = SUBCARRIER_INDICES % FFT_SIZE

UNKNOWN_TAG = 0xFF


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def as_subcarriers(values, name: str = "csi") -> np.ndarray:
    """Return ``values`` as a read-only complex128 vector of length 52."""
    arr = np.array(values, dtype=np.complex128)
    if arr.shape != (N_SUBCARRIERS,):
        raise ValidationError(f"{name} must have shape ({N_SUBCARRIERS},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def to_grid(values: np.ndarray) -> np.ndarray:
    """Zero-fill the 52 active bins onto the 64-point FFT grid."""
    grid = np.zeros(values.shape[:-1] + (FFT_SIZE,), dtype=np.complex128)
    grid[..., FFT_BINS] = values
    return grid


def derive_rng(*keys: int) -> np.random.Generator:
    """Independent generator for a tuple of integer keys (seed, index, ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]))


def derive_seed(*keys: int) -> int:
    """A 64-bit seed derived from a tuple of integer keys."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Fingerprint:
    deviation: np.ndarray
    device_id: int

    def __post_init__(self):
        object.__setattr__(self, "deviation", as_subcarriers(self.deviation, "deviation"))


@dataclass(frozen=True)
class NoiseSpec:
    """AWGN at ``snr_db`` relative to the noiseless per-record signal power.

    ``snr_db = inf`` disables noise.
    """

    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return
        if not -20.0 <= self.snr_db <= 60.0:
            raise ValidationError(f"snr_db {self.snr_db} outside supported range [-20, 60]")

    @classmethod
    def noiseless(cls) -> "NoiseSpec":
        return cls(math.inf, 0)

    @property
    def is_noiseless(self) -> bool:
        return math.isinf(self.snr_db)


@dataclass(frozen=True)
class CsiRecord:
    csi: np.ndarray
    device_id: int
    position_id: int = 0
    rx_index: int = 0
    snr_db: float = math.nan
    channel_tag: int = UNKNOWN_TAG

    def __post_init__(self):
        object.__setattr__(self, "csi", as_subcarriers(self.csi))

    def same_source(self, other: "CsiRecord") -> bool:
        return (self.device_id, self.position_id, self.rx_index) == (
            other.device_id, other.position_id, other.rx_index)


def plant_fingerprint(seed: int, sigma_f: float = 0.02, device_id: int = 0,
                      smooth: int = 1) -> Fingerprint:
    """Draw a synthetic device fingerprint.

    Each subcarrier deviation is circular complex Gaussian with
    ``E|f_k|^2 = sigma_f^2``. ``smooth > 1`` low-pass filters the draw with a
    moving average of that width across subcarriers and rescales it back to
    ``sigma_f``.
    """
    if not sigma_f > 0:
        raise ValidationError("sigma_f must be positive")
    rng = derive_rng(seed, device_id, 0xF1)
    f = (rng.standard_normal(N_SUBCARRIERS) + 1j * rng.standard_normal(N_SUBCARRIERS)) * (sigma_f / math.sqrt(2))
    if smooth > 1:
        kernel = np.ones(smooth) / smooth
        f = np.convolve(f, kernel, mode="same")
        f *= sigma_f / math.sqrt(np.mean(np.abs(f) ** 2))
    return Fingerprint(f, device_id)


def add_noise(signal: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """Add AWGN to ``signal`` so its mean per-bin power over noise variance is ``snr_db``."""
    if noise.is_noiseless:
        return np.array(signal, dtype=np.complex128)
    power = float(np.mean(np.abs(signal) ** 2))
    var = power / 10.0 ** (noise.snr_db / 10.0)
    rng = derive_rng(noise.seed, 0x2A)
    z = (rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)) * math.sqrt(var / 2)
    return signal + z


def forward_csi(fp: Fingerprint, ch, noise: NoiseSpec, position_id: int = 0,
                rx_index: int = 0) -> CsiRecord:
    """LS CSI estimate of a device with fingerprint ``fp`` seen through channel ``ch``."""
    clean = np.asarray(ch.freq_response) * (1.0 + fp.deviation)
    csi = add_noise(clean, noise)
    return CsiRecord(csi, fp.device_id, position_id, rx_index,
                     float(noise.snr_db) if not noise.is_noiseless else math.inf,
                     ch.tag_byte)


def _check_shared(records: Sequence[CsiRecord]) -> None:
    first = records[0]
    for r in records[1:]:
        if not first.same_source(r):
            raise ValidationError("records mix device/position/rx metadata")


def denoise(records: Sequence[CsiRecord], window: int = 100) -> np.ndarray:
    """Mean of the first ``window`` records of one device/position/rx chain."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    if len(records) == 0:
        raise ValidationError("no records to denoise")
    _check_shared(records)
    stack = np.stack([r.csi for r in records[:window]])
    return as_subcarriers(stack.mean(axis=0))


def snr_estimate(records: Sequence[CsiRecord]) -> float:
    """SNR in dB of repeated measurements: power of the sample mean over the mean per-bin variance."""
    if len(records) < 2:
        raise ValidationError("snr_estimate needs at least 2 records")
    _check_shared(records)
    stack = np.stack([r.csi for r in records])
    noise_var = float(np.mean(np.var(stack, axis=0, ddof=1)))
    signal = float(np.mean(np.abs(stack.mean(axis=0)) ** 2))
    if noise_var == 0.0:
        return math.inf
    if signal == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal / noise_var)


@dataclass
class CsiDataset:
    """Columnar collection of CSI records (one row per record)."""

    csi: np.ndarray
    device_id: np.ndarray
    position_id: np.ndarray = field(default=None)
    rx_index: np.ndarray = field(default=None)
    channel_tag: np.ndarray = field(default=None)
    snr_db: np.ndarray = field(default=None)

    def __post_init__(self):
        self.csi = np.asarray(self.csi, dtype=np.complex128).reshape(-1, N_SUBCARRIERS)
        n = len(self.csi)
        self.device_id = np.asarray(self.device_id, dtype=np.int64).reshape(n)
        defaults = {"position_id": 0, "rx_index": 0, "channel_tag": UNKNOWN_TAG}
        for name, default in defaults.items():
            val = getattr(self, name)
            setattr(self, name, np.full(n, default, np.int64) if val is None
                    else np.asarray(val, dtype=np.int64).reshape(n))
        self.snr_db = (np.full(n, np.nan) if self.snr_db is None
                       else np.asarray(self.snr_db, dtype=np.float64).reshape(n))

    def __len__(self) -> int:
        return len(self.csi)

    def __getitem__(self, idx) -> "CsiDataset":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return CsiDataset(self.csi[idx], self.device_id[idx], self.position_id[idx],
                          self.rx_index[idx], self.channel_tag[idx], self.snr_db[idx])

    def record(self, i: int) -> CsiRecord:
        return CsiRecord(self.csi[i], int(self.device_id[i]), int(self.position_id[i]),
                         int(self.rx_index[i]), float(self.snr_db[i]), int(self.channel_tag[i]))

    def records(self) -> Iterable[CsiRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records: Iterable[CsiRecord]) -> "CsiDataset":
        records = list(records)
        if not records:
            return cls.empty()
        return cls(np.stack([r.csi for r in records]),
                   [r.device_id for r in records], [r.position_id for r in records],
                   [r.rx_index for r in records], [r.channel_tag for r in records],
                   [r.snr_db for r in records])

    @classmethod
    def empty(cls) -> "CsiDataset":
        return cls(np.zeros((0, N_SUBCARRIERS), np.complex128), np.zeros(0, np.int64))

    @classmethod
    def concat(cls, parts: Sequence["CsiDataset"]) -> "CsiDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, name) for p in parts]) for name in
                     ("csi", "device_id", "position_id", "rx_index", "channel_tag", "snr_db")))

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.device_id)
