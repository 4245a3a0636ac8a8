"""Tapped-delay-line indoor WLAN channels (TGn B/C/D/F style) and pulse filtering.

Taps sit on the 50 ns sample grid of a 20 MHz channel. The power-delay profile
is a sum of overlapping exponentially decaying clusters sharing one decay
constant; the constant is calibrated per model so the mean per-realization RMS
delay spread of NLoS draws matches the tabulated value. This keeps the
(delay spread, clusters, taps) triple of each model exact while replacing the
full TGn per-tap tables, Doppler spectra and antenna correlation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .core import (FFT_SIZE, N_SUBCARRIERS, SUBCARRIER_INDICES, ValidationError,
                   as_subcarriers, derive_rng)

SAMPLE_PERIOD_NS = 50.0

TAG_CODES = {"Flat": 0, "B": 1, "C": 2, "D": 3, "F": 4}
LOS_BIT = 0x10


@dataclass(frozen=True)
class ChannelModelSpec:
    tag: str
    rms_delay_spread_ns: float
    num_clusters: int
    num_taps: int
    los: bool = False
    sample_period_ns: float = SAMPLE_PERIOD_NS
    k_factor_db: float = 3.0

    def __post_init__(self):
        if self.tag not in TAG_CODES:
            raise ValidationError(f"unsupported channel model {self.tag!r}")
        if self.num_taps < 1 or self.num_clusters < 1:
            raise ValidationError("num_taps and num_clusters must be >= 1")

    @property
    def cluster_starts(self) -> list[int]:
        step = self.num_taps // (self.num_clusters + 1)
        return [c * step for c in range(self.num_clusters)]


# Table values: RMS delay spread (ns), clusters, taps.
CHANNEL_TABLE = {
    "B": (15.0, 2, 9),
    "C": (30.0, 2, 14),
    "D": (50.0, 3, 18),
    # Extreme profile; delays exceed the 800 ns cyclic prefix.
    "F": (150.0, 6, 18),
}

# Exponential decay constants (in samples) from calibrate_decay(spec, 20000, seed=0).
DECAY_SAMPLES = {
    "B": 0.3503,
    "C": 0.6114,
    "D": 0.9122,
    "F": 2.3622,
}


def model_spec(tag: str, los: bool = False, k_factor_db: float = 3.0,
               allow_extreme: bool = False) -> ChannelModelSpec:
    """Look up the tabulated parameters of a channel model."""
    if tag == "Flat":
        return ChannelModelSpec("Flat", 0.0, 1, 1, True, SAMPLE_PERIOD_NS, k_factor_db)
    if tag == "F" and not allow_extreme:
        raise ValidationError("model F requires allow_extreme=True")
    if tag not in CHANNEL_TABLE:
        raise ValidationError(f"unsupported channel model {tag!r}")
    spread, clusters, taps = CHANNEL_TABLE[tag]
    return ChannelModelSpec(tag, spread, clusters, taps, los, SAMPLE_PERIOD_NS, k_factor_db)


def export_table() -> str:
    """Channel parameter tables as JSON text."""
    rows = []
    for tag, (spread, clusters, taps) in CHANNEL_TABLE.items():
        rows.append({"tag": tag, "rms_delay_spread_ns": spread, "num_clusters": clusters,
                     "num_taps": taps, "decay_samples": DECAY_SAMPLES[tag],
                     "cluster_starts": model_spec(tag, allow_extreme=True).cluster_starts,
                     "sample_period_ns": SAMPLE_PERIOD_NS})
    return json.dumps(rows, indent=2)


def dft_at_active_bins(delays, gains) -> np.ndarray:
    """Frequency response of a tap sequence at the 52 active bins of the 64-point DFT."""
    delays = np.asarray(delays, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.complex128)
    phase = np.exp(-2j * np.pi * np.outer(SUBCARRIER_INDICES, delays) / FFT_SIZE)
    return phase @ gains


@dataclass(frozen=True)
class ChannelRealization:
    delays: tuple
    gains: tuple
    freq_response: np.ndarray
    model_tag: str = "Flat"
    los: bool = True
    filter_response: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "freq_response", as_subcarriers(self.freq_response, "freq_response"))
        if self.filter_response is not None:
            object.__setattr__(self, "filter_response",
                               as_subcarriers(self.filter_response, "filter_response"))

    @property
    def taps(self) -> list[tuple[int, complex]]:
        return list(zip(self.delays, self.gains))

    @property
    def tag_byte(self) -> int:
        return TAG_CODES[self.model_tag] | (LOS_BIT if self.los else 0)

    @classmethod
    def from_taps(cls, delays, gains, model_tag="Flat", los=True) -> "ChannelRealization":
        delays = tuple(int(d) for d in delays)
        gains = tuple(complex(g) for g in gains)
        return cls(delays, gains, dft_at_active_bins(delays, gains), model_tag, los)


def flat_channel() -> ChannelRealization:
    return ChannelRealization.from_taps([0], [1.0 + 0j], "Flat", True)


def tag_name(tag_byte: int) -> str:
    """Human-readable channel tag, e.g. ``'D-NLoS'``; ``'?'`` for unknown."""
    names = {v: k for k, v in TAG_CODES.items()}
    base = names.get(int(tag_byte) & 0x0F)
    if base is None or int(tag_byte) == 0xFF:
        return "?"
    if base == "Flat":
        return base
    return f"{base}-{'LoS' if int(tag_byte) & LOS_BIT else 'NLoS'}"


def power_delay_profile(spec: ChannelModelSpec, decay: float | None = None) -> np.ndarray:
    """Mean tap powers (not normalized) on delays 0..num_taps-1."""
    if spec.tag == "Flat":
        return np.ones(1)
    decay = DECAY_SAMPLES[spec.tag] if decay is None else decay
    d = np.arange(spec.num_taps)
    active = sum((d >= s).astype(float) for s in spec.cluster_starts)
    return active * np.exp(-d / decay)


def _draw_gains(spec: ChannelModelSpec, pdp: np.ndarray, rng: np.random.Generator,
                count: int, normalize: bool = True) -> np.ndarray:
    n = len(pdp)
    g = (rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))) * np.sqrt(pdp / 2)
    if spec.los:
        k = 10 ** (spec.k_factor_db / 10)
        phase = np.exp(2j * np.pi * rng.random(count))
        g[:, 0] = np.sqrt(pdp[0]) * (np.sqrt(k / (k + 1)) * phase + np.sqrt(1 / (k + 1)) * g[:, 0] / np.sqrt(pdp[0]))
    if normalize:
        g /= np.sqrt(np.sum(np.abs(g) ** 2, axis=1, keepdims=True))
    return g


def sample_channel(spec: ChannelModelSpec, seed: int, index: int = 0,
                   normalize: bool = True) -> ChannelRealization:
    """One seeded channel realization; ``index`` selects a derived stream so draws are order-independent.

    ``normalize`` scales the taps to unit total power. Without it the taps keep
    the profile's mean powers (summing to 1 on average), so per-bin responses
    are exactly complex Gaussian for NLoS draws.
    """
    if spec.tag == "Flat":
        return flat_channel()
    rng = derive_rng(seed, index, TAG_CODES[spec.tag], int(spec.los))
    pdp = power_delay_profile(spec)
    gains = _draw_gains(spec, pdp / (pdp.sum() if not normalize else 1.0), rng, 1, normalize)[0]
    return ChannelRealization.from_taps(range(spec.num_taps), gains, spec.tag, spec.los)


def sample_channels(spec: ChannelModelSpec, seed: int, count: int, normalize: bool = True) -> np.ndarray:
    """Frequency responses ``[count, 52]`` of ``count`` realizations, identical to ``sample_channel(spec, seed, i)``."""
    return np.stack([sample_channel(spec, seed, i, normalize).freq_response for i in range(count)])


def rms_delay_spread(delays, gains, sample_period_ns: float = SAMPLE_PERIOD_NS) -> np.ndarray:
    """RMS delay spread (ns) of one or many tap vectors (last axis = taps)."""
    p = np.abs(np.asarray(gains)) ** 2
    tau = np.asarray(delays, dtype=float) * sample_period_ns
    p = p / p.sum(axis=-1, keepdims=True)
    mean = (p * tau).sum(axis=-1)
    return np.sqrt(np.maximum((p * tau ** 2).sum(axis=-1) - mean ** 2, 0.0))


def calibrate_decay(spec: ChannelModelSpec, count: int = 20000, seed: int = 0) -> float:
    """Decay constant giving mean per-realization RMS spread equal to the tabulated value.

    Uses common random numbers across bisection steps so the search is monotone.
    """
    rng = np.random.default_rng(seed)
    n = spec.num_taps
    base = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    delays = np.arange(n)

    def mean_spread(decay):
        pdp = power_delay_profile(spec, decay)
        return rms_delay_spread(delays, base * np.sqrt(pdp / 2), spec.sample_period_ns).mean()

    lo, hi = 0.01, 50.0
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if mean_spread(mid) < spec.rms_delay_spread_ns:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


@dataclass(frozen=True)
class FilterResponse:
    response: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "response", as_subcarriers(self.response, "filter response"))


def compose_filter(ch: ChannelRealization, filt: FilterResponse) -> ChannelRealization:
    """Apply a filter response to a channel: the composite response is their elementwise product."""
    prior = ch.filter_response if ch.filter_response is not None else np.ones(N_SUBCARRIERS)
    return replace(ch, freq_response=ch.freq_response * filt.response,
                   filter_response=prior * filt.response)


# Pulse filter: unit gain for |k| <= 12, raised-cosine taper to -3 dB at |k| = 26,
# and a 3-sample group delay so the impulse response is causal on the tap grid.
PULSE_FLAT_EDGE = 12
PULSE_EDGE_DB = -3.0
PULSE_DELAY_SAMPLES = 3


@lru_cache(maxsize=1)
def _pulse_response() -> np.ndarray:
    k = np.abs(SUBCARRIER_INDICES).astype(float)
    edge_gain = 10 ** (PULSE_EDGE_DB / 20)
    x = np.clip((k - PULSE_FLAT_EDGE) / (26 - PULSE_FLAT_EDGE), 0.0, 1.0)
    mag = 1.0 - (1.0 - edge_gain) * np.sin(0.5 * np.pi * x) ** 2
    return mag * np.exp(-2j * np.pi * SUBCARRIER_INDICES * PULSE_DELAY_SAMPLES / FFT_SIZE)


def default_pulse_filter() -> FilterResponse:
    return FilterResponse(_pulse_response())
