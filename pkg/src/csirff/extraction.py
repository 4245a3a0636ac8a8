"""Model-based fingerprint extraction baselines and the distance study.

``extract_ss`` separates a sparse channel from the fingerprint by fitting the
first ``gate_taps`` time-domain taps to the active bins (the null bins are
unobserved, so the inverse DFT is solved in the least-squares sense) and
dividing the CSI by the fitted response. ``extract_dwt`` removes the coarsest
wavelet approximation, which carries the slowly varying multipath part.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import pywt

from .core import FFT_SIZE, N_SUBCARRIERS, SUBCARRIER_INDICES, ValidationError, as_subcarriers

ILL_CONDITIONED_FLOOR = 1e-9


class IllConditionedError(ValidationError):
    def __init__(self, bins):
        self.bins = list(bins)
        super().__init__(f"fitted channel response below {ILL_CONDITIONED_FLOOR} on bins {self.bins}")


@dataclass(frozen=True)
class ExtractionConfig:
    method: str = "SS"
    gate_taps: int = 8
    wavelet: str = "db4"
    dwt_level: int = 3
    strict: bool = False

    def __post_init__(self):
        if self.method not in ("SS", "DWT"):
            raise ValidationError(f"unknown extraction method {self.method!r}")
        if not 1 <= self.gate_taps <= 32:
            raise ValidationError("gate_taps must be in [1, 32]")
        if self.dwt_level < 1:
            raise ValidationError("dwt_level must be >= 1")


@lru_cache(maxsize=None)
def _tap_projector(gate_taps: int) -> tuple[np.ndarray, np.ndarray]:
    basis = np.exp(-2j * np.pi * np.outer(SUBCARRIER_INDICES, np.arange(gate_taps)) / FFT_SIZE)
    pinv = np.linalg.pinv(basis)
    basis.setflags(write=False)
    pinv.setflags(write=False)
    return basis, pinv


def gated_channel(csi, gate_taps: int) -> np.ndarray:
    """Response at the active bins of the best ``gate_taps``-tap fit to ``csi``."""
    basis, pinv = _tap_projector(gate_taps)
    return basis @ (pinv @ np.asarray(csi))


def extract_ss(csi, gate_taps: int = 8, strict: bool = False) -> np.ndarray:
    """Signal-space fingerprint estimate ``f_hat`` with ``1 + f_hat = csi / h_hat``."""
    csi = as_subcarriers(csi)
    h_hat = gated_channel(csi, gate_taps)
    small = np.flatnonzero(np.abs(h_hat) < ILL_CONDITIONED_FLOOR)
    if small.size:
        if strict:
            raise IllConditionedError(small.tolist())
        warnings.warn(f"flooring {small.size} ill-conditioned bins", RuntimeWarning, stacklevel=2)
        mag = np.abs(h_hat[small])
        phase = np.where(mag > 0, h_hat[small] / np.where(mag > 0, mag, 1), 1.0)
        h_hat = h_hat.copy()
        h_hat[small] = ILL_CONDITIONED_FLOOR * phase
    return csi / h_hat - 1.0


def _check_level(cfg: ExtractionConfig) -> None:
    if 2 ** cfg.dwt_level > N_SUBCARRIERS:
        raise ValidationError(f"dwt_level {cfg.dwt_level} too deep for {N_SUBCARRIERS} samples")


def dwt_decompose(x: np.ndarray, cfg: ExtractionConfig) -> list[np.ndarray]:
    _check_level(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # pywt warns beyond its boundary-effect level
        return pywt.wavedec(x, cfg.wavelet, mode="symmetric", level=cfg.dwt_level)


def dwt_reconstruct(coeffs: list[np.ndarray], cfg: ExtractionConfig) -> np.ndarray:
    return pywt.waverec(coeffs, cfg.wavelet, mode="symmetric")[:N_SUBCARRIERS]


def extract_dwt(csi, cfg: ExtractionConfig = ExtractionConfig(method="DWT")) -> np.ndarray:
    """Detail-only wavelet reconstruction of the CSI (real and imaginary parts separately)."""
    csi = as_subcarriers(csi)
    parts = []
    for x in (csi.real, csi.imag):
        coeffs = dwt_decompose(x, cfg)
        coeffs[0] = np.zeros_like(coeffs[0])
        parts.append(dwt_reconstruct(coeffs, cfg))
    return parts[0] + 1j * parts[1]


def extract(csi, cfg: ExtractionConfig) -> np.ndarray:
    if cfg.method == "SS":
        return extract_ss(csi, cfg.gate_taps, cfg.strict)
    return extract_dwt(csi, cfg)


@dataclass(frozen=True)
class DistanceStats:
    class_pair: str
    count: int
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple

    def row(self) -> dict:
        d = asdict(self)
        d["outliers"] = list(self.outliers)
        return d


def box_stats(values, class_pair: str) -> DistanceStats:
    """Tukey box-plot summary: whiskers reach the extreme data within 1.5 IQR of the box."""
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    out = v[(v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)]
    return DistanceStats(class_pair, len(v), float(q1), float(med), float(q3),
                         float(inside.min()), float(inside.max()), tuple(float(x) for x in out))


def pairwise_distances(fingerprints: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Intra- and inter-class Euclidean distances over all unordered pairs."""
    x = np.asarray(fingerprints)
    x = np.concatenate([x.real, x.imag], axis=1)
    labels = np.asarray(labels)
    sq = np.sum(x ** 2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    iu = np.triu_indices(len(x), k=1)
    d = np.sqrt(d2[iu])
    same = labels[iu[0]] == labels[iu[1]]
    return d[same], d[~same]


def distance_study(fingerprints: Sequence, labels: Sequence[int]) -> list[DistanceStats]:
    """Box-plot statistics of intra-class and inter-class fingerprint distances."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise ValidationError("distance study needs >= 2 classes with >= 2 samples each")
    intra, inter = pairwise_distances(np.asarray(fingerprints), labels)
    return [box_stats(intra, "intra"), box_stats(inter, "inter")]


def stats_to_text(stats: Sequence[DistanceStats], fmt: str = "json") -> str:
    if fmt == "csv":
        lines = ["class_pair,count,q1,median,q3,whisker_low,whisker_high,n_outliers"]
        for s in stats:
            lines.append(f"{s.class_pair},{s.count},{s.q1!r},{s.median!r},{s.q3!r},"
                         f"{s.whisker_low!r},{s.whisker_high!r},{len(s.outliers)}")
        return "\n".join(lines) + "\n"
    return json.dumps([s.row() for s in stats], indent=2)
