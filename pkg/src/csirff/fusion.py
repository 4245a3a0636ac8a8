"""Decision fusion over several CSI measurements, evaluation reports and feature heatmaps."""
from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CsiDataset, ValidationError
from .net import Decision

METHODS = ("ap", "mv", "bc", "data")


@dataclass
class FusionGroup:
    """Member probability vectors ``[N_c, M]`` of one fusion window."""

    probs: np.ndarray
    group_key: tuple = ()

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if self.probs.ndim != 2 or self.probs.shape[0] < 1:
            raise ValidationError("a fusion group needs at least one decision")

    @classmethod
    def from_decisions(cls, decisions, group_key: tuple = ()) -> "FusionGroup":
        return cls(np.stack([d.probs for d in decisions]), group_key)

    @property
    def size(self) -> int:
        return self.probs.shape[0]


def _as_probs(group) -> np.ndarray:
    return group.probs if isinstance(group, FusionGroup) else FusionGroup(group).probs


def _break_ties(scores: np.ndarray, mean_probs: np.ndarray) -> int:
    """Highest score, then higher mean probability, then lowest index."""
    top = np.flatnonzero(scores == scores.max())
    if len(top) == 1:
        return int(top[0])
    sub = mean_probs[top]
    return int(top[np.flatnonzero(sub == sub.max())[0]])


def _decision(probs: np.ndarray, label: int) -> Decision:
    d = Decision(probs)
    d.label = label
    return d


def fuse_ap(group) -> Decision:
    """Average probabilities; label is the argmax of the column sums (lowest index on ties)."""
    p = _as_probs(group)
    mean = p.mean(axis=0)
    return _decision(mean, int(np.argmax(p.sum(axis=0))))


def fuse_mv(group) -> Decision:
    """Plurality of member labels; ties go to the higher mean probability, then the lower index."""
    p = _as_probs(group)
    votes = np.bincount(p.argmax(axis=1), minlength=p.shape[1])
    mean = p.mean(axis=0)
    return _decision(mean, _break_ties(votes, mean))


def borda_scores(probs: np.ndarray) -> np.ndarray:
    """Full Borda count: rank ``r`` (0 = most probable) earns ``M - 1 - r`` points.

    Within one voter, equal probabilities rank the lower class index first.
    """
    p = np.atleast_2d(probs)
    m = p.shape[1]
    order = np.argsort(-p, axis=1, kind="stable")
    points = np.empty_like(order)
    rows = np.arange(p.shape[0])[:, None]
    points[rows, order] = m - 1 - np.arange(m)[None, :]
    return points.sum(axis=0)


def fuse_bc(group) -> Decision:
    p = _as_probs(group)
    mean = p.mean(axis=0)
    return _decision(mean, _break_ties(borda_scores(p), mean))


FUSERS = {"ap": fuse_ap, "mv": fuse_mv, "bc": fuse_bc}


def fuse(group, method: str) -> Decision:
    if method not in FUSERS:
        raise ValidationError(f"unknown fusion method {method!r}")
    return FUSERS[method](group)


def fuse_data(records, net) -> Decision:
    """Average the raw complex CSI of ``records`` and classify the mean once."""
    if len(records) == 0:
        raise ValidationError("no records to fuse")
    csi = records.csi if isinstance(records, CsiDataset) else np.stack([r.csi for r in records])
    return Decision(net.predict_proba(csi.mean(axis=0, keepdims=True))[0])


# --- evaluation -------------------------------------------------------------------------

def fusion_windows(data: CsiDataset, n_csi: int, n_rx: int) -> tuple[list[np.ndarray], int, int]:
    """Index groups of ``n_csi`` consecutive records from each of ``n_rx`` rx chains.

    Records are grouped by (device, position); within a key the rx chains are
    taken in ascending order, ``n_rx`` at a time, and windows advance in record
    order. Returns ``(groups, dropped_groups, dropped_records)``; a leftover
    that cannot fill a whole window is dropped and counted.
    """
    if n_csi < 1 or n_rx < 1:
        raise ValidationError("n_csi and n_rx must be >= 1")
    groups, dropped_groups, dropped_records = [], 0, 0
    keys = np.stack([data.device_id, data.position_id], axis=1)
    for key in np.unique(keys, axis=0):
        sel = np.flatnonzero((keys == key).all(axis=1))
        chains = [sel[data.rx_index[sel] == rx] for rx in np.unique(data.rx_index[sel])]
        used = len(chains) - len(chains) % n_rx
        for extra in chains[used:]:
            dropped_groups += 1
            dropped_records += len(extra)
        for lo in range(0, used, n_rx):
            block = chains[lo:lo + n_rx]
            n_win = min(len(c) for c in block) // n_csi
            for w in range(n_win):
                groups.append(np.concatenate([c[w * n_csi:(w + 1) * n_csi] for c in block]))
            leftover = sum(len(c) for c in block) - n_win * n_csi * n_rx
            if leftover:
                dropped_groups += 1
                dropped_records += leftover
    return groups, dropped_groups, dropped_records


SLICE_KEYS = ("snr_db", "channel_tag", "position_id")


def _slice_value(values: np.ndarray):
    first = values[0]
    same = np.all(values == first) or (isinstance(first, float) and np.all(np.isnan(values)))
    if not same:
        return "mixed"
    if isinstance(first, (float, np.floating)):
        return "nan" if math.isnan(first) else f"{float(first):g}"
    return str(int(first))


@dataclass
class EvalReport:
    num_classes: int
    confusion: np.ndarray
    slices: dict = field(default_factory=dict)
    n_groups: int = 0
    dropped_groups: int = 0
    dropped_records: int = 0
    method: str = "ap"
    n_csi: int = 1
    n_rx: int = 1

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def per_class_accuracy(self) -> np.ndarray:
        s = self.support
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(s > 0, np.diag(self.confusion) / np.maximum(s, 1), np.nan)

    @property
    def mean_accuracy(self) -> float:
        """Mean of the per-class accuracies over classes with support."""
        acc = self.per_class_accuracy
        return float(np.nanmean(acc)) if np.any(~np.isnan(acc)) else math.nan

    @property
    def overall_accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else math.nan

    @property
    def min_accuracy(self) -> float:
        return float(np.nanmin(self.per_class_accuracy))

    @property
    def max_accuracy(self) -> float:
        return float(np.nanmax(self.per_class_accuracy))

    def rows(self) -> list[dict]:
        """One row per slice (the ``all`` slice first)."""
        out = [{"slice": "all", "value": "all", "groups": self.n_groups,
                "correct": int(np.trace(self.confusion)), "accuracy": self.overall_accuracy,
                "mean_class_accuracy": self.mean_accuracy}]
        for name in sorted(self.slices):
            for value, (correct, total) in sorted(self.slices[name].items()):
                out.append({"slice": name, "value": value, "groups": total, "correct": correct,
                            "accuracy": correct / total if total else math.nan,
                            "mean_class_accuracy": math.nan})
        return out

    def to_dict(self) -> dict:
        return {"method": self.method, "n_csi": self.n_csi, "n_rx": self.n_rx,
                "num_classes": self.num_classes, "n_groups": self.n_groups,
                "dropped_groups": self.dropped_groups, "dropped_records": self.dropped_records,
                "mean_accuracy": self.mean_accuracy, "overall_accuracy": self.overall_accuracy,
                "min_class_accuracy": self.min_accuracy, "max_class_accuracy": self.max_accuracy,
                "per_class_accuracy": [None if math.isnan(a) else float(a) for a in self.per_class_accuracy],
                "confusion": self.confusion.tolist(), "slices": self.rows()[1:]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.rows()[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()

    def summary(self) -> str:
        return (f"{self.method} n_csi={self.n_csi} n_rx={self.n_rx}: mean accuracy "
                f"{self.mean_accuracy:.4f} (min {self.min_accuracy:.4f}, max {self.max_accuracy:.4f}) "
                f"over {self.n_groups} groups, {self.dropped_groups} dropped")


def evaluate(model, data: CsiDataset, fusion: str = "ap", n_csi: int = 1, n_rx: int = 1,
             group_by=SLICE_KEYS, num_classes: int | None = None, probs: np.ndarray | None = None) -> EvalReport:
    """Classify ``data`` in fusion windows of ``n_csi * n_rx`` records and tabulate accuracy.

    ``model`` needs ``predict_dataset(data) -> probs``; for ``fusion="data"``
    also ``predict_proba(csi)``. Precomputed per-record ``probs`` may be passed
    to evaluate several fusion settings without re-running the model.
    """
    if fusion not in METHODS:
        raise ValidationError(f"unknown fusion method {fusion!r}")
    unknown = set(group_by) - set(SLICE_KEYS)
    if unknown:
        raise ValidationError(f"unknown slice keys {sorted(unknown)}")
    if num_classes is None:
        num_classes = model.num_classes if hasattr(model, "num_classes") else model.config.num_classes
    groups, dropped_groups, dropped_records = fusion_windows(data, n_csi, n_rx)
    if fusion != "data" and probs is None and len(data):
        probs = model.predict_dataset(data)
    confusion = np.zeros((num_classes, num_classes), np.int64)
    slices = {k: {} for k in group_by}
    for idx in groups:
        truth = int(data.device_id[idx[0]])
        if fusion == "data":
            label = fuse_data(data[idx], model).label
        else:
            label = FUSERS[fusion](FusionGroup(probs[idx])).label
        confusion[truth, label] += 1
        for k in group_by:
            value = _slice_value(getattr(data, k)[idx])
            correct, total = slices[k].get(value, (0, 0))
            slices[k][value] = (correct + int(label == truth), total + 1)
    return EvalReport(num_classes, confusion, slices, len(groups), dropped_groups, dropped_records,
                      fusion, n_csi, n_rx)


# --- feature heatmaps -------------------------------------------------------------------

def minmax_rows(matrix: np.ndarray) -> np.ndarray:
    """Min-max normalize each row to [0, 1]; a constant row maps to 0.5."""
    m = np.asarray(matrix, dtype=np.float64)
    lo = m.min(axis=1, keepdims=True)
    span = m.max(axis=1, keepdims=True) - lo
    return np.where(span > 0, (m - lo) / np.where(span > 0, span, 1.0), 0.5)


def export_feature_heatmap(net, records, path=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-record normalized extractor output ``r``; optionally written as CSV rows ``id, r_0..r_51``.

    Records run one at a time so a row never depends on its batch neighbours.
    """
    csi = records.csi if isinstance(records, CsiDataset) else np.stack([r.csi for r in records])
    rows = minmax_rows(net.features(csi, batch_size=1))
    ids = np.arange(len(rows))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record"] + [f"r{k}" for k in range(rows.shape[1])])
            for i, row in zip(ids, rows):
                w.writerow([int(i)] + [f"{v:.6f}" for v in row])
    return ids, rows


def mean_pairwise_correlation(rows: np.ndarray) -> float:
    """Mean Pearson correlation over all distinct row pairs."""
    c = np.corrcoef(np.asarray(rows, dtype=np.float64))
    iu = np.triu_indices(len(c), 1)
    return float(np.nanmean(c[iu]))
