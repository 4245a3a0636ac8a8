"""File formats: CSIR record files, checkpoints, run configuration, external import.

CSIR layout (little-endian)::

    magic  b"CSIR"
    u16    version (1)
    u64    record count
    record * count:
        u16 device_id, u8 position_id, u8 rx_index, u8 channel_tag, u8 reserved,
        f32 snr_db (NaN = unknown), 52 x (f32 real, f32 imag)

A file whose size is not header + count * record size is rejected: a partial
final record is a truncation, a whole-record surplus or deficit is a count
mismatch.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import FFT_BINS, FFT_SIZE, N_SUBCARRIERS, CsiDataset, CsiRecord, ValidationError

MAGIC = b"CSIR"
VERSION = 1
HEADER = struct.Struct("<4sHQ")
RECORD_DTYPE = np.dtype([
    ("device_id", "<u2"), ("position_id", "u1"), ("rx_index", "u1"),
    ("channel_tag", "u1"), ("reserved", "u1"), ("snr_db", "<f4"),
    ("csi", "<f4", (2 * N_SUBCARRIERS,)),
])
RECORD_SIZE = RECORD_DTYPE.itemsize


class CsirError(ValidationError):
    """Base class for malformed CSIR files."""


class BadMagicError(CsirError):
    pass


class TruncatedError(CsirError):
    pass


class CountMismatchError(CsirError):
    pass


def _to_rows(data: CsiDataset) -> np.ndarray:
    limits = {"device_id": 0xFFFF, "position_id": 0xFF, "rx_index": 0xFF, "channel_tag": 0xFF}
    rows = np.zeros(len(data), RECORD_DTYPE)
    for name, hi in limits.items():
        col = getattr(data, name)
        if len(col) and (col.min() < 0 or col.max() > hi):
            raise ValidationError(f"{name} out of range [0, {hi}]")
        rows[name] = col
    rows["snr_db"] = data.snr_db
    inter = np.empty((len(data), 2 * N_SUBCARRIERS), np.float32)
    inter[:, 0::2] = data.csi.real
    inter[:, 1::2] = data.csi.imag
    rows["csi"] = inter
    return rows


def _from_rows(rows: np.ndarray) -> CsiDataset:
    c = rows["csi"].astype(np.float64)
    return CsiDataset(c[:, 0::2] + 1j * c[:, 1::2], rows["device_id"], rows["position_id"],
                      rows["rx_index"], rows["channel_tag"], rows["snr_db"].astype(np.float64))


class CsirWriter:
    """Streaming writer; the declared count must equal the records written by close()."""

    def __init__(self, path, count: int):
        if count < 0:
            raise ValidationError("record count must be non-negative")
        self.path = os.fspath(path)
        self.count = int(count)
        self.written = 0
        self._fh = open(self.path, "wb")
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.count))

    def write(self, data) -> None:
        if isinstance(data, CsiRecord):
            data = CsiDataset.from_records([data])
        if self.written + len(data) > self.count:
            raise CountMismatchError(f"writing more than the declared {self.count} records")
        self._fh.write(_to_rows(data).tobytes())
        self.written += len(data)

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.close()
        if self.written != self.count:
            raise CountMismatchError(f"declared {self.count} records, wrote {self.written}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False


def write_csir(path, data: CsiDataset) -> None:
    with CsirWriter(path, len(data)) as w:
        w.write(data)


def read_header(path) -> int:
    """Validate a CSIR file's header and size; return its record count."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    if len(head) < 4 or head[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a CSIR file")
    if len(head) < HEADER.size:
        raise TruncatedError(f"{path}: header truncated")
    _, version, count = HEADER.unpack(head)
    if version != VERSION:
        raise CsirError(f"{path}: unsupported version {version}")
    body = size - HEADER.size
    if body % RECORD_SIZE:
        raise TruncatedError(f"{path}: partial record at end of file")
    if body // RECORD_SIZE != count:
        raise CountMismatchError(f"{path}: header declares {count} records, file holds {body // RECORD_SIZE}")
    return count


def iter_csir(path, chunk_size: int = 4096) -> Iterator[CsiDataset]:
    """Stream a CSIR file in chunks of at most ``chunk_size`` records."""
    count = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(HEADER.size)
        remaining = count
        while remaining:
            n = min(chunk_size, remaining)
            buf = fh.read(n * RECORD_SIZE)
            if len(buf) != n * RECORD_SIZE:
                raise TruncatedError(f"{path}: file shrank while reading")
            yield _from_rows(np.frombuffer(buf, RECORD_DTYPE))
            remaining -= n


def iter_records(path) -> Iterator[CsiRecord]:
    for chunk in iter_csir(path):
        yield from chunk.records()


def read_csir(path) -> CsiDataset:
    return CsiDataset.concat(list(iter_csir(path)))


# --- checkpoints ----------------------------------------------------------------

CKPT_MAGIC = b"CSRFCKPT"


class LabelOracle:
    """A classifier that reads the true label; used to validate evaluation plumbing."""

    def __init__(self, num_classes: int):
        self.num_classes = int(num_classes)

    def predict_dataset(self, data: CsiDataset) -> np.ndarray:
        probs = np.zeros((len(data), self.num_classes))
        probs[np.arange(len(data)), data.device_id] = 1.0
        return probs


def _write_blob(path, manifest: dict, arrays: "OrderedDict[str, np.ndarray]") -> None:
    entries, offset = [], 0
    payload = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"))
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": a.nbytes})
        payload.append(a.tobytes())
        offset += a.nbytes
    head = json.dumps(dict(manifest, arrays=entries), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<Q", len(head)) + head)
        for b in payload:
            fh.write(b)


def _read_blob(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint")
    start = len(CKPT_MAGIC) + 8
    if len(data) < start:
        raise TruncatedError(f"{path}: checkpoint header truncated")
    (n,) = struct.unpack("<Q", data[len(CKPT_MAGIC):start])
    manifest = json.loads(data[start:start + n])
    base = start + n
    arrays = OrderedDict()
    for e in manifest.pop("arrays"):
        lo = base + e["offset"]
        if lo + e["nbytes"] > len(data):
            raise TruncatedError(f"{path}: array {e['name']} truncated")
        arrays[e["name"]] = np.frombuffer(data[lo:lo + e["nbytes"]], dtype=e["dtype"]).reshape(e["shape"]).copy()
    return manifest, arrays


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    """Write a network (or a :class:`LabelOracle`) with a JSON manifest."""
    if isinstance(model, LabelOracle):
        _write_blob(path, {"kind": "oracle", "num_classes": model.num_classes, "extra": extra or {}},
                    OrderedDict())
        return
    manifest = {"kind": "net", "config": model.config.to_dict(), "dtype": model.dtype.str,
                "heads": sorted({k.split(".")[0] for k in model.params} & {"proj", "cls"}),
                "extra": extra or {}}
    _write_blob(path, manifest, model.state_dict())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, manifest)``."""
    from .net import FingerprintNet, NetworkConfig

    manifest, arrays = _read_blob(path)
    kind = manifest.get("kind")
    if kind == "oracle":
        return LabelOracle(manifest["num_classes"]), manifest
    if kind != "net":
        raise CsirError(f"{path}: unknown checkpoint kind {kind!r}")
    net = FingerprintNet(NetworkConfig.from_dict(manifest["config"]), dtype=np.dtype(manifest["dtype"]),
                         heads=tuple(manifest["heads"]))
    net.load_state_dict(arrays)
    return net, manifest


# --- run configuration -------------------------------------------------------------

#: Every key with its default. Sections mirror the augmentation plan, network,
#: training and fusion settings.
DEFAULT_CONFIG = {
    "synth": {
        "devices": 5,              # number of planted fingerprints
        "sigma_f": 0.02,           # fingerprint deviation RMS
        "model": "D",              # channel model of synthesized records
        "los": False,
        "snr_db": 30.0,
        "count": 1000,             # records per device
        "filter": True,            # compose the default pulse-shaping filter
    },
    "augment": {
        "strategy": "denoised",
        "channel_types": [["B", True], ["B", False], ["C", True], ["C", False], ["D", True], ["D", False]],
        "snr_grid_db": [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
        "realizations_per_type": 100,
        "denoise_window": 100,
    },
    "network": {
        "input_encoding": "IQ",
        "conv_filters": 64,
        "branch_filters": [24, 24, 16],
        "branch_widths": [1, 3, 5],
        "reduce_channels": 32,
        "normalize_input": False,
    },
    "train": {
        "lr": 1e-3,
        "weight_decay": 1e-4,
        "batch_size": 512,
        "patience": 10,
        "tau": 0.07,
        "max_epochs": 30,
        "float32": True,
        "use_supcon": True,
        "freeze_extractor": False,
        "split": [0.8, 0.1, 0.1],
    },
    "fusion": {
        "method": "ap",
        "n_csi": 1,
        "n_rx": 1,
    },
    "seed": 0,
}


@dataclass
class RunConfig:
    """JSON run configuration; unknown sections or keys are rejected."""

    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        values = copy.deepcopy(DEFAULT_CONFIG)
        for key, val in doc.items():
            if key not in DEFAULT_CONFIG:
                raise ValidationError(f"unknown config key {key!r}")
            if isinstance(DEFAULT_CONFIG[key], dict):
                if not isinstance(val, dict):
                    raise ValidationError(f"config section {key!r} must be an object")
                for sub, v in val.items():
                    if sub not in DEFAULT_CONFIG[key]:
                        raise ValidationError(f"unknown config key {key}.{sub}")
                    values[key][sub] = v
            else:
                values[key] = val
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def serialize(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True) + "\n"

    def __getitem__(self, key):
        return self.values[key]

    def augment_plan(self):
        from .augment import AugmentPlan

        a = self.values["augment"]
        return AugmentPlan.from_dict({"strategy": a["strategy"], "channel_types": a["channel_types"],
                                      "snr_grid_db": a["snr_grid_db"],
                                      "realizations_per_type": a["realizations_per_type"],
                                      "base_seed": self.values["seed"]})

    def network_config(self, num_classes: int):
        from .net import NetworkConfig

        return NetworkConfig.from_dict(dict(self.values["network"], num_classes=num_classes))

    def train_config(self):
        from .training import TrainConfig

        t = self.values["train"]
        keys = ("lr", "weight_decay", "batch_size", "patience", "tau", "max_epochs", "float32",
                "freeze_extractor")
        return TrainConfig(seed=self.values["seed"], **{k: t[k] for k in keys})


# --- external import ----------------------------------------------------------------

@dataclass
class ImportReport:
    rows_read: int = 0
    rows_written: int = 0
    rejected: dict = field(default_factory=dict)
    anticausal_fraction: float = math.nan
    iq_swap_suspected: bool = False

    def reject(self, reason: str) -> None:
        self.rejected[reason] = self.rejected.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {"rows_read": self.rows_read, "rows_written": self.rows_written,
                "rejected": dict(sorted(self.rejected.items())),
                "anticausal_fraction": self.anticausal_fraction,
                "iq_swap_suspected": self.iq_swap_suspected}


def anticausal_fraction(csi: np.ndarray) -> float:
    """Share of delay-domain energy in the upper half of the 64-tap window.

    Physical CSI is causal, so its energy sits at small positive delays. Swapping
    I and Q (``b + ja = j * conj(a + jb)``) mirrors the delay profile into the
    negative delays, which wrap to the upper half.
    """
    csi = np.asarray(csi).reshape(-1, N_SUBCARRIERS)
    grid = np.zeros((len(csi), FFT_SIZE), np.complex128)
    grid[:, FFT_BINS] = csi
    taps = np.abs(np.fft.ifft(grid, axis=1)) ** 2
    upper = taps[:, FFT_SIZE // 2:].sum()
    total = taps.sum()
    return float(upper / total) if total > 0 else math.nan


def _parse_complex_list(cell: str) -> np.ndarray:
    return np.array([complex(tok) for tok in cell.replace(",", " ").split()], dtype=np.complex128)


def import_external(path, mapping: dict, out_path) -> ImportReport:
    """Convert an external dataset to a CSIR file according to ``mapping``.

    ``mapping["format"]`` is ``"csir"`` (identity copy, validated) or ``"csv"``.
    For CSV, ``mapping["columns"]`` maps record fields (``device_id``,
    ``position_id``, ``rx_index``, ``snr_db``, ``channel_tag``) to column names;
    CSI comes either from ``mapping["csi_column"]`` (one cell of 52
    space-separated complex numbers) or from ``mapping["real_columns"]`` and
    ``mapping["imag_columns"]`` (format strings taking the subcarrier number
    0..51). Ill-formed rows are dropped and counted by reason.
    """
    fmt = mapping.get("format")
    report = ImportReport()
    if fmt == "csir":
        data = read_csir(path)
        report.rows_read = report.rows_written = len(data)
        report.anticausal_fraction = anticausal_fraction(data.csi) if len(data) else math.nan
        report.iq_swap_suspected = bool(report.anticausal_fraction > 0.5)
        write_csir(out_path, data)
        return report
    if fmt != "csv":
        raise ValidationError(f"unmappable layout: format {fmt!r}")
    columns = mapping.get("columns", {})
    unknown = set(columns) - {"device_id", "position_id", "rx_index", "snr_db", "channel_tag"}
    if unknown or "device_id" not in columns:
        raise ValidationError(f"unmappable layout: columns {sorted(unknown) or 'missing device_id'}")
    csi_col = mapping.get("csi_column")
    re_fmt, im_fmt = mapping.get("real_columns"), mapping.get("imag_columns")
    if (csi_col is None) == (re_fmt is None or im_fmt is None):
        raise ValidationError("unmappable layout: give csi_column or real_columns + imag_columns")

    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=mapping.get("delimiter", ","))
        needed = list(columns.values()) + ([csi_col] if csi_col else
                                           [re_fmt.format(k) for k in range(N_SUBCARRIERS)]
                                           + [im_fmt.format(k) for k in range(N_SUBCARRIERS)])
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"unmappable layout: missing columns {missing[:5]}")
        for row in reader:
            report.rows_read += 1
            try:
                if csi_col:
                    csi = _parse_complex_list(row[csi_col])
                else:
                    csi = np.array([complex(float(row[re_fmt.format(k)]), float(row[im_fmt.format(k)]))
                                    for k in range(N_SUBCARRIERS)])
            except (ValueError, TypeError):
                report.reject("unparsable_csi")
                continue
            if csi.shape != (N_SUBCARRIERS,):
                report.reject(f"subcarriers_{len(csi)}")
                continue
            if not np.all(np.isfinite(csi)):
                report.reject("non_finite")
                continue
            try:
                meta = {k: row[c] for k, c in columns.items()}
                rec = CsiRecord(csi, int(meta["device_id"]), int(meta.get("position_id", 0)),
                                int(meta.get("rx_index", 0)),
                                float(meta["snr_db"]) if meta.get("snr_db", "") != "" else math.nan,
                                int(meta.get("channel_tag", 0xFF)))
            except (ValueError, ValidationError):
                report.reject("bad_metadata")
                continue
            records.append(rec)
    data = CsiDataset.from_records(records)
    try:
        write_csir(out_path, data)
    except ValidationError:
        raise ValidationError("unmappable layout: metadata out of CSIR field ranges") from None
    report.rows_written = len(data)
    if len(data):
        report.anticausal_fraction = anticausal_fraction(data.csi)
        report.iq_swap_suspected = bool(report.anticausal_fraction > 0.5)
    return report
