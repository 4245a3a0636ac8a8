"""Convolutional fingerprint identifier: extractor, projection head, classifier.

The extractor maps a ``[1, 2, 52]`` CSI image (I/Q or amplitude/phase rows)
to a 52-d representation ``r``::

    conv 64@1x3 -> GELU -> conv 64@2x3 (collapses the 2 rows) -> GELU
    -> spatial block x2 -> conv 32@1x1 -> GELU -> flatten -> dense 52

A spatial block runs 1x1, 1x3 and 1x5 convolutions in parallel (24, 24 and 16
filters), concatenates them to 64 channels, applies GELU and one layer norm
over the channel axis. The subcarrier axis keeps width 52 throughout.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor
from .autodiff import functional as F
from .core import N_SUBCARRIERS, ValidationError

ENCODINGS = ("IQ", "AmpPhase")


@dataclass(frozen=True)
class NetworkConfig:
    input_encoding: str = "IQ"
    num_classes: int = 19
    embed_dim: int = N_SUBCARRIERS
    conv_filters: int = 64
    branch_filters: tuple = (24, 24, 16)
    branch_widths: tuple = (1, 3, 5)
    reduce_channels: int = 32
    normalize_input: bool = False

    def __post_init__(self):
        if self.input_encoding not in ENCODINGS:
            raise ValidationError(f"unknown input encoding {self.input_encoding!r}")
        if self.embed_dim != N_SUBCARRIERS:
            raise ValidationError("embed_dim must equal the number of subcarriers (52)")
        if sum(self.branch_filters) != self.conv_filters:
            raise ValidationError("branch filters must sum to conv_filters")
        object.__setattr__(self, "branch_filters", tuple(self.branch_filters))
        object.__setattr__(self, "branch_widths", tuple(self.branch_widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_filters"] = list(self.branch_filters)
        d["branch_widths"] = list(self.branch_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        for key in ("branch_filters", "branch_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


PARAM_BUDGET = 125_000
PARAM_TOLERANCE = 0.25


def encode_input(csi, encoding: str = "IQ", normalize: bool = False) -> np.ndarray:
    """Complex CSI ``[..., 52]`` -> real image ``[N, 1, 2, 52]``.

    Row 0 is the real part (or amplitude), row 1 the imaginary part (or phase in
    (-pi, pi]). ``normalize`` divides each record by its RMS magnitude.
    """
    c = np.asarray(csi, dtype=np.complex128).reshape(-1, N_SUBCARRIERS)
    if normalize:
        rms = np.sqrt(np.mean(np.abs(c) ** 2, axis=1, keepdims=True))
        c = c / np.where(rms > 0, rms, 1.0)
    if encoding == "IQ":
        rows = (c.real, c.imag)
    elif encoding == "AmpPhase":
        phase = np.angle(c)
        rows = (np.abs(c), np.where(phase <= -np.pi, np.pi, phase))
    else:
        raise ValidationError(f"unknown input encoding {encoding!r}")
    return np.stack(rows, axis=1)[:, None, :, :]


def decode_input(image, encoding: str = "IQ") -> np.ndarray:
    """Inverse of :func:`encode_input` (without normalization)."""
    img = np.asarray(image).reshape(-1, 2, N_SUBCARRIERS)
    if encoding == "IQ":
        return img[:, 0] + 1j * img[:, 1]
    return img[:, 0] * np.exp(1j * img[:, 1])


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class Embedding:
    r: np.ndarray
    z: np.ndarray | None = None


@dataclass
class Decision:
    probs: np.ndarray
    label: int = field(init=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.label = argmax_lowest(self.probs)


def argmax_lowest(values) -> int:
    """Argmax with ties resolved to the lowest index."""
    return int(np.argmax(np.asarray(values)))


class FingerprintNet:
    """Extractor plus optional projection head and classifier, parameters keyed by name."""

    EXTRACTOR_PREFIXES = ("conv1", "conv2", "block1", "block2", "reduce", "fc")

    def __init__(self, config: NetworkConfig = NetworkConfig(), seed: int = 0,
                 dtype=np.float64, heads: tuple = ("proj", "cls")):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c = config.conv_filters
        p: OrderedDict[str, Tensor] = OrderedDict()

        def conv(name, out_ch, in_ch, kh, kw):
            fan = in_ch * kh * kw
            p[f"{name}.w"] = Tensor(_uniform(rng, (out_ch, in_ch, kh, kw), fan, self.dtype), True, f"{name}.w")
            p[f"{name}.b"] = Tensor(_uniform(rng, (out_ch,), fan, self.dtype), True, f"{name}.b")

        def dense(name, d_in, d_out):
            p[f"{name}.w"] = Tensor(_uniform(rng, (d_in, d_out), d_in, self.dtype), True, f"{name}.w")
            p[f"{name}.b"] = Tensor(_uniform(rng, (d_out,), d_in, self.dtype), True, f"{name}.b")

        conv("conv1", c, 1, 1, 3)
        conv("conv2", c, c, 2, 3)
        for blk in ("block1", "block2"):
            for nf, kw in zip(config.branch_filters, config.branch_widths):
                conv(f"{blk}.k{kw}", nf, c, 1, kw)
            p[f"{blk}.ln.gain"] = Tensor(np.ones(c, self.dtype), True, f"{blk}.ln.gain")
            p[f"{blk}.ln.bias"] = Tensor(np.zeros(c, self.dtype), True, f"{blk}.ln.bias")
        conv("reduce", config.reduce_channels, c, 1, 1)
        dense("fc", config.reduce_channels * N_SUBCARRIERS, config.embed_dim)
        # Heads draw from their own streams so the extractor init does not depend on them.
        head_rng = np.random.default_rng([seed, 1])
        rng = head_rng
        if "proj" in heads:
            dense("proj", config.embed_dim, config.embed_dim)
        if "cls" in heads:
            dense("cls", config.embed_dim, config.num_classes)
        self.params = p

    # --- parameter bookkeeping -------------------------------------------------
    def parameters(self, prefixes=None) -> list[Tensor]:
        if prefixes is None:
            return list(self.params.values())
        return [t for k, t in self.params.items() if k.split(".")[0] in prefixes]

    def extractor_parameters(self) -> list[Tensor]:
        return self.parameters(self.EXTRACTOR_PREFIXES)

    def num_parameters(self, prefixes=None) -> int:
        return sum(t.size for t in self.parameters(prefixes))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data.copy()) for k, t in self.params.items())

    def load_state_dict(self, state, strict: bool = True) -> None:
        for k, v in state.items():
            if k not in self.params:
                if strict:
                    raise ValidationError(f"unexpected parameter {k!r}")
                continue
            if tuple(v.shape) != self.params[k].shape:
                raise ValidationError(f"parameter {k!r} shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)
        if strict:
            missing = set(self.params) - set(state)
            if missing:
                raise ValidationError(f"missing parameters {sorted(missing)}")

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # --- forward ---------------------------------------------------------------
    def encode(self, csi) -> Tensor:
        return Tensor(encode_input(csi, self.config.input_encoding, self.config.normalize_input)
                      .astype(self.dtype))

    def _conv(self, x, name, pad_w, pad_h=0):
        return F.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], (pad_h, pad_w))

    def _spatial_block(self, x, blk):
        branches = [self._conv(x, f"{blk}.k{kw}", kw // 2) for kw in self.config.branch_widths]
        h = F.gelu(F.concat(branches, axis=1))
        return F.layer_norm(h, (1,), self.params[f"{blk}.ln.gain"], self.params[f"{blk}.ln.bias"])

    def extract(self, x: Tensor) -> Tensor:
        """Representation ``r[N, 52]`` of an encoded batch ``x[N, 1, 2, 52]``."""
        if x.data.ndim != 4 or x.shape[1:] != (1, 2, N_SUBCARRIERS):
            raise ValidationError(f"expected input [N, 1, 2, 52], got {x.shape}")
        h = F.gelu(self._conv(x, "conv1", 1))
        h = F.gelu(self._conv(h, "conv2", 1))
        h = self._spatial_block(h, "block1")
        h = self._spatial_block(h, "block2")
        h = F.gelu(self._conv(h, "reduce", 0))
        h = F.reshape(h, (h.shape[0], -1))
        return F.dense(h, self.params["fc.w"], self.params["fc.b"])

    def project(self, r: Tensor) -> Tensor:
        return F.l2_normalize(F.dense(r, self.params["proj.w"], self.params["proj.b"]))

    def logits(self, r: Tensor) -> Tensor:
        return F.dense(r, self.params["cls.w"], self.params["cls.b"])

    def classify(self, r: Tensor) -> Tensor:
        return F.softmax(self.logits(r))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor | None]:
        r = self.extract(x)
        probs = self.classify(r) if "cls.w" in self.params else None
        return r, probs

    def predict_proba(self, csi, batch_size: int = 1024) -> np.ndarray:
        c = np.asarray(csi).reshape(-1, N_SUBCARRIERS)
        out = []
        for lo in range(0, len(c), batch_size):
            _, probs = self.forward(self.encode(c[lo:lo + batch_size]))
            out.append(probs.data.astype(np.float64))
        return np.concatenate(out) if out else np.zeros((0, self.config.num_classes))

    def predict_dataset(self, data) -> np.ndarray:
        return self.predict_proba(data.csi)

    def features(self, csi, batch_size: int = 1024) -> np.ndarray:
        c = np.asarray(csi).reshape(-1, N_SUBCARRIERS)
        return np.concatenate([self.extract(self.encode(c[lo:lo + batch_size])).data
                               for lo in range(0, len(c), batch_size)])

    def decide(self, csi) -> Decision:
        return Decision(self.predict_proba(csi)[0])


def supcon_loss(z: Tensor, labels, tau: float = 0.07) -> Tensor:
    """Supervised contrastive loss, averaged over anchors that have a positive.

    For anchor ``i`` the positives are the other samples with the same label;
    the denominator runs over every sample except ``i``.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if z.shape[0] != n:
        raise ValidationError("supcon_loss: label count does not match batch")
    eye = np.eye(n, dtype=bool)
    positives = (labels[:, None] == labels[None, :]) & ~eye
    counts = positives.sum(axis=1)
    retained = counts > 0
    if not retained.any():
        raise ValidationError("supcon_loss: no anchor has a positive in the batch")
    logits = F.scale(F.matmul(z, F.transpose(z)), 1.0 / tau)
    logp = F.masked_log_softmax(logits, ~eye)
    weights = np.where(positives, 1.0 / np.maximum(counts, 1)[:, None], 0.0)
    weights[~retained] = 0.0
    weights /= retained.sum()
    return F.scale(F.sum(F.mul_const(logp, np.where(positives, weights, 0.0))), -1.0)


def ce_loss(probs: Tensor, onehot, floor: float = 1e-12) -> Tensor:
    """Mean cross-entropy of predicted probabilities against one-hot targets."""
    y = np.asarray(onehot, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ValidationError("ce_loss: target shape mismatch")
    return F.scale(F.sum(F.mul_const(F.log(probs, floor), y)), -1.0 / probs.shape[0])


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out
