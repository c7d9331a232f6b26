"""Canonical model generator.

Builds analytic model descriptors (FLOPs and bytes per sample) by stacking one
block family: fully-connected layers, residual conv blocks, LSTM layers, or
attention blocks. The descriptors carry everything the simulated backend and
the roofline analysis need, without training or weight tensors.

Closed-form accounting, per sample:

fc           per layer: 2*n_in*n_out FLOP, n_in*n_out*prec weight bytes,
             (n_in + n_out)*prec activation bytes. First layer reads the input
             width; hidden layers are square (width x width).
cnn          per residual block: two 3x3 convs at fixed HxW with `width`
             channels; each conv 2*9*C*C*H*W FLOP and 9*C*C*prec weight bytes;
             identity shortcut is free; activations in+out per conv.
rnn (LSTM)   per layer per step: 8*h*(h+i) FLOP (4 gates, 2*(input+hidden)*hidden
             each), weights 4*h*(h+i)*prec; repeated seq_len steps.
transformer  per block per token: 8*d^2 (QKV+output projections) + 4*s*d
             (scores + weighted sum) + 16*d^2 (feed-forward, expansion 4) FLOP;
             weights per block 12*d^2*prec (attention) + 8*d^2*prec (FFN).

Activation bytes follow a flat "every activation touches memory once" model:
the sum of each layer's input and output tensor sizes. The goal is monotone,
auditable intensity trends, not per-kernel exactness. Hyper-parameter sweep
defaults elsewhere in the package use powers-of-two grids.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace

from .errors import SpecValidationError

BLOCK_FAMILIES = ("fc", "cnn", "rnn", "transformer")

# Quantities are validated against this bound so descriptor arithmetic stays
# within exact integer range everywhere (u64 framing); reject, never saturate.
MAX_QUANTITY = 2**63 - 1


@dataclass(frozen=True)
class GeneratorParams:
    block: str
    num_layers: int
    width: int                      # neurons / channels / hidden units / embedding dim
    seq_len: int | None = None      # rnn and transformer only
    input_dims: tuple[int, ...] = ()
    precision_bytes: int = 4

    def __post_init__(self):
        if self.block not in BLOCK_FAMILIES:
            raise SpecValidationError("model.block", f"must be one of {BLOCK_FAMILIES}")
        if self.num_layers < 1:
            raise SpecValidationError("model.num_layers", "must be >= 1")
        if self.width < 1:
            raise SpecValidationError("model.width", "must be >= 1")
        if self.precision_bytes not in (2, 4):
            raise SpecValidationError("model.precision_bytes", "must be 2 or 4")
        needs_seq = self.block in ("rnn", "transformer")
        if needs_seq and (self.seq_len is None or self.seq_len < 1):
            raise SpecValidationError("model.seq_len", f"required and >= 1 for {self.block}")
        if not needs_seq and self.seq_len is not None:
            raise SpecValidationError("model.seq_len", f"not allowed for {self.block}")
        if any(d < 1 for d in self.input_dims):
            raise SpecValidationError("model.input_dims", "all dims must be >= 1")

    def to_doc(self) -> dict:
        doc = {
            "block": self.block,
            "num_layers": self.num_layers,
            "width": self.width,
            "precision_bytes": self.precision_bytes,
        }
        if self.seq_len is not None:
            doc["seq_len"] = self.seq_len
        if self.input_dims:
            doc["input_dims"] = list(self.input_dims)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "GeneratorParams":
        known = {"block", "num_layers", "width", "seq_len", "input_dims", "precision_bytes"}
        extra = set(doc) - known
        if extra:
            raise SpecValidationError("model", f"unknown keys: {sorted(extra)}")
        return cls(
            block=doc.get("block", "fc"),
            num_layers=int(doc.get("num_layers", 1)),
            width=int(doc.get("width", 1)),
            seq_len=None if doc.get("seq_len") is None else int(doc["seq_len"]),
            input_dims=tuple(int(d) for d in doc.get("input_dims", ())),
            precision_bytes=int(doc.get("precision_bytes", 4)),
        )


@dataclass
class ModelDescriptor:
    model_id: str
    family: str                       # block family, or "realworld" for imported entries
    flops_per_sample: int
    weight_bytes: int
    activation_bytes_per_sample: int
    params: dict = field(default_factory=dict)
    version: int = 1

    def __post_init__(self):
        for attr in ("flops_per_sample", "weight_bytes", "activation_bytes_per_sample"):
            v = getattr(self, attr)
            if v <= 0:
                raise SpecValidationError(f"model.{attr}", "must be > 0")
            if v > MAX_QUANTITY:
                raise SpecValidationError(f"model.{attr}", f"overflows quantity bound {MAX_QUANTITY}")

    def operational_intensity(self, batch_size: int) -> float:
        """FLOP per byte of memory traffic at a given batch size.

        Weights are read once per batch, activations once per sample, so
        intensity grows with batch size toward flops/activation_bytes.
        """
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        flops = batch_size * self.flops_per_sample
        traffic = self.weight_bytes + batch_size * self.activation_bytes_per_sample
        return flops / traffic

    def to_doc(self) -> dict:
        return {
            "model_id": self.model_id,
            "family": self.family,
            "flops_per_sample": self.flops_per_sample,
            "weight_bytes": self.weight_bytes,
            "activation_bytes_per_sample": self.activation_bytes_per_sample,
            "params": self.params,
            "version": self.version,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ModelDescriptor":
        return cls(
            model_id=doc["model_id"],
            family=doc["family"],
            flops_per_sample=int(doc["flops_per_sample"]),
            weight_bytes=int(doc["weight_bytes"]),
            activation_bytes_per_sample=int(doc["activation_bytes_per_sample"]),
            params=dict(doc.get("params", {})),
            version=int(doc.get("version", 1)),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_doc(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _fc_counts(p: GeneratorParams) -> tuple[int, int, int]:
    n_in = p.input_dims[0] if p.input_dims else p.width
    flops = weights = acts = 0
    for _ in range(p.num_layers):
        flops += 2 * n_in * p.width
        weights += n_in * p.width * p.precision_bytes
        acts += (n_in + p.width) * p.precision_bytes
        n_in = p.width
    return flops, weights, acts


def _cnn_counts(p: GeneratorParams) -> tuple[int, int, int]:
    c = p.width
    if len(p.input_dims) == 2:
        h, w = p.input_dims
    elif len(p.input_dims) == 3:
        if p.input_dims[0] != c:
            raise SpecValidationError("model.input_dims",
                                      f"channel dim {p.input_dims[0]} must equal width {c}")
        _, h, w = p.input_dims
    elif not p.input_dims:
        h = w = 16
    else:
        raise SpecValidationError("model.input_dims", "cnn expects (H, W) or (C, H, W)")
    per_conv_flops = 2 * 9 * c * c * h * w
    per_conv_weights = 9 * c * c * p.precision_bytes
    per_conv_acts = 2 * c * h * w * p.precision_bytes  # input + output maps
    blocks = p.num_layers
    return (2 * per_conv_flops * blocks,
            2 * per_conv_weights * blocks,
            2 * per_conv_acts * blocks)


def _rnn_counts(p: GeneratorParams) -> tuple[int, int, int]:
    h = p.width
    n_in = p.input_dims[0] if p.input_dims else h
    s = p.seq_len
    flops = weights = acts = 0
    for _ in range(p.num_layers):
        flops += 8 * h * (h + n_in) * s
        weights += 4 * h * (h + n_in) * p.precision_bytes
        acts += (n_in + h) * s * p.precision_bytes
        n_in = h
    return flops, weights, acts


def _transformer_counts(p: GeneratorParams) -> tuple[int, int, int]:
    d, s, el = p.width, p.seq_len, p.num_layers
    per_token = 24 * d * d + 4 * s * d
    flops = el * s * per_token
    weights = el * (12 * d * d + 8 * d * d) * p.precision_bytes
    acts = el * 2 * s * d * p.precision_bytes
    return flops, weights, acts


_COUNTERS = {
    "fc": _fc_counts,
    "cnn": _cnn_counts,
    "rnn": _rnn_counts,
    "transformer": _transformer_counts,
}


def model_id_for(p: GeneratorParams) -> str:
    parts = [p.block, f"L{p.num_layers}", f"w{p.width}"]
    if p.seq_len is not None:
        parts.append(f"s{p.seq_len}")
    if p.input_dims:
        parts.append("i" + "x".join(str(d) for d in p.input_dims))
    if p.precision_bytes != 4:
        parts.append(f"p{p.precision_bytes}")
    return "-".join(parts)


def generate_model(p: GeneratorParams) -> ModelDescriptor:
    """Produce the analytic descriptor for a stacked-block model."""
    flops, weights, acts = _COUNTERS[p.block](p)
    if max(flops, weights, acts) > MAX_QUANTITY:
        raise SpecValidationError("model", f"generated quantities overflow bound {MAX_QUANTITY}")
    return ModelDescriptor(
        model_id=model_id_for(p),
        family=p.block,
        flops_per_sample=flops,
        weight_bytes=weights,
        activation_bytes_per_sample=acts,
        params=p.to_doc(),
    )


def sweep_grid(base: GeneratorParams, axes: dict[str, list]) -> list[ModelDescriptor]:
    """Cartesian product over axis values, row-major in declared axis order."""
    valid = {"block", "num_layers", "width", "seq_len", "input_dims", "precision_bytes"}
    for name, values in axes.items():
        if name not in valid:
            raise SpecValidationError(f"sweep.{name}", f"not a generator param (one of {sorted(valid)})")
        if not values:
            raise SpecValidationError(f"sweep.{name}", "axis must not be empty")
    names = list(axes)
    out = []
    for combo in itertools.product(*(axes[n] for n in names)):
        p = replace(base, **dict(zip(names, combo)))
        out.append(generate_model(p))
    return out
