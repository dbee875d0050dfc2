"""Flat-buffer file format: one UTF-8 header line, then raw little-endian
float64 values.

The header carries `key=value` fields followed by `name:size` segment
entries, e.g.::

    dim=32 heads=4 | tok_emb:10496 pos_emb:5120 ... lnf_b:32

The same format stores encoder checkpoints and cross-language parity
fixtures; round-trips are bit-exact.
"""

from __future__ import annotations

import numpy as np

from .core import ValidationError
from .encoder import EncoderConfig, EncoderState, _build_offsets

_SEP = " | "


def write_buffer(
    path: str,
    values: np.ndarray,
    segments: list[tuple[str, int]],
    fields: dict[str, str] | None = None,
) -> None:
    flat = np.ascontiguousarray(values, dtype="<f8").reshape(-1)
    if sum(size for _, size in segments) != flat.size:
        raise ValidationError("segment sizes do not sum to the value count")
    field_part = " ".join(f"{k}={v}" for k, v in (fields or {}).items())
    seg_part = " ".join(f"{name}:{size}" for name, size in segments)
    header = (field_part + _SEP + seg_part) if field_part else _SEP.strip() + seg_part
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(flat.tobytes())


def read_buffer(path: str) -> tuple[np.ndarray, list[tuple[str, int]], dict[str, str]]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").rstrip("\n")
        raw = fh.read()
    if _SEP in header:
        field_part, seg_part = header.split(_SEP, 1)
    elif header.startswith("|"):
        field_part, seg_part = "", header[1:]
    else:
        raise ValidationError(f"{path}: malformed buffer header")
    fields: dict[str, str] = {}
    for item in field_part.split():
        key, _, value = item.partition("=")
        fields[key] = value
    segments: list[tuple[str, int]] = []
    for item in seg_part.split():
        name, _, size = item.rpartition(":")
        segments.append((name, int(size)))
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if values.size != sum(size for _, size in segments):
        raise ValidationError(f"{path}: payload size does not match header")
    return values, segments, fields


def save_checkpoint(path: str, state: EncoderState) -> None:
    cfg = state.config
    fields = {
        "vocab_size": str(cfg.vocab_size),
        "dim": str(cfg.dim),
        "heads": str(cfg.heads),
        "layers": str(cfg.layers),
        "max_seq": str(cfg.max_seq),
        "seed": str(cfg.seed),
    }
    segments = [
        (name, int(np.prod(shape))) for name, (_, shape) in state.offsets.items()
    ]
    write_buffer(path, state.params, segments, fields)


def load_checkpoint(path: str) -> EncoderState:
    values, segments, fields = read_buffer(path)
    config = EncoderConfig(
        vocab_size=int(fields["vocab_size"]),
        dim=int(fields["dim"]),
        heads=int(fields["heads"]),
        layers=int(fields["layers"]),
        max_seq=int(fields["max_seq"]),
        seed=int(fields["seed"]),
    )
    offsets = _build_offsets(config)
    expected = [(name, int(np.prod(shape))) for name, (_, shape) in offsets.items()]
    if segments != expected:
        raise ValidationError(f"{path}: segment table does not match config")
    return EncoderState(config=config, params=values, offsets=offsets)
