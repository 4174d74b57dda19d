"""Checkpoint container and encoder transfer.

Layout (integers little-endian u32 unless noted)::

    magic b"CKPT" | version | config length | provenance length | index length
    config block      UTF-8 "key=value" lines (ModelConfig fields)
    provenance block  UTF-8 "key=value" lines
    index block       UTF-8 lines "name<TAB>offset<TAB>d0,d1,..." ; offset counts
                      bytes from the start of the blob section
    blob section      float32 little-endian parameter arrays, concatenated
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from seizurecast.errors import CompatibilityError, FormatError, MagicError, TruncationError
from seizurecast.model import (
    DECODER_PREFIXES,
    ModelConfig,
    ModelParams,
    init_params,
    reinit_head,
)
from seizurecast.numerics import Tensor
from seizurecast.seeds import derive_seed

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    provenance: dict[str, str] = field(default_factory=dict)


def _kv_text(d: dict) -> bytes:
    lines = []
    for k, v in d.items():
        k, v = str(k), str(v)
        if any(c in k for c in "=\n") or "\n" in v:
            raise ValueError(f"cannot serialize key/value {k!r}={v!r}")
        lines.append(f"{k}={v}\n")
    return "".join(lines).encode("utf-8")


def _parse_kv(raw: bytes, section: str) -> dict[str, str]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(section, "not valid UTF-8") from exc
    out = {}
    for line in text.splitlines():
        if not line:
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(section, f"malformed line {line!r}")
        out[k] = v
    return out


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    config = _kv_text(ckpt.config.to_dict())
    provenance = _kv_text(ckpt.provenance)
    index_lines, blobs, offset = [], [], 0
    for name, t in ckpt.params.tensors.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        index_lines.append(f"{name}\t{offset}\t{','.join(map(str, arr.shape))}\n")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    index = "".join(index_lines).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(config), len(provenance), len(index)))
        fh.write(config)
        fh.write(provenance)
        fh.write(index)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise MagicError("magic", f"expected {CKPT_MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < _HEADER.size:
        raise TruncationError("header", f"{len(blob)} bytes, header needs {_HEADER.size}")
    _, version, n_cfg, n_prov, n_idx = _HEADER.unpack_from(blob)
    if version != CKPT_VERSION:
        raise FormatError("version", f"unsupported version {version}")
    pos = _HEADER.size
    sections = {}
    for name, n in (("config", n_cfg), ("provenance", n_prov), ("index", n_idx)):
        if len(blob) < pos + n:
            raise TruncationError(name, f"declared {n} bytes, {len(blob) - pos} present")
        sections[name] = blob[pos : pos + n]
        pos += n
    try:
        config = ModelConfig.from_dict(_parse_kv(sections["config"], "config"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError("config", str(exc)) from exc
    provenance = _parse_kv(sections["provenance"], "provenance")

    payload = memoryview(blob)[pos:]
    tensors, expected_end = {}, 0
    for line in sections["index"].decode("utf-8").splitlines():
        try:
            name, off, dims = line.split("\t")
            off = int(off)
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        except ValueError as exc:
            raise FormatError("index", f"malformed entry {line!r}") from exc
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(payload):
            raise TruncationError("payload", f"parameter {name} needs bytes [{off}, {off + nbytes}), have {len(payload)}")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).astype(np.float32)
        tensors[name] = Tensor(arr, requires_grad=name not in ModelParams.FIXED)
        expected_end = max(expected_end, off + nbytes)
    if expected_end != len(payload):
        raise FormatError("payload", f"index covers {expected_end} bytes, payload has {len(payload)}")
    return Checkpoint(config, ModelParams(config, tensors), provenance)


def checkpoint_roundtrip(ckpt: Checkpoint, path: str | os.PathLike) -> Checkpoint:
    save_checkpoint(ckpt, path)
    return load_checkpoint(path)


def check_compatible(ckpt_config: ModelConfig, model_config: ModelConfig, keys=None) -> None:
    a, b = ckpt_config.to_dict(), model_config.to_dict()
    keys = keys or a.keys()
    differing = {k: (a[k], b[k]) for k in keys if a[k] != b[k]}
    if differing:
        raise CompatibilityError(differing)


def transfer_encoder(source: ModelParams | Checkpoint, seed: int, config: ModelConfig | None = None) -> ModelParams:
    """Classifier-ready parameters: encoder copied from ``source``, decoder dropped,
    fresh CLS embedding and zeroed classifier. ``source`` is never mutated."""
    params = source.params if isinstance(source, Checkpoint) else source
    if config is not None:
        # decoder geometry is irrelevant once the decoder is discarded
        check_compatible(params.config, config, keys=[k for k in config.to_dict() if not k.startswith("dec_")])
    out = ModelParams(
        params.config,
        {
            k: Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for k, t in params.tensors.items()
            if not k.startswith(DECODER_PREFIXES)
        },
    )
    reinit_head(out, seed)
    return out


def fresh_encoder(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """The no-continual-pretraining starting point: initialization only."""
    return transfer_encoder(init_params(config, seed, dtype), derive_seed(seed, "head"))
