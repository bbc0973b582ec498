"""Checkpoint files: model configuration plus every named parameter.

Layout (little-endian)::

    4      magic b"FCKP"
    1      version = 1
    4      uint32 header length L
    L      UTF-8 header, "key = value" lines (model config and metadata)
    4      uint32 parameter count P
    P x    uint16 name length, UTF-8 name, uint32 blob length, FTEN blob
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .data import ften_bytes, parse_ften
from .networks import ModelConfig, build_model
from .nn import ParameterStore

CKPT_MAGIC = b"FCKP"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def trained(self) -> set[str]:
        """Stages whose weights are trained: a subset of {"parsing", "sr"}."""
        return {s for s in self.meta.get("trained", "").split(",") if s}

    def build(self):
        """Rebuild ``(parsingnet, fishnet, params)`` with the stored weights."""
        parsingnet, fishnet, store = build_model(self.config)
        store.load_arrays(self.arrays, strict=True)
        return parsingnet, fishnet, store


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def config_from_mapping(values: dict[str, str]) -> ModelConfig:
    """Typed ``ModelConfig`` from string values; unknown keys raise KeyError."""
    fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise KeyError(f"unknown model config keys: {unknown}")
    kwargs = {}
    for name, text in values.items():
        kind = type(getattr(ModelConfig(), name))
        kwargs[name] = parse_bool(text) if kind is bool else kind(text)
    return ModelConfig(**kwargs)


def _header(cfg: ModelConfig, meta: dict) -> bytes:
    lines = [f"{f.name} = {format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    lines += [f"meta.{k} = {v}" for k, v in meta.items()]
    return ("\n".join(lines) + "\n").encode()


def checkpoint_bytes(cfg: ModelConfig, params: ParameterStore, meta: dict | None = None) -> bytes:
    header = _header(cfg, meta or {})
    parts = [CKPT_MAGIC, struct.pack("<BI", CKPT_VERSION, len(header)), header,
             struct.pack("<I", len(params))]
    for name, p in params:
        raw = name.encode()
        blob = ften_bytes(p.data)
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<I", len(blob)), blob]
    return b"".join(parts)


def save_checkpoint(path, cfg: ModelConfig, params: ParameterStore, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(cfg, params, meta))
    return path


def _take(buf: bytes, pos: int, n: int, source: str) -> tuple[bytes, int]:
    if pos + n > len(buf):
        raise ValueError(f"{source}: truncated checkpoint")
    return buf[pos:pos + n], pos + n


def parse_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    magic, pos = _take(buf, 0, 4, source)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{source}: not a checkpoint (magic {magic!r})")
    raw, pos = _take(buf, pos, 5, source)
    version, hlen = struct.unpack("<BI", raw)
    if version != CKPT_VERSION:
        raise ValueError(f"{source}: unsupported checkpoint version {version}")
    header, pos = _take(buf, pos, hlen, source)
    values, meta = {}, {}
    for line in header.decode().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("meta."):
            meta[key[5:]] = value
        else:
            values[key] = value
    raw, pos = _take(buf, pos, 4, source)
    (count,) = struct.unpack("<I", raw)
    arrays = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 2, source)
        name, pos = _take(buf, pos, struct.unpack("<H", raw)[0], source)
        raw, pos = _take(buf, pos, 4, source)
        blob, pos = _take(buf, pos, struct.unpack("<I", raw)[0], source)
        arrays[name.decode()] = parse_ften(blob, f"{source}:{name.decode()}").data
    if pos != len(buf):
        raise ValueError(f"{source}: {len(buf) - pos} trailing bytes")
    return Checkpoint(config_from_mapping(values), arrays, meta)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"checkpoint not found: {path}") from None
    return parse_checkpoint(buf, str(path))
