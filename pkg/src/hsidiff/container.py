"""Binary tensor container and model checkpoint files.

Container layout (everything little-endian):
    magic "R2HT" | version byte 0x01 | dtype byte (0x01 f32, 0x02 f64) |
    rank byte | rank x uint32 dims | row-major payload

A checkpoint is a UTF-8 text preamble (format line, config block, manifest
of name -> shape) terminated by an "[data]" line, followed by one container
blob per manifest entry in order.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"R2HT"
VERSION = 1
_DTYPE_CODES = {"float32": 1, "float64": 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

_CKPT_FORMAT = "denoiser-checkpoint 1"


class ContainerError(Exception):
    """Base for container read failures."""


class MagicError(ContainerError):
    """File does not start with the R2HT magic."""


class VersionError(ContainerError):
    """Unsupported container version byte."""


class TruncatedError(ContainerError):
    """File ended before the declared payload."""


def _encode(arr: np.ndarray, dtype: str) -> bytes:
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    if arr.ndim > 4:
        raise ValueError(f"rank {arr.ndim} > 4")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<BBB", VERSION, _DTYPE_CODES[dtype], arr.ndim))
    for d in arr.shape:
        out.write(struct.pack("<I", d))
    out.write(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[_DTYPE_CODES[dtype]]).tobytes())
    return out.getvalue()


def _decode(buf: io.BufferedIOBase) -> np.ndarray:
    head = buf.read(4)
    if len(head) < 4 or head != MAGIC:
        raise MagicError(f"bad magic {head!r}, expected {MAGIC!r}")
    meta = buf.read(3)
    if len(meta) < 3:
        raise TruncatedError("header cut short")
    version, dcode, rank = struct.unpack("<BBB", meta)
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    if dcode not in _CODE_DTYPES:
        raise ContainerError(f"unknown dtype code {dcode}")
    if rank > 4:
        raise ContainerError(f"rank {rank} > 4")
    raw_dims = buf.read(4 * rank)
    if len(raw_dims) < 4 * rank:
        raise TruncatedError("dims cut short")
    dims = struct.unpack(f"<{rank}I", raw_dims) if rank else ()
    dtype = _CODE_DTYPES[dcode]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = buf.read(count * dtype.itemsize)
    if len(payload) < count * dtype.itemsize:
        raise TruncatedError(f"payload has {len(payload)} bytes, "
                             f"expected {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_tensor(path, tensor, dtype: str = "float64") -> None:
    arr = np.asarray(getattr(tensor, "data", tensor))
    Path(path).write_bytes(_encode(arr, dtype))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = _decode(fh)
        if fh.read(1):
            raise ContainerError("trailing bytes after payload")
    return arr


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model) -> None:
    """Write config, manifest, and every named parameter (float64 payloads)."""
    from .denoiser import DenoiserConfig  # local import: avoid a module cycle

    cfg: DenoiserConfig = model.config
    params = model.parameters()
    lines = [_CKPT_FORMAT, "[config]"]
    lines.append(f"base_channels = {cfg.base_channels}")
    lines.append("channel_multipliers = " + ",".join(str(m) for m in cfg.channel_multipliers))
    lines.append(f"resblocks_per_scale = {cfg.resblocks_per_scale}")
    lines.append(f"bands = {cfg.bands}")
    lines.append(f"time_embed_dim = {cfg.time_embed_dim}")
    lines.append(f"use_gsrm = {int(cfg.use_gsrm)}")
    lines.append(f"use_hata = {int(cfg.use_hata)}")
    lines.append("[params]")
    for p in params:
        lines.append(p.name + " " + " ".join(str(d) for d in p.data.shape))
    lines.append("[data]")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for p in params:
            fh.write(_encode(p.data, "float64"))


def load_checkpoint(path):
    from .denoiser import Denoiser, DenoiserConfig

    with open(path, "rb") as fh:
        header_lines = []
        while True:
            line = fh.readline()
            if not line:
                raise TruncatedError("checkpoint ended inside the text preamble")
            text = line.decode("utf-8").rstrip("\n")
            header_lines.append(text)
            if text == "[data]":
                break
        if not header_lines or header_lines[0] != _CKPT_FORMAT:
            raise MagicError(f"not a checkpoint file: first line "
                             f"{header_lines[0] if header_lines else ''!r}")
        cfg_kv: dict[str, str] = {}
        manifest: list[tuple[str, tuple[int, ...]]] = []
        section = None
        for text in header_lines[1:-1]:
            if text in ("[config]", "[params]"):
                section = text
                continue
            if section == "[config]":
                key, _, value = text.partition("=")
                cfg_kv[key.strip()] = value.strip()
            elif section == "[params]":
                parts = text.split()
                manifest.append((parts[0], tuple(int(d) for d in parts[1:])))
        cfg = DenoiserConfig(
            base_channels=int(cfg_kv["base_channels"]),
            channel_multipliers=tuple(int(m) for m in
                                      cfg_kv["channel_multipliers"].split(",")),
            resblocks_per_scale=int(cfg_kv["resblocks_per_scale"]),
            bands=int(cfg_kv["bands"]),
            time_embed_dim=int(cfg_kv["time_embed_dim"]),
            use_gsrm=bool(int(cfg_kv["use_gsrm"])),
            use_hata=bool(int(cfg_kv["use_hata"])),
        )
        state = {}
        for name, shape in manifest:
            arr = _decode(fh)
            if arr.shape != shape:
                raise ContainerError(f"manifest shape {shape} != stored "
                                     f"{arr.shape} for {name!r}")
            state[name] = arr
        if fh.read(1):
            raise ContainerError("trailing bytes after last parameter")
    model = Denoiser(cfg)
    model.load_state_arrays(state)
    return model
