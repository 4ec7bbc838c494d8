"""Binary checkpoint format.

Layout (little-endian)::

    b"MAMLCKPT" | u32 version=1 | u8 provenance | u64 iteration | u32 count
    | count x (u16 name_len | utf-8 name | u8 ndim | u32 dims[ndim] | f64 data)

Provenance codes: 0 random, 1 pretrained, 2 maml.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ParamSet, Tensor

MAGIC = b"MAMLCKPT"
VERSION = 1
PROVENANCE_CODES = {"random": 0, "pretrained": 1, "maml": 2}
PROVENANCE_NAMES = {v: k for k, v in PROVENANCE_CODES.items()}


class CheckpointFormatError(ValueError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class UnsupportedVersionError(CheckpointFormatError):
    pass


@dataclass(eq=False)
class Checkpoint:
    """Parameters plus provenance; ``config`` and ``history`` are in-memory only."""

    params: ParamSet
    provenance: str = "random"
    iteration: int = 0
    config: object = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.provenance not in PROVENANCE_CODES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


def encode_checkpoint(cp):
    out = [MAGIC, struct.pack("<IBQI", VERSION, PROVENANCE_CODES[cp.provenance],
                              int(cp.iteration), len(cp.params))]
    for name, t in cp.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", t.ndim))
        out.append(struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.asarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(cp, path):
    Path(path).write_bytes(encode_checkpoint(cp))


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.path, self.pos = buf, path, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(self.path, self.pos,
                                        f"truncated while reading {what} ({n} bytes needed, "
                                        f"{len(self.buf) - self.pos} left)")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def decode_checkpoint(buf, path="<bytes>"):
    r = _Reader(buf, path)
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(path, 0, f"bad magic {bytes(buf[:8])!r}, expected {MAGIC!r}")
    r.pos = len(MAGIC)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise UnsupportedVersionError(path, len(MAGIC), f"unsupported checkpoint version {version}")
    offset = r.pos
    prov, iteration, count = r.unpack("<BQI", "header")
    if prov not in PROVENANCE_NAMES:
        raise CheckpointFormatError(path, offset, f"unknown provenance code {prov}")
    entries = []
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        at = r.pos
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(path, at, "tensor name is not valid UTF-8") from None
        (ndim,) = r.unpack("<B", "ndim")
        dims = r.unpack(f"<{ndim}I", "dims")
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(8 * size, f"data of {name}"), dtype="<f8").astype(np.float64)
        entries.append((name, Tensor(data.reshape(dims))))
    if r.pos != len(buf):
        raise CheckpointFormatError(path, r.pos, f"{len(buf) - r.pos} trailing bytes")
    return Checkpoint(ParamSet(entries), PROVENANCE_NAMES[prov], iteration)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), path)
