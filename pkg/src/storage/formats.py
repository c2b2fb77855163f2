"""
formats.py
Binary containers for tensors (checkpoints, datasets) and embedding sets.

Both start with the magic b"FSEB", a u32 format version and a u8 kind byte.
All integers are little-endian.

Checkpoint (kind 1):
    u32 hash length, config hash (ascii)
    u32 metadata length, metadata (utf-8 JSON)
    u32 tensor count, then per tensor:
        u16 name length, name (utf-8), u8 dtype code, u8 ndim,
        ndim x u64 extents, row-major little-endian payload

Embeddings (kind 2):
    u32 header length, header (utf-8 JSON with source, dim, count, ...)
    count records of: u64 sample id, dim x f32 values

CSV results are plain pandas CSV preceded by one "# config_hash=<hash>" line.
"""
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from utils.data_model import EmbeddingSet, EmbeddingSource
from utils.errors import FormatError

MAGIC = b"FSEB"
VERSION = 1
KIND_CHECKPOINT = 1
KIND_EMBEDDINGS = 2
CSV_HASH_PREFIX = "# config_hash="

DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<i8"): 4,
}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def atomic_write(path: Union[str, Path], data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    """Cursor over a byte buffer that reports truncation with its offset"""

    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.raw):
            raise FormatError(self.path, self.offset, f"truncated {what}")
        chunk = self.raw[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        values = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))
        return values if len(values) > 1 else values[0]

    def preamble(self, kind: int) -> None:
        if self.take(4, "magic") != MAGIC:
            raise FormatError(self.path, 0, "bad magic, not an FSEB file")
        version = self.unpack("I", "version")
        if version != VERSION:
            raise FormatError(self.path, 4, f"unsupported format version {version}")
        found = self.unpack("B", "kind")
        if found != kind:
            raise FormatError(self.path, 8, f"file kind {found}, expected {kind}")

    def json(self, what: str) -> Dict[str, Any]:
        length = self.unpack("I", f"{what} length")
        start = self.offset
        try:
            return json.loads(self.take(length, what).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(self.path, start, f"unreadable {what}: {exc}") from None


def _json_bytes(value: Dict[str, Any]) -> bytes:
    data = json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(data)) + data


@dataclass
class CheckpointFile:
    """Ordered named tensors plus the hash of the config that produced them"""
    tensors: Dict[str, np.ndarray]
    config_hash: str
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<IB", VERSION, KIND_CHECKPOINT)]
        digest = self.config_hash.encode("ascii")
        parts.append(struct.pack("<I", len(digest)) + digest)
        parts.append(_json_bytes(self.metadata))
        parts.append(struct.pack("<I", len(self.tensors)))
        for name, array in self.tensors.items():
            array = np.asarray(array)
            dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
            if np.dtype(dtype) not in DTYPE_CODES:
                raise TypeError(f"tensor '{name}' has unsupported dtype {array.dtype}")
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<H", len(encoded)) + encoded)
            parts.append(struct.pack("<BB", DTYPE_CODES[np.dtype(dtype)], array.ndim))
            parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
            parts.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes, path="<bytes>") -> "CheckpointFile":
        reader = _Reader(raw, path)
        reader.preamble(KIND_CHECKPOINT)
        digest = reader.take(reader.unpack("I", "hash length"), "config hash").decode("ascii")
        metadata = reader.json("metadata")
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(reader.unpack("I", "tensor count")):
            name = reader.take(reader.unpack("H", "name length"), "tensor name").decode("utf-8")
            code_offset = reader.offset
            code, ndim = reader.unpack("BB", f"dtype of '{name}'")
            if code not in CODE_DTYPES:
                raise FormatError(path, code_offset, f"unknown dtype code {code} for '{name}'")
            shape = reader.unpack(f"{ndim}Q", f"shape of '{name}'") if ndim else ()
            shape = (shape,) if isinstance(shape, int) else tuple(shape)
            dtype = CODE_DTYPES[code]
            payload = reader.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize, f"payload of '{name}'")
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if reader.offset != len(raw):
            raise FormatError(path, reader.offset, "unexpected trailing bytes")
        return cls(tensors, digest, metadata)


def save_checkpoint(path: Union[str, Path], checkpoint: CheckpointFile) -> None:
    atomic_write(path, checkpoint.to_bytes())


def load_checkpoint(path: Union[str, Path]) -> CheckpointFile:
    return CheckpointFile.from_bytes(Path(path).read_bytes(), path)


def embeddings_to_bytes(embeddings: EmbeddingSet, config_hash: str = "") -> bytes:
    header = {
        **embeddings.header,
        "source": embeddings.source.value,
        "dim": embeddings.dim,
        "count": len(embeddings),
        "config_hash": config_hash or embeddings.header.get("config_hash", ""),
    }
    records = np.empty(len(embeddings), dtype=[("id", "<u8"), ("values", "<f4", (embeddings.dim,))])
    records["id"] = embeddings.sample_ids
    records["values"] = embeddings.vectors
    return MAGIC + struct.pack("<IB", VERSION, KIND_EMBEDDINGS) + _json_bytes(header) + records.tobytes()


def embeddings_from_bytes(raw: bytes, path="<bytes>") -> EmbeddingSet:
    reader = _Reader(raw, path)
    reader.preamble(KIND_EMBEDDINGS)
    header = reader.json("header")
    try:
        dim, count = int(header["dim"]), int(header["count"])
        source = EmbeddingSource(header["source"])
    except (KeyError, ValueError) as exc:
        raise FormatError(path, reader.offset, f"incomplete embedding header: {exc}") from None
    record = np.dtype([("id", "<u8"), ("values", "<f4", (dim,))])
    payload = len(raw) - reader.offset
    if payload != count * record.itemsize:
        offset = reader.offset + min(payload, count * record.itemsize)
        raise FormatError(path, offset, f"payload holds {payload} bytes, header declares {count} x {record.itemsize}")
    records = np.frombuffer(raw, dtype=record, count=count, offset=reader.offset)
    vectors = np.array(records["values"], dtype=np.float32).reshape(count, dim)
    return EmbeddingSet(vectors, records["id"].astype(np.int64), source, header)


def save_embeddings(path: Union[str, Path], embeddings: EmbeddingSet, config_hash: str = "") -> None:
    atomic_write(path, embeddings_to_bytes(embeddings, config_hash))


def load_embeddings(path: Union[str, Path]) -> EmbeddingSet:
    return embeddings_from_bytes(Path(path).read_bytes(), path)


def csv_to_bytes(table: pd.DataFrame, config_hash: str = "") -> bytes:
    buffer = io.StringIO()
    buffer.write(f"{CSV_HASH_PREFIX}{config_hash}\n")
    table.to_csv(buffer, index=False, float_format="%.10g", lineterminator="\n")
    return buffer.getvalue().encode("utf-8")


def csv_from_bytes(raw: bytes) -> pd.DataFrame:
    """Table with the recorded hash in `table.attrs["config_hash"]` ("" for plain CSV)"""
    text = raw.decode("utf-8")
    config_hash = ""
    if text.startswith(CSV_HASH_PREFIX):
        first, _, text = text.partition("\n")
        config_hash = first[len(CSV_HASH_PREFIX):].strip()
    table = pd.read_csv(io.StringIO(text))
    table.attrs["config_hash"] = config_hash
    return table


def save_csv(path: Union[str, Path], table: pd.DataFrame, config_hash: str = "") -> None:
    atomic_write(path, csv_to_bytes(table, config_hash))


def load_csv(path: Union[str, Path]) -> pd.DataFrame:
    return csv_from_bytes(Path(path).read_bytes())
