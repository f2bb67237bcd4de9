"""Named f32 tensor sets and the LSCP checkpoint format.

A :class:`ParameterSet` is an immutable, lexicographically ordered map of
named float32 arrays plus string metadata. The on-disk format (LSCP) is
bit-exact and deterministic:

    magic "LSCP" | u32 LE version=1 | u64 LE header length | JSON header | payload

The JSON header is ``{"tensors": {name: {"dtype": "f32", "shape": [...],
"offset": n}}, "meta": {...}}`` with byte offsets relative to the payload
start, ascending in lexicographic name order. The payload is raw
little-endian IEEE-754 f32, row-major.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    MissingTensorError,
    ShapeMismatchError,
    UnsupportedDtypeError,
)

MAGIC = b"LSCP"
VERSION = 1

_FILTER_MODES = ("all", "encoder", "head")


@dataclass(frozen=True)
class TensorSpec:
    """Shape and flat data of one named tensor."""

    name: str
    shape: tuple[int, ...]
    data: np.ndarray  # flat f32, row-major, read-only

    def __post_init__(self):
        if not self.name:
            raise ValueError("tensor name must be non-empty")
        if any((not isinstance(s, int)) or s < 1 for s in self.shape):
            raise ValueError(f"tensor {self.name!r}: shape entries must be positive ints")
        n = int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1
        if self.data.size != n:
            raise ValueError(
                f"tensor {self.name!r}: data length {self.data.size} != product(shape) {n}"
            )


@dataclass(frozen=True)
class SubsetFilter:
    """Selects a parameter group by name prefix; mode "all" selects everything."""

    mode: str = "all"

    def __post_init__(self):
        if self.mode not in _FILTER_MODES:
            raise ValueError(f"filter mode must be one of {_FILTER_MODES}, got {self.mode!r}")

    def matches(self, name: str) -> bool:
        if self.mode == "all":
            return True
        return name.startswith(self.mode + ".")


ALL = SubsetFilter("all")
ENCODER = SubsetFilter("encoder")
HEAD = SubsetFilter("head")


class ParameterSet:
    """Immutable name -> f32 tensor map with string metadata.

    Iteration order is lexicographic by name regardless of insertion order.
    Arrays are stored C-contiguous float32 with the writeable flag cleared.
    """

    __slots__ = ("_tensors", "_meta", "_digest")

    def __init__(self, tensors: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None):
        store: dict[str, np.ndarray] = {}
        for name in sorted(tensors):
            if not isinstance(name, str) or not name:
                raise ValueError(f"tensor name must be a non-empty string, got {name!r}")
            arr = np.asarray(tensors[name])
            if not (arr.dtype == np.float32 and arr.flags.c_contiguous and not arr.flags.writeable):
                arr = np.array(arr, dtype=np.float32, order="C")
                arr.flags.writeable = False
            store[name] = arr
        self._tensors = store
        m = {} if meta is None else dict(meta)
        for k, v in m.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError("meta must map strings to strings")
        self._meta = m
        self._digest: str | None = None

    @property
    def meta(self) -> dict[str, str]:
        return dict(self._meta)

    def names(self) -> list[str]:
        return list(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def items(self):
        return self._tensors.items()

    def spec(self, name: str) -> TensorSpec:
        arr = self._tensors[name]
        return TensorSpec(name=name, shape=arr.shape, data=arr.reshape(-1))

    def specs(self) -> list[TensorSpec]:
        return [self.spec(n) for n in self._tensors]

    def num_parameters(self) -> int:
        return sum(a.size for a in self._tensors.values())

    def same_tensors(self, other: "ParameterSet") -> bool:
        """Bitwise equality of names, shapes and payload; ignores meta."""
        if self.names() != other.names():
            return False
        for name, arr in self._tensors.items():
            b = other[name]
            if arr.shape != b.shape or arr.tobytes() != b.tobytes():
                return False
        return True

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterSet):
            return NotImplemented
        return self._meta == other._meta and self.same_tensors(other)

    def __hash__(self):
        return hash(self.content_digest())

    def __repr__(self):
        return f"ParameterSet({len(self)} tensors, {self.num_parameters()} params, meta={self._meta!r})"

    def with_meta(self, meta: Mapping[str, str]) -> "ParameterSet":
        """New set sharing this one's arrays with replaced metadata."""
        out = ParameterSet.__new__(ParameterSet)
        out._tensors = self._tensors
        m = dict(meta)
        for k, v in m.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError("meta must map strings to strings")
        out._meta = m
        out._digest = None
        return out

    def content_digest(self) -> str:
        """sha256 of the serialized checkpoint bytes; cached (immutable object)."""
        if self._digest is None:
            self._digest = hashlib.sha256(dumps(self)).hexdigest()
        return self._digest


def dumps(ps: ParameterSet) -> bytes:
    """Serialize to LSCP bytes; deterministic for identical input."""
    table = {}
    offset = 0
    payload = []
    for name in ps.names():
        arr = ps[name]
        table[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
        raw = arr.astype("<f4", copy=False).tobytes(order="C")
        payload.append(raw)
        offset += len(raw)
    header = {"tensors": table, "meta": ps.meta}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(blob)) + blob + b"".join(payload)


def loads(data: bytes) -> ParameterSet:
    """Parse LSCP bytes; inverse of :func:`dumps`."""
    if len(data) < 16:
        raise CheckpointFormatError("file too short for LSCP prelude")
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}, expected {VERSION}")
    (hlen,) = struct.unpack_from("<Q", data, 8)
    if 16 + hlen > len(data):
        raise CheckpointCorruptionError("declared header length exceeds file size")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"header is not valid UTF-8 JSON: {e}") from e
    if not isinstance(header, dict) or "tensors" not in header or "meta" not in header:
        raise CheckpointFormatError("header must be an object with 'tensors' and 'meta'")
    table = header["tensors"]
    meta = header["meta"]
    if not isinstance(table, dict) or not isinstance(meta, dict):
        raise CheckpointFormatError("'tensors' and 'meta' must be JSON objects")
    for k, v in meta.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise CheckpointFormatError("meta entries must be string -> string")

    payload = data[16 + hlen :]
    tensors: dict[str, np.ndarray] = {}
    prev_end = 0
    for name in sorted(table):
        entry = table[name]
        if not isinstance(entry, dict):
            raise CheckpointFormatError(f"tensor entry {name!r} must be an object")
        dtype = entry.get("dtype")
        if dtype != "f32":
            raise UnsupportedDtypeError(f"tensor {name!r} has dtype {dtype!r}, only f32 is supported")
        shape = entry.get("shape")
        if (
            not isinstance(shape, list)
            or any((not isinstance(s, int)) or isinstance(s, bool) or s < 1 for s in shape)
        ):
            raise CheckpointFormatError(f"tensor {name!r} has invalid shape {shape!r}")
        offset = entry.get("offset")
        if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
            raise CheckpointFormatError(f"tensor {name!r} has invalid offset {offset!r}")
        if offset < prev_end:
            raise CheckpointCorruptionError(
                f"tensor {name!r} offset {offset} overlaps previous tensor end {prev_end}"
            )
        count = 1
        for s in shape:
            count *= s
        nbytes = 4 * count
        if offset + nbytes > len(payload):
            raise CheckpointCorruptionError(
                f"tensor {name!r} needs bytes [{offset}, {offset + nbytes}) "
                f"but payload has {len(payload)}"
            )
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = flat.reshape(shape).copy()
        prev_end = offset + nbytes
    if prev_end != len(payload):
        raise CheckpointCorruptionError(
            f"payload has {len(payload)} bytes but tensors account for {prev_end}"
        )
    return ParameterSet(tensors, meta)


def save_checkpoint(ps: ParameterSet, path) -> None:
    Path(path).write_bytes(dumps(ps))


def load_checkpoint(path) -> ParameterSet:
    return loads(Path(path).read_bytes())


def validate_compatibility(a: ParameterSet, b: ParameterSet) -> None:
    """Raise unless a and b have identical name sets and per-name shapes."""
    names_a, names_b = set(a.names()), set(b.names())
    if names_a != names_b:
        raise MissingTensorError(sorted(names_a - names_b), sorted(names_b - names_a))
    for name in a.names():
        if a[name].shape != b[name].shape:
            raise ShapeMismatchError(name, a[name].shape, b[name].shape)


def apply_subset_filter(full: ParameterSet, partial: ParameterSet, filt: SubsetFilter) -> ParameterSet:
    """Replace the tensors of `full` selected by `filt` with those of `partial`."""
    validate_compatibility(full, partial)
    if filt.mode == "all":
        return partial
    merged = {
        name: (partial[name] if filt.matches(name) else full[name]) for name in full.names()
    }
    return ParameterSet(merged, full.meta)


def flatten(ps: ParameterSet, filt: SubsetFilter = ALL) -> np.ndarray:
    """Concatenate selected tensors (lexicographic name order) into one flat f32 vector."""
    parts = [ps[name].reshape(-1) for name in ps.names() if filt.matches(name)]
    if not parts:
        return np.empty(0, dtype=np.float32)
    return np.concatenate(parts)
