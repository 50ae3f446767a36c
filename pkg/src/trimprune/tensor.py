"""Dense float32 matrices, a seeded Gaussian generator, and the TNSR container.

Matrices are plain C-contiguous ``np.float32`` arrays; :func:`as_matrix`
is the single gate that enforces the storage invariants.

Container layout (all integers little-endian)::

    b"TNSR" | u32 version (=1) | u64 header length | JSON header | payload

The JSON header maps each tensor name to ``{"shape", "offset", "nbytes"}``
with offsets relative to the first payload byte.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from collections.abc import Iterator, Mapping
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"TNSR"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite, 2-D, C-contiguous float32 array."""
    arr = np.ascontiguousarray(a, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name}: contains NaN or Inf")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated in float64, stored as float32."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = np.dot(a.astype(np.float64), b.astype(np.float64))
    return np.ascontiguousarray(out, dtype=np.float32)


class Rng:
    """Counter-based Gaussian generator.

    Raw 64-bit words come from the Philox-4x64 counter generator; uniforms take
    the top 53 bits, and normals use the Box-Muller transform (both outputs of
    each pair are consumed).  No OS entropy is involved, so a seed fully
    determines the stream.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._bits = np.random.Philox(key=self.seed)

    def _raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n).astype(np.uint64)

    def uniform(self, size) -> np.ndarray:
        """Uniforms in the open interval (0, 1), float64."""
        n = int(np.prod(size))
        u = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(size)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        n = int(np.prod(size))
        half = (n + 1) // 2
        u1 = self.uniform(half)
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * half)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return (scale * z[:n]).reshape(size)

    def gaussian_matrix(self, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
        return as_matrix(self.normal((rows, cols), scale))

    def integers(self, high: int, size=None):
        """Uniform integers in [0, high)."""
        if size is None:
            return int(self.uniform(1)[0] * high)
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


class TensorContainer(Mapping):
    """An ordered-by-name mapping of tensor name to float32 array."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self._tensors: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value) -> None:
        if not isinstance(name, str) or not name:
            raise FormatError("tensor names must be non-empty strings")
        arr = np.ascontiguousarray(value, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} contains non-finite values")
        self._tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._tensors))

    def __len__(self) -> int:
        return len(self._tensors)

    def to_bytes(self) -> bytes:
        header = {}
        chunks = []
        offset = 0
        for name in self:
            data = self._tensors[name].astype("<f4").tobytes()
            header[name] = {
                "shape": list(self._tensors[name].shape),
                "offset": offset,
                "nbytes": len(data),
            }
            chunks.append(data)
            offset += len(data)
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TensorContainer":
        if len(blob) < _PREFIX.size:
            raise FormatError("file too short for container prefix")
        magic, version, hlen = _PREFIX.unpack_from(blob)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        start = _PREFIX.size + hlen
        if start > len(blob):
            raise FormatError("truncated header")
        try:
            header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed header: {exc}") from None
        if not isinstance(header, dict):
            raise FormatError("header must be a JSON object")
        payload = memoryview(blob)[start:]
        spans = []
        tensors = {}
        for name, entry in header.items():
            try:
                shape = tuple(int(d) for d in entry["shape"])
                off = int(entry["offset"])
                nbytes = int(entry["nbytes"])
            except (KeyError, TypeError, ValueError):
                raise FormatError(f"malformed header entry for {name!r}") from None
            if any(d < 0 for d in shape) or off < 0:
                raise FormatError(f"negative shape or offset for {name!r}")
            if nbytes != int(np.prod(shape, dtype=np.int64)) * 4:
                raise FormatError(f"{name!r}: nbytes {nbytes} does not match shape {shape}")
            if off + nbytes > len(payload):
                raise FormatError(
                    f"truncated payload: {name!r} needs bytes [{off}, {off + nbytes}) "
                    f"but payload has {len(payload)}"
                )
            spans.append((off, off + nbytes, name))
            tensors[name] = np.frombuffer(payload[off:off + nbytes], dtype="<f4").reshape(shape)
        spans.sort()
        for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise FormatError(f"overlapping entries {n0!r} and {n1!r}")
        return cls({k: v.astype(np.float32) for k, v in tensors.items()})


def save_container(container: Mapping[str, np.ndarray], path) -> None:
    if not isinstance(container, TensorContainer):
        container = TensorContainer(container)
    write_atomic(path, container.to_bytes())


def load_container(path) -> TensorContainer:
    return TensorContainer.from_bytes(Path(path).read_bytes())


def write_atomic(path, data: bytes | str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
