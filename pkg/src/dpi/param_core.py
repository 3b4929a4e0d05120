"""Flat parameter vectors, core regions, freeze masks and checkpoints.

Parameters of every model live in one flat float64 vector of length D.
Everything here is a pure function over numpy arrays; nothing mutates its
inputs.
"""

from __future__ import annotations

import math
import struct
import warnings
import zlib
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    ChecksumError,
    ConfigError,
    DimensionError,
    HashMismatchError,
    NumericError,
    SchemaVersionError,
    TruncatedCheckpointError,
)

SCHEMA_VERSION = 1
CHECKPOINT_MAGIC = b"DPICKPT\x00"
# magic, schema_version, D, model_spec_hash, seed, stage_index, crc32(payload)
_HEADER = struct.Struct("<8sIQ16sqqI")


class DegenerateRegionWarning(UserWarning):
    """Raised (as a warning) for all-zero magnitudes or fully frozen masks."""


def as_param_vector(values) -> np.ndarray:
    """Copy ``values`` into a finite 1-D float64 vector."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NumericError(f"non-finite parameter at coordinate {bad[0]}", coordinate=int(bad[0]))
    return arr


def _same_dim(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: dimension mismatch {a.shape[0]} vs {b.shape[0]}")


def delta_magnitude(theta_i, theta_0) -> np.ndarray:
    """Absolute per-coordinate update ``|theta_i - theta_0|``."""
    a = np.asarray(theta_i, dtype=np.float64).reshape(-1)
    b = np.asarray(theta_0, dtype=np.float64).reshape(-1)
    _same_dim(a, b, "delta_magnitude")
    return np.abs(a - b)


def core_size(p: float, dim: int) -> int:
    """Number of indices in a core region: ``max(1, floor(p * D / 100))``."""
    if not (0.0 < p <= 100.0):
        raise ConfigError(f"p must lie in (0, 100], got {p!r}", field="p")
    # exact rational floor, so p=0.1 and D=1000 give 1 rather than 0
    k = math.floor(Fraction(repr(float(p))) * dim / 100)
    return max(1, min(k, dim))


@dataclass(frozen=True, eq=False)
class CoreRegion:
    indices: np.ndarray
    dim: int
    task_id: str
    p: float | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx[0] < 0 or idx[-1] >= self.dim):
            raise DimensionError(f"region index out of range for dim={self.dim}")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("region indices must be strictly increasing")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return int(self.indices.size)

    def __eq__(self, other):
        if not isinstance(other, CoreRegion):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.task_id == other.task_id
            and np.array_equal(self.indices, other.indices)
        )

    def as_set(self) -> set[int]:
        return set(self.indices.tolist())


def top_k_region(mags, p: float, task_id: str) -> CoreRegion:
    """Indices of the ``max(1, floor(p*D/100))`` largest magnitudes.

    Ties go to the smaller index. The returned indices are sorted.
    """
    mags = np.asarray(mags, dtype=np.float64).reshape(-1)
    if mags.size == 0:
        raise DimensionError("top_k_region: empty magnitude vector")
    if np.any(mags < 0) or not np.all(np.isfinite(mags)):
        raise NumericError("magnitudes must be finite and non-negative")
    k = core_size(p, mags.size)
    if not np.any(mags):
        warnings.warn(
            f"all-zero update magnitudes for task {task_id!r}; core region falls back "
            "to the lowest indices",
            DegenerateRegionWarning,
            stacklevel=2,
        )
    # stable sort on -mags keeps index order among equal magnitudes
    order = np.argsort(-mags, kind="stable")[:k]
    return CoreRegion(np.sort(order), mags.size, task_id, p)


@dataclass(frozen=True, eq=False)
class FreezeMask:
    """``bits[j] == 1`` means coordinate j is trainable, 0 means frozen."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        if np.any(bits > 1):
            raise ValueError("mask bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def dim(self) -> int:
        return int(self.bits.size)

    @property
    def trainable(self) -> np.ndarray:
        return self.bits.astype(bool)

    @property
    def frozen_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits == 0)

    def trainable_fraction(self) -> float:
        return float(self.bits.sum()) / self.dim

    @classmethod
    def ones(cls, dim: int) -> "FreezeMask":
        return cls(np.ones(dim, dtype=np.uint8))

    def __eq__(self, other):
        if not isinstance(other, FreezeMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


def mask_from_frozen(frozen: Iterable[int], dim: int) -> FreezeMask:
    idx = np.unique(np.fromiter((int(i) for i in frozen), dtype=np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= dim):
        raise DimensionError(f"frozen index out of range for dim={dim}")
    bits = np.ones(dim, dtype=np.uint8)
    bits[idx] = 0
    if dim and idx.size == dim:
        warnings.warn("every coordinate is frozen", DegenerateRegionWarning, stacklevel=2)
    return FreezeMask(bits)


def apply_masked_update(theta, delta, mask: FreezeMask) -> np.ndarray:
    """``theta + delta * mask`` with frozen coordinates copied verbatim.

    ``np.where`` is used instead of a product so that frozen coordinates are
    bit-identical even for ``-0.0`` entries.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    _same_dim(theta, delta, "apply_masked_update")
    if mask.dim != theta.size:
        raise DimensionError(f"mask has dim {mask.dim}, parameters have {theta.size}")
    bad = np.flatnonzero(~np.isfinite(delta))
    if bad.size:
        raise NumericError(f"non-finite update at coordinate {bad[0]}", coordinate=int(bad[0]))
    return np.where(mask.trainable, theta + delta, theta)


# -- checkpoints -----------------------------------------------------------


@dataclass(eq=False)
class Checkpoint:
    params: np.ndarray
    model_spec_hash: str
    seed: int = 0
    stage_index: int = 0
    schema_version: int = SCHEMA_VERSION

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.params.tobytes() == np.asarray(other.params, dtype=np.float64).tobytes()
            and self.model_spec_hash == other.model_spec_hash
            and self.seed == other.seed
            and self.stage_index == other.stage_index
            and self.schema_version == other.schema_version
        )


def _encode_hash(h: str) -> bytes:
    raw = bytes.fromhex(h)
    if len(raw) != 16:
        raise ValueError("model_spec_hash must be 32 hex characters")
    return raw


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    payload = np.ascontiguousarray(ckpt.params, dtype="<f8").tobytes()
    header = _HEADER.pack(
        CHECKPOINT_MAGIC,
        ckpt.schema_version,
        len(ckpt.params),
        _encode_hash(ckpt.model_spec_hash),
        int(ckpt.seed),
        int(ckpt.stage_index),
        zlib.crc32(payload),
    )
    path.write_bytes(header + payload)
    return path


def load_checkpoint(path, expected_spec_hash: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedCheckpointError(f"{path}: file shorter than checkpoint header")
    magic, version, dim, spec_hash, seed, stage, crc = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise TruncatedCheckpointError(f"{path}: bad magic {magic!r}")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema_version {version}, expected {SCHEMA_VERSION}")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * dim:
        raise TruncatedCheckpointError(f"{path}: expected {8 * dim} payload bytes, got {len(payload)}")
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    spec_hex = spec_hash.hex()
    if expected_spec_hash is not None and spec_hex != expected_spec_hash:
        raise HashMismatchError(f"{path}: model spec hash {spec_hex} != {expected_spec_hash}")
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Checkpoint(params, spec_hex, seed, stage, version)


# -- line-oriented index files ----------------------------------------------


def _format_p(p) -> str:
    return "none" if p is None else repr(float(p))


def write_region(region: CoreRegion, path) -> Path:
    path = Path(path)
    lines = [f"#dpi-region v1 dim={region.dim} task={region.task_id} p={_format_p(region.p)}"]
    lines.extend(str(int(i)) for i in region.indices)
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_header(line: str, kind: str) -> dict[str, str]:
    parts = line.split()
    if len(parts) < 2 or parts[0] != f"#dpi-{kind}" or parts[1] != "v1":
        raise ValueError(f"not a dpi-{kind} v1 file: {line!r}")
    return dict(part.split("=", 1) for part in parts[2:])


def read_region(path) -> CoreRegion:
    lines = Path(path).read_text().splitlines()
    fields = _parse_header(lines[0], "region")
    p = None if fields.get("p", "none") == "none" else float(fields["p"])
    indices = [int(x) for x in lines[1:] if x.strip()]
    return CoreRegion(np.array(indices, dtype=np.int64), int(fields["dim"]), fields["task"], p)


def write_mask(mask: FreezeMask, path, stage: int | None = None) -> Path:
    """Store a mask as the list of its frozen indices."""
    path = Path(path)
    frozen = mask.frozen_indices
    header = f"#dpi-mask v1 dim={mask.dim} frozen={frozen.size}"
    if stage is not None:
        header += f" stage={stage}"
    path.write_text("\n".join([header, *map(str, frozen.tolist())]) + "\n")
    return path


def read_mask(path) -> FreezeMask:
    lines = Path(path).read_text().splitlines()
    fields = _parse_header(lines[0], "mask")
    dim = int(fields["dim"])
    bits = np.ones(dim, dtype=np.uint8)
    frozen = [int(x) for x in lines[1:] if x.strip()]
    bits[frozen] = 0
    return FreezeMask(bits)
