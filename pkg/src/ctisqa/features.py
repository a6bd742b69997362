"""Per-slide patch-feature matrices and their binary container.

Container layout (all little-endian)::

    offset  size  field
    0       8     magic b"CTISFEAT"
    8       2     version (u16, currently 1)
    10      8     rows N (u64)
    18      4     cols d (u32)
    22      4     flags (u32): bit0 coords, bit1 label, bit2 float64 payload
    26      2     label length in bytes (u16)
    28      4     reserved, zero
    32      ...   payload, N*d floats row-major (f32, or f64 with bit2)
    ...     ...   coords block, N*2 u32 (bit0 only)
    ...     ...   label, UTF-8 (bit1 only)
    end-8   8     FNV-1a 64 checksum of every preceding byte

Feature matrices always use the f32 payload and store the slide id as the
label. The same container carries other matrices (centroids, PPM parameters,
token sequences), usually with an f64 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    BadMagic,
    ChecksumMismatch,
    ContainerError,
    InvalidShape,
    NonFiniteValue,
    TruncatedPayload,
    VersionMismatch,
)

MAGIC = b"CTISFEAT"
VERSION = 1
HEADER = struct.Struct("<8sHQIIHI")
HEADER_SIZE = HEADER.size  # 32

FLAG_COORDS = 1
FLAG_LABEL = 2
FLAG_F64 = 4

DEFAULT_DIM = 1024


def fnv1a64(data) -> int:
    """64-bit FNV-1a over a bytes-like object or uint8 array."""
    return _kernels.fnv1a64(data)


def format_checksum(value: int) -> str:
    return f"0x{value:016x}"


def parse_checksum(text) -> int:
    return int(text, 16) if isinstance(text, str) else int(text)


def file_checksum(path) -> int:
    return fnv1a64(np.fromfile(path, dtype=np.uint8))


@dataclass
class PatchFeatureMatrix:
    slide_id: str
    data: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvalidShape(f"feature data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidShape(f"need n_patches >= 1 and dim >= 1, got {data.shape}")
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        bad = np.flatnonzero(~np.isfinite(self.data.ravel()))
        if bad.size:
            raise NonFiniteValue(f"non-finite feature value at flat index {bad[0]}")
        if self.coords is not None:
            coords = np.asarray(self.coords)
            if coords.shape != (data.shape[0], 2):
                raise InvalidShape(f"coords must be ({data.shape[0]}, 2), got {coords.shape}")
            if np.any(coords < 0):
                raise InvalidShape("coords must be non-negative")
            self.coords = np.ascontiguousarray(coords, dtype=np.int64)

    @property
    def n_patches(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# container


def encode_matrix(data, coords=None, label: str = "", float64: bool = False) -> bytes:
    dtype = np.dtype("<f8") if float64 else np.dtype("<f4")
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise InvalidShape(f"container matrix must be 2-D and non-empty, got {data.shape}")
    n, d = data.shape
    label_bytes = label.encode("utf-8")
    if len(label_bytes) > 0xFFFF:
        raise InvalidShape("label longer than 65535 bytes")
    flags = 0
    if coords is not None:
        flags |= FLAG_COORDS
    if label_bytes:
        flags |= FLAG_LABEL
    if float64:
        flags |= FLAG_F64
    parts = [
        HEADER.pack(MAGIC, VERSION, n, d, flags, len(label_bytes), 0),
        np.ascontiguousarray(data, dtype=dtype).tobytes(),
    ]
    if coords is not None:
        parts.append(np.ascontiguousarray(coords, dtype="<u4").tobytes())
    parts.append(label_bytes)
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode_matrix(buf: bytes):
    """Parse container bytes into ``(data, coords, label, checksum)``."""
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayload("file shorter than the 32-byte header", offset=len(buf))
    magic, version, n, d, flags, label_len, _ = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise VersionMismatch(f"unsupported container version {version}", offset=8)
    if n < 1 or d < 1:
        raise InvalidShape(f"header declares empty matrix {n}x{d}")
    itemsize = 8 if flags & FLAG_F64 else 4
    payload_end = HEADER_SIZE + n * d * itemsize
    coords_end = payload_end + (n * 2 * 4 if flags & FLAG_COORDS else 0)
    label_end = coords_end + (label_len if flags & FLAG_LABEL else 0)
    total = label_end + 8
    if len(buf) < total:
        raise TruncatedPayload(f"expected {total} bytes, found {len(buf)}", offset=len(buf))
    if len(buf) > total:
        raise ContainerError(f"{len(buf) - total} trailing bytes after checksum", offset=total)

    stored = struct.unpack_from("<Q", buf, label_end)[0]
    computed = fnv1a64(memoryview(buf)[:label_end])
    if stored != computed:
        raise ChecksumMismatch(
            f"checksum {format_checksum(stored)} != computed {format_checksum(computed)}",
            offset=label_end,
        )

    dtype = np.dtype("<f8") if itemsize == 8 else np.dtype("<f4")
    data = np.frombuffer(buf, dtype=dtype, count=n * d, offset=HEADER_SIZE)
    finite = np.isfinite(data)
    if not finite.all():
        idx = int(np.argmin(finite))
        raise NonFiniteValue("non-finite value in payload", offset=HEADER_SIZE + idx * itemsize)
    data = data.reshape(n, d).astype(np.float64 if itemsize == 8 else np.float32)

    coords = None
    if flags & FLAG_COORDS:
        coords = np.frombuffer(buf, dtype="<u4", count=n * 2, offset=payload_end)
        coords = coords.reshape(n, 2).astype(np.int64)
    label = ""
    if flags & FLAG_LABEL:
        label = bytes(buf[coords_end:label_end]).decode("utf-8")
    return data, coords, label, stored


def write_matrix(path, data, coords=None, label: str = "", float64: bool = False) -> int:
    blob = encode_matrix(data, coords=coords, label=label, float64=float64)
    Path(path).write_bytes(blob)
    return struct.unpack_from("<Q", blob, len(blob) - 8)[0]


def read_matrix(path):
    """Return ``(data, coords, label)`` from any container file."""
    data, coords, label, _ = decode_matrix(Path(path).read_bytes())
    return data, coords, label


def write_features(m: PatchFeatureMatrix, path) -> int:
    """Write ``m`` to ``path`` and return the container checksum."""
    return write_matrix(path, m.data, coords=m.coords, label=m.slide_id)


def read_features(path) -> PatchFeatureMatrix:
    data, coords, label, _ = decode_matrix(Path(path).read_bytes())
    if data.dtype != np.float32:
        raise ContainerError("feature containers must carry a float32 payload", offset=22)
    return PatchFeatureMatrix(slide_id=label, data=data, coords=coords)


# ---------------------------------------------------------------------------
# synthetic slides


def _mode_means(rng, n_modes, dim, std):
    min_sep = 10.0 * std
    # box side chosen so random draws are usually separated; resample otherwise
    scale = 4.0 * min_sep * max(1.0, n_modes ** (1.0 / dim))
    for _ in range(64):
        means = rng.uniform(-scale, scale, size=(n_modes, dim))
        if n_modes < 2:
            return means
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        dist[np.diag_indices(n_modes)] = np.inf
        if dist.min() >= min_sep:
            return means
    # deterministic fallback: modes strung along the first axis
    means = np.zeros((n_modes, dim))
    means[:, 0] = np.arange(n_modes) * 1.5 * min_sep
    return means


def synth_slide(seed: int, n_patches: int, dim: int = DEFAULT_DIM, n_modes: int = 1, *,
                slide_id: str | None = None, with_coords: bool = False,
                return_labels: bool = False, std: float = 1.0):
    """Draw a Gaussian-mixture slide with ``n_modes`` well-separated modes.

    Mode means are pairwise at least ``10 * std`` apart. With
    ``return_labels`` the ground-truth mode of every patch is returned too.
    """
    if n_patches < 1 or dim < 1 or n_modes < 1:
        raise InvalidShape("n_patches, dim and n_modes must be >= 1")
    if n_modes > n_patches:
        raise InvalidShape(f"n_modes={n_modes} exceeds n_patches={n_patches}")
    rng = np.random.default_rng(seed)
    means = _mode_means(rng, n_modes, dim, std)
    labels = rng.permutation(np.arange(n_patches) % n_modes)
    data = rng.standard_normal((n_patches, dim), dtype=np.float32)
    if std != 1.0:
        data *= np.float32(std)
    data += means.astype(np.float32)[labels]
    coords = None
    if with_coords:
        width = int(np.ceil(np.sqrt(n_patches)))
        idx = np.arange(n_patches)
        coords = np.stack([idx % width, idx // width], axis=1)
    m = PatchFeatureMatrix(slide_id=slide_id or f"synth-{seed}", data=data, coords=coords)
    if return_labels:
        return m, labels
    return m


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    slide_id: str
    path: str
    n_patches: int
    dim: int
    checksum: int

    def to_json(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "path": self.path,
            "n_patches": self.n_patches,
            "dim": self.dim,
            "checksum": format_checksum(self.checksum),
        }


@dataclass
class SlideManifest:
    entries: list

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.slide_id in seen:
                raise ValueError(f"duplicate slide_id in manifest: {e.slide_id!r}")
            seen.add(e.slide_id)

    def resolve(self, entry: ManifestEntry, base) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else Path(base) / p


def write_manifest(manifest: SlideManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(json.dumps(e.to_json()) + "\n")


def read_manifest(path) -> SlideManifest:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            entries.append(ManifestEntry(
                slide_id=rec["slide_id"], path=rec["path"], n_patches=int(rec["n_patches"]),
                dim=int(rec["dim"]), checksum=parse_checksum(rec["checksum"]),
            ))
    return SlideManifest(entries)


def container_checksum(path) -> int:
    """The trailer checksum of a container file, validated against its contents."""
    return decode_matrix(Path(path).read_bytes())[3]


def verify_manifest(manifest: SlideManifest, base) -> list[str]:
    """Return the slide ids whose container is missing, corrupt or mismatched."""
    bad = []
    for e in manifest.entries:
        path = manifest.resolve(e, base)
        try:
            ok = container_checksum(path) == e.checksum
        except (OSError, ContainerError):
            ok = False
        if not ok:
            bad.append(e.slide_id)
    return bad


def save_slides(slides, out_dir) -> SlideManifest:
    """Write slides as ``<slide_id>.ctis`` files plus ``manifest.jsonl``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in slides:
        name = f"{m.slide_id}.ctis"
        checksum = write_features(m, out_dir / name)
        entries.append(ManifestEntry(m.slide_id, name, m.n_patches, m.dim, checksum))
    manifest = SlideManifest(entries)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest

