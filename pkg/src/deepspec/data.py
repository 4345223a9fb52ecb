"""Datasets, batching, checkpoint container and CSV persistence."""

from __future__ import annotations

import csv
import gzip
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigurationError, ParseError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

CHECKPOINT_MAGIC = b"DSPC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ImageSet:
    """Label-free view of a dataset; the only thing training code receives."""

    images: np.ndarray
    name: str

    @property
    def n(self):
        return len(self.images)


@dataclass(frozen=True)
class Dataset:
    """Images (n, c, h, w) in [0, 1], or raw vectors (n, dim), plus optional labels."""

    images: np.ndarray
    labels: np.ndarray | None
    name: str

    @property
    def n(self):
        return len(self.images)

    @property
    def K_true(self):
        return None if self.labels is None else int(len(np.unique(self.labels)))

    def unlabeled(self):
        return ImageSet(self.images, self.name)

    def subsample(self, count, seed=0):
        if count >= self.n:
            return self
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5AB])))
        idx = np.sort(gen.choice(self.n, size=count, replace=False))
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.images[idx], labels, self.name)


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def _read_payload(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(buf, fields, what):
    values = []
    for i in range(fields):
        offset = 4 * i
        if len(buf) < offset + 4:
            raise ParseError(f"{what}: truncated header field {i}", offset)
        values.append(struct.unpack_from(">I", buf, offset)[0])
    return values


def parse_idx_images(buf):
    magic, count, rows, cols = _header(buf, 4, "image file")
    if magic != IDX_IMAGE_MAGIC:
        raise ParseError(f"image file: bad magic 0x{magic:08x}", 0)
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise ParseError(f"image file: payload truncated, expected {need} bytes, found {len(buf)}", len(buf))
    if len(buf) > need:
        raise ParseError(f"image file: {len(buf) - need} trailing bytes", need)
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)


def parse_idx_labels(buf):
    magic, count = _header(buf, 2, "label file")
    if magic != IDX_LABEL_MAGIC:
        raise ParseError(f"label file: bad magic 0x{magic:08x}", 0)
    need = 8 + count
    if len(buf) < need:
        raise ParseError(f"label file: payload truncated, expected {need} bytes, found {len(buf)}", len(buf))
    if len(buf) > need:
        raise ParseError(f"label file: {len(buf) - need} trailing bytes", need)
    return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(images_path, labels_path=None, name=None):
    """Read big-endian IDX image (and label) files, gzip or raw, scaled to [0, 1]."""
    images = parse_idx_images(_read_payload(images_path))
    labels = None
    if labels_path is not None:
        labels = parse_idx_labels(_read_payload(labels_path))
        if len(labels) != len(images):
            raise ParseError(f"label count {len(labels)} does not match image count {len(images)}", 4)
    return Dataset(images.astype(np.float64) / 255.0, labels, name or Path(images_path).name)


def write_idx(path, images=None, labels=None):
    """Write an IDX file for uint8 images (n, h, w) or (n, 1, h, w), or for labels."""
    if images is not None:
        arr = np.asarray(images, dtype=np.uint8)
        if arr.ndim == 4:
            arr = arr[:, 0]
        payload = struct.pack(">IIII", IDX_IMAGE_MAGIC, *arr.shape) + arr.tobytes()
    else:
        arr = np.asarray(labels, dtype=np.uint8)
        payload = struct.pack(">II", IDX_LABEL_MAGIC, len(arr)) + arr.tobytes()
    Path(path).write_bytes(payload)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _generator(seed, tag):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), tag])))


def make_blobs(n, K, dim=2, separation=10.0, spread=1.0, seed=0, image_size=None):
    """Balanced Gaussian blobs.

    As vectors: K centres pairwise ``separation`` apart, isotropic noise of
    standard deviation ``spread``. With ``image_size`` set, each sample is a
    single-channel square image with a bright square whose anchor depends on
    the blob index; ``spread`` is the positional jitter in pixels and mild
    pixel noise is added.
    """
    if n < K:
        raise ConfigurationError(f"need n >= K, got n={n}, K={K}")
    gen = _generator(seed, 0xB10B)
    labels = gen.permutation(np.arange(n) % K)
    if image_size is None:
        if dim >= K:
            centres = np.eye(K, dim) * separation / math.sqrt(2.0)
        else:
            radius = 0.0 if K == 1 else separation / (2.0 * math.sin(math.pi / K))
            angles = 2.0 * math.pi * np.arange(K) / K
            centres = np.zeros((K, dim))
            centres[:, 0] = radius * np.cos(angles)
            if dim > 1:
                centres[:, 1] = radius * np.sin(angles)
        points = centres[labels] + spread * gen.standard_normal((n, dim))
        return Dataset(points, labels, f"blobs{K}")

    s = int(image_size)
    grid = math.ceil(math.sqrt(K))
    cell = s / grid
    side = max(2, s // 2)
    anchors = np.array([((k // grid + 0.5) * cell - side / 2, (k % grid + 0.5) * cell - side / 2) for k in range(K)])
    jitter = np.rint(spread * gen.standard_normal((n, 2)))
    corners = np.clip(np.rint(anchors[labels] + jitter), 0, s - side).astype(int)
    images = np.abs(0.05 * gen.standard_normal((n, 1, s, s)))
    brightness = gen.uniform(0.7, 1.0, n)
    for i, (r, c) in enumerate(corners):
        images[i, 0, r:r + side, c:c + side] = brightness[i]
    return Dataset(np.clip(images, 0.0, 1.0), labels, f"blobs{K}-img{s}")


def make_rings(n, seed=0, radii=(1.0, 3.0), noise=0.1):
    """Concentric rings in the plane, one class per ring, alternating labels."""
    gen = _generator(seed, 0x219)
    labels = np.arange(n) % len(radii)
    angles = gen.uniform(0.0, 2.0 * math.pi, n)
    r = np.asarray(radii)[labels]
    points = np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)
    points += noise * gen.standard_normal((n, 2))
    return Dataset(points, labels, "rings")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def batches(n, m, seed=0, epoch=0, drop_last=True):
    """Index arrays for one epoch: seeded shuffle, short final batch dropped."""
    n = n if isinstance(n, int) else len(n.images)
    if m > n:
        raise ConfigurationError(f"batch size {m} exceeds dataset size {n}")
    if m < 1:
        raise ConfigurationError(f"batch size must be positive, got {m}")
    order = _generator(seed, 0xE0C0 + int(epoch)).permutation(n)
    stop = (n // m) * m if drop_last else n
    return [order[i:i + m] for i in range(0, stop, m)]


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors):
    """Write named float64 arrays as: magic, u32 version, u32 count, entries, u32 CRC32.

    Each entry is u32 name length, UTF-8 name, u32 rank, u64 extents and the
    little-endian float64 payload. All integers are little-endian.
    """
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise CheckpointError(f"{path}: file too short for a checkpoint")
    body, stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != stored:
        raise CheckpointError(f"{path}: checksum mismatch")
    if body[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {body[:4]!r})")
    version, count = struct.unpack_from("<II", body, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    pos = 12
    out = {}
    for _ in range(count):
        (length,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + length].decode("utf-8")
        pos += length
        (ndim,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} unexpected trailing bytes")
    return out


def text_to_array(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def array_to_text(arr):
    return bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def export_csv(rows, path, fieldnames=None):
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
