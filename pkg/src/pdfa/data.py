"""IDX (MNIST-family) file parsing, dataset splits and minibatch sampling."""

from __future__ import annotations

import gzip
import hashlib
import logging
import os
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import DTYPE, make_rng

log = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10
DATA_DIR_ENV = "PDFA_DATA_DIR"

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# md5 and byte size of the canonical gzip'd files
CHECKSUMS = {
    "mnist": {
        "train-images-idx3-ubyte.gz": ("f68b3c2dcbeaaa9fbdd348bbdeb94873", 9912422),
        "train-labels-idx1-ubyte.gz": ("d53e105ee54ea40749a09fcbcd1e9432", 28881),
        "t10k-images-idx3-ubyte.gz": ("9fb629c4189551a2d022fa330f9573f3", 1648877),
        "t10k-labels-idx1-ubyte.gz": ("ec29112dd5afa0611ce80d1b7f02629c", 4542),
    },
    "fashion_mnist": {
        "train-images-idx3-ubyte.gz": ("8d4fb7e6c68d591d4c3dfef9ec88bf0d", 26421880),
        "train-labels-idx1-ubyte.gz": ("25c81989df183df01b3e8a0aad5dffbe", 29515),
        "t10k-images-idx3-ubyte.gz": ("bef4ecab320f06d8554ea6380940ec79", 4422102),
        "t10k-labels-idx1-ubyte.gz": ("bb300cfdad3c16e7a12a480ee83cd310", 5148),
    },
}

BASE_URLS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion_mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}


class IdxError(ValueError):
    pass


class BadMagic(IdxError):
    pass


class TruncatedPayload(IdxError):
    pass


class DimensionMismatch(IdxError):
    pass


class ChecksumError(IOError):
    pass


def _maybe_gunzip(payload: bytes) -> bytes:
    if payload[:2] == b"\x1f\x8b":
        return gzip.decompress(payload)
    return payload


def load_idx_images(payload: bytes, normalize: bool = True) -> np.ndarray:
    """Parse an IDX3 image file into a ``(count, rows*cols)`` array.

    Pixels are scaled to [0, 1] unless ``normalize`` is False, in which case
    the raw ``uint8`` values are returned.
    """
    payload = _maybe_gunzip(payload)
    if len(payload) < 16:
        raise TruncatedPayload(f"IDX3 header needs 16 bytes, got {len(payload)}")
    magic, count, rows, cols = struct.unpack(">IIII", payload[:16])
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"expected image magic 0x{IMAGE_MAGIC:08x}, got 0x{magic:08x}")
    if (rows, cols) != (28, 28):
        raise DimensionMismatch(f"expected 28x28 images, got {rows}x{cols}")
    need = 16 + count * rows * cols
    if len(payload) < need:
        raise TruncatedPayload(f"expected {need} bytes for {count} images, got {len(payload)}")
    if len(payload) > need:
        raise DimensionMismatch(f"{len(payload) - need} trailing bytes after {count} images")
    pixels = np.frombuffer(payload, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    if not normalize:
        return pixels.copy()
    return pixels.astype(DTYPE) / 255.0


def load_idx_labels(payload: bytes) -> np.ndarray:
    payload = _maybe_gunzip(payload)
    if len(payload) < 8:
        raise TruncatedPayload(f"IDX1 header needs 8 bytes, got {len(payload)}")
    magic, count = struct.unpack(">II", payload[:8])
    if magic != LABEL_MAGIC:
        raise BadMagic(f"expected label magic 0x{LABEL_MAGIC:08x}, got 0x{magic:08x}")
    if len(payload) < 8 + count:
        raise TruncatedPayload(f"expected {count} labels, got {len(payload) - 8}")
    if len(payload) > 8 + count:
        raise DimensionMismatch(f"{len(payload) - 8 - count} trailing bytes after {count} labels")
    labels = np.frombuffer(payload, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() >= NUM_CLASSES:
        raise IdxError(f"label {labels.max()} out of range [0, {NUM_CLASSES})")
    return labels


def dump_idx_images(images) -> bytes:
    """Serialize images (normalized floats or uint8) back to IDX3 bytes."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.round(images * 255.0).astype(np.uint8)
    images = images.reshape(images.shape[0], -1)
    if images.shape[1] != 784:
        raise DimensionMismatch(f"expected 784 pixels per image, got {images.shape[1]}")
    return struct.pack(">IIII", IMAGE_MAGIC, images.shape[0], 28, 28) + images.tobytes()


def dump_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def X(self) -> np.ndarray:
        return self.images

    @property
    def y(self) -> np.ndarray:
        return self.labels

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx])


def split(ds: LabeledDataset, fraction: float = 0.10, seed: int = 0):
    """Shuffle with ``seed`` and hold out ``round(fraction * N)`` samples for validation."""
    if not 0 < fraction < 1:
        raise ValueError(f"validation fraction must lie in (0, 1), got {fraction}")
    n = len(ds)
    perm = make_rng(seed).permutation(n)
    n_val = int(round(fraction * n))
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return ds.subset(train_idx), ds.subset(val_idx)


def minibatches(n: int, m: int, rng: np.random.Generator):
    """Index batches of size ``m`` from a fresh permutation; the short tail is dropped."""
    if m < 1:
        raise ValueError(f"batch size must be >= 1, got {m}")
    if m > n:
        raise ValueError(f"batch size {m} exceeds dataset size {n}")
    perm = rng.permutation(n)
    return [perm[i:i + m] for i in range(0, n - m + 1, m)]


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, Path.home() / ".cache" / "pdfa"))


def _find(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / (stem + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}; run `pdfa fetch-data`")


def synthetic_dataset(n_train: int = 3000, n_test: int = 1000, seed: int = 0):
    """Small deterministic 10-class stand-in with MNIST-shaped, 8-bit quantized images."""
    rng = make_rng(seed)
    prototypes = rng.random((NUM_CLASSES, 784)) ** 3

    def sample(n):
        labels = rng.integers(0, NUM_CLASSES, size=n)
        pixels = np.clip(prototypes[labels] + rng.normal(0.0, 0.9, size=(n, 784)), 0.0, 1.0)
        return LabeledDataset(np.round(pixels * 255.0) / 255.0, labels.astype(np.int64))

    return sample(n_train), sample(n_test)


def load_dataset(name: str, data_dir=None):
    """Load ``(train, test)`` ``LabeledDataset`` pairs from ``<data_dir>/<name>/``.

    The name ``synthetic`` returns ``synthetic_dataset()`` without touching disk.
    """
    if name == "synthetic":
        return synthetic_dataset()
    directory = Path(data_dir or default_data_dir()) / name
    read = lambda key: _find(directory, FILES[key]).read_bytes()
    train = LabeledDataset(load_idx_images(read("train_images")), load_idx_labels(read("train_labels")))
    test = LabeledDataset(load_idx_images(read("test_images")), load_idx_labels(read("test_labels")))
    return train, test


def _md5(path: Path) -> str:
    return hashlib.md5(path.read_bytes()).hexdigest()


def _validate_raw(path: Path, stem: str) -> None:
    payload = path.read_bytes()
    if "images" in stem:
        load_idx_images(payload, normalize=False)
    else:
        load_idx_labels(payload)


def fetch(name: str, data_dir=None, base_url: str | None = None, opener=None) -> list:
    """Download the four gzip'd IDX files of ``name`` unless already present.

    Existing gzip files are verified against the recorded md5 and size and
    removed on mismatch; uncompressed files are accepted after a structural
    parse. Returns the list of paths that were downloaded.
    """
    if name not in CHECKSUMS:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(CHECKSUMS)}")
    directory = Path(data_dir or default_data_dir()) / name
    directory.mkdir(parents=True, exist_ok=True)
    base_url = base_url or BASE_URLS[name]
    opener = opener or urllib.request.urlopen
    fetched = []
    for fname, (md5, size) in CHECKSUMS[name].items():
        stem = fname[:-3]
        raw = directory / stem
        gz = directory / fname
        if raw.exists() and not gz.exists():
            _validate_raw(raw, stem)
            continue
        if not gz.exists():
            url = base_url.rstrip("/") + "/" + fname
            log.info("downloading %s", url)
            with opener(url) as resp:
                gz.write_bytes(resp.read())
            fetched.append(gz)
        if gz.stat().st_size != size or _md5(gz) != md5:
            gz.unlink()
            raise ChecksumError(f"{fname}: checksum mismatch, file removed")
    return fetched


def prepare(name: str, data_dir=None, validation_fraction: float = 0.1, split_seed: int = 0,
            train_subset: int | None = None):
    """``(train, val, test)`` with the validation split carved from the training file."""
    full, test = load_dataset(name, data_dir)
    train, val = split(full, validation_fraction, split_seed)
    if train_subset is not None:
        train = train.subset(np.arange(min(train_subset, len(train))))
    return train, val, test
