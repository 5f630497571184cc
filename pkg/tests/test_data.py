import gzip
import hashlib
import io
import struct

import numpy as np
import pytest

from conftest import dataset_available
from pdfa import data
from pdfa.data import (BadMagic, ChecksumError, DimensionMismatch, IdxError, LabeledDataset,
                       TruncatedPayload, dump_idx_images, dump_idx_labels, load_dataset,
                       load_idx_images, load_idx_labels, minibatches, split)

needs_mnist = pytest.mark.skipif(not dataset_available("mnist"), reason="MNIST files not present")
needs_fashion = pytest.mark.skipif(not dataset_available("fashion_mnist"), reason="FashionMNIST files not present")


def images_header(count, rows=28, cols=28, magic=0x803):
    return struct.pack(">IIII", magic, count, rows, cols)


def test_images_examples():
    assert load_idx_images(images_header(0)).shape == (0, 784)
    one = load_idx_images(images_header(1) + bytes([255]) * 784)
    assert one.shape == (1, 784) and np.all(one == 1.0)


def test_images_errors():
    with pytest.raises(BadMagic):
        load_idx_images(images_header(0, magic=0x801))
    with pytest.raises(TruncatedPayload):
        load_idx_images(images_header(2) + bytes(784))
    with pytest.raises(TruncatedPayload):
        load_idx_images(b"\x00\x00")
    with pytest.raises(DimensionMismatch):
        load_idx_images(images_header(1, 27, 28) + bytes(27 * 28))
    with pytest.raises(DimensionMismatch):
        load_idx_images(images_header(1) + bytes(785))
    assert issubclass(BadMagic, IdxError) and not issubclass(BadMagic, TruncatedPayload)


def test_labels_examples_and_errors():
    assert load_idx_labels(struct.pack(">II", 0x801, 0)).size == 0
    assert load_idx_labels(struct.pack(">II", 0x801, 1) + bytes([7])).tolist() == [7]
    with pytest.raises(IdxError):
        load_idx_labels(struct.pack(">II", 0x801, 1) + bytes([10]))
    with pytest.raises(BadMagic):
        load_idx_labels(struct.pack(">II", 0x803, 0))
    with pytest.raises(TruncatedPayload):
        load_idx_labels(struct.pack(">II", 0x801, 3) + bytes(2))


def test_gzip_detected(rng):
    pixels = rng.integers(0, 256, size=(3, 784), dtype=np.uint8)
    raw = dump_idx_images(pixels)
    np.testing.assert_array_equal(load_idx_images(gzip.compress(raw), normalize=False), pixels)


def test_roundtrip_bit_exact(rng):
    pixels = rng.integers(0, 256, size=(5, 784), dtype=np.uint8)
    raw = dump_idx_images(pixels)
    assert dump_idx_images(load_idx_images(raw)) == raw
    assert np.array_equal(np.round(load_idx_images(raw) * 255).astype(np.uint8), pixels)
    labels = dump_idx_labels([3, 1, 4, 1, 5])
    assert dump_idx_labels(load_idx_labels(labels)) == labels


def test_split_properties(rng):
    ds = LabeledDataset(np.arange(60000)[:, None].astype(float), np.zeros(60000, dtype=int))
    tr, va = split(ds, 0.10, seed=3)
    assert (len(tr), len(va)) == (54000, 6000)
    ids = np.concatenate([tr.images[:, 0], va.images[:, 0]])
    assert np.array_equal(np.sort(ids), np.arange(60000))
    tr2, _ = split(ds, 0.10, seed=3)
    assert np.array_equal(tr.images, tr2.images)
    with pytest.raises(ValueError):
        split(ds, 1.0)


def test_minibatches():
    r = np.random.default_rng(0)
    assert [sorted(b) for b in minibatches(10, 10, r)] == [list(range(10))]
    batches = minibatches(54000, 256, r)
    assert len(batches) == 210 and all(len(b) == 256 for b in batches)
    flat = np.concatenate(batches)
    assert len(np.unique(flat)) == len(flat) == 54000 - 240
    with pytest.raises(ValueError):
        minibatches(5, 6, r)
    with pytest.raises(ValueError):
        minibatches(5, 0, r)


def test_dataset_length_mismatch():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 784)), np.zeros(2, dtype=int))


def test_synthetic_dataset_is_deterministic():
    a, _ = load_dataset("synthetic")
    b, _ = load_dataset("synthetic")
    assert np.array_equal(a.images, b.images) and a.images.shape[1] == 784
    assert a.images.min() >= 0 and a.images.max() <= 1


def fake_files(name):
    """Gzip payloads whose checksums we register in place of the published ones."""
    pixels = np.zeros((2, 784), dtype=np.uint8)
    payloads = {
        "train-images-idx3-ubyte.gz": gzip.compress(dump_idx_images(pixels), mtime=0),
        "train-labels-idx1-ubyte.gz": gzip.compress(dump_idx_labels([1, 2]), mtime=0),
        "t10k-images-idx3-ubyte.gz": gzip.compress(dump_idx_images(pixels[:1]), mtime=0),
        "t10k-labels-idx1-ubyte.gz": gzip.compress(dump_idx_labels([3]), mtime=0),
    }
    sums = {k: (hashlib.md5(v).hexdigest(), len(v)) for k, v in payloads.items()}
    return payloads, sums


class Opener:
    def __init__(self, payloads):
        self.payloads = payloads
        self.calls = []

    def __call__(self, url):
        self.calls.append(url)
        return io.BytesIO(self.payloads[url.rsplit("/", 1)[1]])


def test_fetch_idempotent_and_checksum(tmp_path, monkeypatch):
    payloads, sums = fake_files("toy")
    monkeypatch.setitem(data.CHECKSUMS, "toy", sums)
    opener = Opener(payloads)
    got = data.fetch("toy", tmp_path, base_url="https://example.invalid/x", opener=opener)
    assert len(got) == 4 and len(opener.calls) == 4
    assert data.fetch("toy", tmp_path, base_url="https://example.invalid/x", opener=opener) == []
    assert len(opener.calls) == 4
    train, test = load_dataset("toy", tmp_path)
    assert train.labels.tolist() == [1, 2] and len(test) == 1
    target = tmp_path / "toy" / "train-labels-idx1-ubyte.gz"
    target.write_bytes(b"corrupted")
    with pytest.raises(ChecksumError):
        data.fetch("toy", tmp_path, opener=opener, base_url="https://example.invalid/x")
    assert not target.exists()


def test_fetch_unknown_dataset(tmp_path):
    with pytest.raises(ValueError):
        data.fetch("cifar", tmp_path)


def test_published_fashion_sizes_recorded():
    sizes = {k: v[1] for k, v in data.CHECKSUMS["fashion_mnist"].items()}
    assert sizes == {"train-images-idx3-ubyte.gz": 26421880, "train-labels-idx1-ubyte.gz": 29515,
                     "t10k-images-idx3-ubyte.gz": 4422102, "t10k-labels-idx1-ubyte.gz": 5148}


def test_missing_files_message(tmp_path):
    with pytest.raises(FileNotFoundError, match="fetch-data"):
        load_dataset("mnist", tmp_path)


@needs_mnist
def test_mnist_fixture():
    train, test = load_dataset("mnist")
    assert train.images.shape == (60000, 784) and len(test) == 10000
    first = np.round(train.images[0] * 255).astype(np.uint8)
    assert hashlib.sha256(first.tobytes()).hexdigest() == \
        "23ceaef5eb61f0e70d64ac18fdf0f60df3d5971cf30bbadac7b6ebf07f782d2c"
    assert np.bincount(train.labels).tolist() == [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]
    assert np.bincount(test.labels).tolist() == [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]


@needs_fashion
def test_fashion_fixture():
    train, test = load_dataset("fashion_mnist")
    assert train.images.shape == (60000, 784) and len(test) == 10000
    assert np.bincount(train.labels).tolist() == [6000] * 10
    assert np.bincount(test.labels).tolist() == [1000] * 10
