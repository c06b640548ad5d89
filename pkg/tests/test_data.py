import struct

import numpy as np
import pytest

from bfno import data
from bfno.data import (
    DataError,
    Dataset,
    IdxBadMagicError,
    IdxSizeMismatchError,
    IdxTruncatedError,
    gen_synthetic,
    parse_idx,
    subset,
)


def _idx_bytes(magic: int, dims, payload: bytes) -> bytes:
    return struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims) + payload


# ------------------------------------------------------------ IDX parsing


def test_parse_idx_image_fixture():
    blob = _idx_bytes(0x00000803, (1, 2, 2), bytes([0, 128, 255, 64]))
    arr = parse_idx(blob)
    assert arr.shape == (1, 2, 2)
    assert arr.tolist() == [[[0, 128], [255, 64]]]


def test_parse_idx_label_fixture():
    blob = _idx_bytes(0x00000801, (3,), bytes([1, 0, 9]))
    assert parse_idx(blob).tolist() == [1, 0, 9]


def test_parse_idx_short_payload():
    blob = _idx_bytes(0x00000803, (1, 2, 2), bytes([0, 128]))
    with pytest.raises(IdxSizeMismatchError):
        parse_idx(blob)


def test_parse_idx_trailing_bytes_rejected():
    blob = _idx_bytes(0x00000801, (2,), bytes([1, 2, 3]))
    with pytest.raises(IdxSizeMismatchError):
        parse_idx(blob)


def test_parse_idx_bad_magic():
    with pytest.raises(IdxBadMagicError):
        parse_idx(_idx_bytes(0x00000903, (1,), bytes([5])))
    with pytest.raises(IdxBadMagicError):
        parse_idx(b"\x01\x00\x08\x01" + struct.pack(">I", 1) + bytes([5]))


def test_parse_idx_truncated_header():
    with pytest.raises(IdxTruncatedError):
        parse_idx(b"\x00\x00")
    with pytest.raises(IdxTruncatedError):
        parse_idx(_idx_bytes(0x00000803, (1,), b"")[:6])


def test_malformed_corpus_maps_to_declared_errors():
    # parsing is total: every malformed stream raises exactly one DataError kind
    corpus = [
        b"",
        b"\x00",
        b"\xff\xff\xff\xff",
        _idx_bytes(0x00000802, (2,), bytes(2)),  # wrong dtype byte
        _idx_bytes(0x00000803, (2, 2, 2), bytes(7)),
        _idx_bytes(0x00000801, (1,), bytes(0)),
        _idx_bytes(0x00000805, (1, 1, 1, 1, 1), bytes(1))[:10],
    ]
    for blob in corpus:
        with pytest.raises((IdxBadMagicError, IdxTruncatedError, IdxSizeMismatchError)):
            parse_idx(blob)


def test_load_idx_dataset_roundtrip(tmp_path):
    root = tmp_path / "mnist"
    root.mkdir()
    images = np.arange(4 * 3 * 3, dtype=np.uint8).reshape(4, 3, 3)
    labels = np.array([0, 255 % 10, 3, 9], dtype=np.uint8)
    (root / "train-images.idx").write_bytes(_idx_bytes(0x00000803, images.shape, images.tobytes()))
    (root / "train-labels.idx").write_bytes(_idx_bytes(0x00000801, labels.shape, labels.tobytes()))
    ds = data.load_idx_dataset(tmp_path, "mnist", "train")
    assert ds.images.shape == (4, 1, 3, 3)
    assert ds.images.max() <= 1.0
    assert ds.labels.tolist() == labels.tolist()


def test_pixel_scaling_exact(tmp_path):
    root = tmp_path / "mnist"
    root.mkdir()
    images = np.array([[[0, 255]]], dtype=np.uint8)
    labels = np.array([1], dtype=np.uint8)
    (root / "train-images.idx").write_bytes(_idx_bytes(0x00000803, images.shape, images.tobytes()))
    (root / "train-labels.idx").write_bytes(_idx_bytes(0x00000801, labels.shape, labels.tobytes()))
    ds = data.load_idx_dataset(tmp_path, "mnist", "train")
    assert ds.images.ravel().tolist() == [0.0, 1.0]


# ------------------------------------------------------------ subsetting


def _balanced_dataset(n, classes=10, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.random((n, 1, 4, 4))
    labels = np.arange(n) % classes
    return Dataset(images, labels.astype(np.int64), "toy", "train", classes)


def test_subset_full_is_permutation():
    ds = _balanced_dataset(40)
    sub = subset(ds, 40, seed=1)
    assert sorted(sub.labels.tolist()) == sorted(ds.labels.tolist())
    assert len(np.unique(sub.images.sum(axis=(1, 2, 3)))) == 40


def test_subset_exact_stratification():
    ds = _balanced_dataset(1000)
    sub = subset(ds, 100, seed=2)
    counts = np.bincount(sub.labels, minlength=10)
    assert counts.tolist() == [10] * 10


def test_subset_within_one_when_not_divisible():
    ds = _balanced_dataset(990)  # 99 per class
    sub = subset(ds, 100, seed=3)
    counts = np.bincount(sub.labels, minlength=10)
    assert counts.sum() == 100
    assert counts.min() >= 9 and counts.max() <= 11


def test_subset_deterministic():
    ds = _balanced_dataset(200)
    a = subset(ds, 50, seed=9)
    b = subset(ds, 50, seed=9)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tolist() == b.labels.tolist()


def test_subset_too_large_rejected():
    with pytest.raises(DataError):
        subset(_balanced_dataset(10), 11, seed=0)


# ------------------------------------------------------------ synthetic


def test_gaussians_nearest_centroid_oracle():
    tr = gen_synthetic("gaussians", 1000, 0)
    te = gen_synthetic("gaussians", 500, 7)
    x = tr.images.reshape(len(tr), -1)
    centroids = np.stack([x[tr.labels == c].mean(axis=0) for c in range(tr.num_classes)])
    xt = te.images.reshape(len(te), -1)
    pred = np.argmin(((xt[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    assert (pred == te.labels).mean() >= 0.99


def test_rings_not_linearly_separable():
    from sklearn.linear_model import LogisticRegression

    tr = gen_synthetic("rings", 1200, 0)
    x, y = tr.images.reshape(len(tr), -1), tr.labels
    clf = LogisticRegression(max_iter=2000).fit(x, y)
    assert clf.score(x, y) <= 0.85


def test_synthetic_deterministic():
    a = gen_synthetic("rings", 64, 5)
    b = gen_synthetic("rings", 64, 5)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tolist() == b.labels.tolist()
    c = gen_synthetic("rings", 64, 6)
    assert a.images.tobytes() != c.images.tobytes()


def test_synthetic_needs_enough_samples():
    with pytest.raises(DataError):
        gen_synthetic("gaussians", 5, 0)
    with pytest.raises(ValueError):
        gen_synthetic("spirals", 100, 0)


def test_synthetic_shapes_and_range():
    ds = gen_synthetic("gaussians", 30, 2)
    assert ds.images.shape == (30, 1, 8, 8)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert set(ds.labels.tolist()) == set(range(10))


def test_load_dataset_dispatch(tmp_path):
    ds = data.load_dataset("rings", tmp_path, "train", seed=0, n=64)
    assert len(ds) == 64 and ds.split == "train"
    te = data.load_dataset("rings", tmp_path, "test", seed=0, n=32)
    assert te.images.tobytes() != ds.images.tobytes()
    with pytest.raises(DataError):
        data.load_dataset("imagenet", tmp_path, "train")
    with pytest.raises(DataError):
        data.load_dataset("mnist", tmp_path, "train")
