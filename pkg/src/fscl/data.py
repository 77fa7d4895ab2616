"""Datasets: an on-disk format of raw f32 image tensors plus a label index,
and an in-memory synthetic Gaussian-blobs generator for zero-dependency runs.

Index file layout (same header style as the teacher bundle, little-endian):
  magic "BFDS" | version u32 | n_samples u64 | height u32 | width u32
  | channels u32 | n_classes u32 | manifest_len u32 + class names
  | records: [sample_id u64 | label u32 | split u8]   (split: 0 train, 1 test)
Images live next to the index as "<sample_id>.f32", row-major f32.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

DATASET_MAGIC = b"BFDS"
DATASET_VERSION = 1

TRAIN, TEST = 0, 1


@dataclass
class LabeledDataset:
    class_names: list
    images: np.ndarray  # (n, H, W, C) float32
    labels: np.ndarray  # (n,) int64; sample id == row index
    split: np.ndarray   # (n,) uint8

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def ids(self, split=None, label=None):
        mask = np.ones(len(self.labels), dtype=bool)
        if split is not None:
            mask &= self.split == split
        if label is not None:
            mask &= self.labels == label
        return np.flatnonzero(mask)

    def image_tensor_data(self, sample_id):
        return self.images[sample_id].astype(np.float64)


def make_blobs(n_classes=10, train_per_class=20, test_per_class=10,
               height=16, width=16, channels=3, noise=0.5, seed=0):
    """Gaussian blobs in pixel space: one random centroid image per class,
    samples are centroid + noise. Deterministic given the arguments."""
    rng = np.random.default_rng([int(seed), 0xB10B])
    centroids = rng.normal(size=(n_classes, height, width, channels))
    images, labels, split = [], [], []
    for c in range(n_classes):
        for _ in range(train_per_class):
            images.append(centroids[c] + noise * rng.normal(size=centroids[c].shape))
            labels.append(c)
            split.append(TRAIN)
    for c in range(n_classes):
        for _ in range(test_per_class):
            images.append(centroids[c] + noise * rng.normal(size=centroids[c].shape))
            labels.append(c)
            split.append(TEST)
    return LabeledDataset(
        class_names=[f"class_{c:03d}" for c in range(n_classes)],
        images=np.asarray(images, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        split=np.asarray(split, dtype=np.uint8),
    )


def save_dataset(dir_path, dataset):
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    n, h, w, c = dataset.images.shape
    with open(root / "index.bin", "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        f.write(struct.pack("<Q", n))
        f.write(struct.pack("<III", h, w, c))
        f.write(struct.pack("<I", dataset.n_classes))
        manifest = "\n".join(dataset.class_names).encode("utf-8")
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for i in range(n):
            f.write(struct.pack("<QIB", i, int(dataset.labels[i]), int(dataset.split[i])))
    for i in range(n):
        arr = np.ascontiguousarray(dataset.images[i], dtype="<f4")
        (root / f"{i}.f32").write_bytes(arr.tobytes())


def load_dataset(dir_path):
    root = Path(dir_path)
    index = root / "index.bin"
    if not index.is_file():
        raise DataError(f"dataset: no index.bin under {root}")
    blob = index.read_bytes()
    if blob[:4] != DATASET_MAGIC:
        raise DataError(f"dataset: bad magic {blob[:4]!r} in {index}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != DATASET_VERSION:
        raise DataError(f"dataset: unsupported version {version}")
    (n,) = struct.unpack_from("<Q", blob, 8)
    h, w, c = struct.unpack_from("<III", blob, 16)
    (n_classes,) = struct.unpack_from("<I", blob, 28)
    (manifest_len,) = struct.unpack_from("<I", blob, 32)
    manifest = blob[36:36 + manifest_len].decode("utf-8")
    class_names = manifest.split("\n") if manifest else []
    if len(class_names) != n_classes:
        raise DataError(
            f"dataset: manifest lists {len(class_names)} names, header says {n_classes}")
    pos = 36 + manifest_len
    labels = np.zeros(n, dtype=np.int64)
    split = np.zeros(n, dtype=np.uint8)
    seen = set()
    for _ in range(n):
        if pos + 13 > len(blob):
            raise DataError(f"dataset: index truncated at byte {pos}")
        sid, label, sp = struct.unpack_from("<QIB", blob, pos)
        pos += 13
        if sid in seen or sid >= n:
            raise DataError(f"dataset: bad sample id {sid}")
        seen.add(sid)
        labels[sid] = label
        split[sid] = sp
    images = np.zeros((n, h, w, c), dtype=np.float32)
    for i in range(n):
        raw = (root / f"{i}.f32")
        if not raw.is_file():
            raise DataError(f"dataset: missing image file {raw}")
        flat = np.frombuffer(raw.read_bytes(), dtype="<f4")
        if flat.size != h * w * c:
            raise DataError(
                f"dataset: image {i} has {flat.size} floats, expected {h * w * c}")
        images[i] = flat.reshape(h, w, c)
    return LabeledDataset(class_names=class_names, images=images,
                          labels=labels, split=split)


_BLOBS_KEYS = {
    "classes": int, "train": int, "test": int, "size": int,
    "chan": int, "noise": float, "seed": int,
}


def open_dataset(spec):
    """Resolve a dataset spec: either a directory path or an inline
    "blobs:key=value,..." generator spec (keys: classes, train, test, size,
    chan, noise, seed)."""
    if spec.startswith("blobs:") or spec == "blobs":
        kwargs = {}
        body = spec[len("blobs:"):] if ":" in spec else ""
        for part in filter(None, body.split(",")):
            if "=" not in part:
                raise ConfigError(f"dataset spec: malformed entry '{part}'")
            key, value = part.split("=", 1)
            if key not in _BLOBS_KEYS:
                raise ConfigError(f"dataset spec: unknown blobs key '{key}'")
            kwargs[key] = _BLOBS_KEYS[key](value)
        return make_blobs(
            n_classes=kwargs.get("classes", 10),
            train_per_class=kwargs.get("train", 20),
            test_per_class=kwargs.get("test", 10),
            height=kwargs.get("size", 16),
            width=kwargs.get("size", 16),
            channels=kwargs.get("chan", 3),
            noise=kwargs.get("noise", 0.5),
            seed=kwargs.get("seed", 0),
        )
    return load_dataset(spec)
