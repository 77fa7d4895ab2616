"""Writer (and a reader used for self-checks) for the teacher-bundle wire
format consumed by the fscl harness. This module is the only coupling point:
the format, not the package, is the interface.

Layout, all little-endian:
  magic "BFTB" | version u32 | n_samples u64 | n_scales u32
  | per-scale dim u32 x n_scales | embed_dim u32 | vocab_size u32
  | manifest_len u32 + UTF-8 newline-separated class names
  | records: [sample_id u64 | label u32 | f32 features per scale
              | f32 embedding | f32 vocab_scores]
"""

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"BFTB"
VERSION = 1


@dataclass
class Record:
    sample_id: int
    label: int
    features: list
    embedding: np.ndarray
    vocab_scores: np.ndarray


def write(path, scale_dims, embed_dim, class_names, records):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(records)))
        f.write(struct.pack("<I", len(scale_dims)))
        for dim in scale_dims:
            f.write(struct.pack("<I", dim))
        f.write(struct.pack("<I", embed_dim))
        f.write(struct.pack("<I", len(class_names)))
        manifest = "\n".join(class_names).encode("utf-8")
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for rec in records:
            f.write(struct.pack("<Q", rec.sample_id))
            f.write(struct.pack("<I", rec.label))
            for scale, dim in enumerate(scale_dims):
                arr = np.ascontiguousarray(rec.features[scale], dtype="<f4")
                assert arr.shape == (dim,), (arr.shape, dim)
                f.write(arr.tobytes())
            emb = np.ascontiguousarray(rec.embedding, dtype="<f4")
            assert emb.shape == (embed_dim,), (emb.shape, embed_dim)
            f.write(emb.tobytes())
            scores = np.ascontiguousarray(rec.vocab_scores, dtype="<f4")
            assert scores.shape == (len(class_names),), scores.shape
            f.write(scores.tobytes())


def read(path):
    """Parse a bundle back; returns (scale_dims, embed_dim, class_names, records)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r}")
    pos = 4
    (version,) = struct.unpack_from("<I", blob, pos); pos += 4
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    (n_samples,) = struct.unpack_from("<Q", blob, pos); pos += 8
    (n_scales,) = struct.unpack_from("<I", blob, pos); pos += 4
    scale_dims = []
    for _ in range(n_scales):
        (dim,) = struct.unpack_from("<I", blob, pos); pos += 4
        scale_dims.append(dim)
    (embed_dim,) = struct.unpack_from("<I", blob, pos); pos += 4
    (vocab_size,) = struct.unpack_from("<I", blob, pos); pos += 4
    (manifest_len,) = struct.unpack_from("<I", blob, pos); pos += 4
    manifest = blob[pos:pos + manifest_len].decode("utf-8"); pos += manifest_len
    class_names = manifest.split("\n") if manifest else []
    records = []
    for _ in range(n_samples):
        (sample_id,) = struct.unpack_from("<Q", blob, pos); pos += 8
        (label,) = struct.unpack_from("<I", blob, pos); pos += 4
        feats = []
        for dim in scale_dims:
            feats.append(np.frombuffer(blob, dtype="<f4", count=dim, offset=pos).copy())
            pos += 4 * dim
        emb = np.frombuffer(blob, dtype="<f4", count=embed_dim, offset=pos).copy()
        pos += 4 * embed_dim
        scores = np.frombuffer(blob, dtype="<f4", count=vocab_size, offset=pos).copy()
        pos += 4 * vocab_size
        records.append(Record(sample_id, label, feats, emb, scores))
    return scale_dims, embed_dim, class_names, records
