"""Frozen-teacher bundles: per-sample features, embedding and full-vocabulary
class scores in a bit-exact binary container.

File layout (normative, all little-endian):
  magic "BFTB" | version u32 | n_samples u64 | n_scales u32
  | per-scale dim u32 x n_scales | embed_dim u32 | vocab_size u32
  | manifest_len u32 + UTF-8 newline-separated class names
  | records: [sample_id u64 | label u32 | f32 features per scale
              | f32 embedding | f32 vocab_scores]

Scores are stored pre-softmax so a seen-class restriction stays exact.
Payload floats are f32; loading keeps them f32 in memory so a write/load
round trip is bitwise.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BundleCorruptionError,
    BundleError,
    BundleFormatError,
    UsageError,
)

BUNDLE_MAGIC = b"BFTB"
BUNDLE_VERSION = 1

DEFAULT_MARGIN = 10.0


@dataclass
class TeacherRecord:
    """One sample's frozen teacher outputs."""

    sample_id: int
    label: int
    features: list  # one f32 vector per scale
    embedding: np.ndarray
    vocab_scores: np.ndarray


@dataclass
class TeacherBundle:
    scale_dims: list
    embed_dim: int
    class_names: list
    records: list = field(default_factory=list)

    @property
    def n_scales(self):
        return len(self.scale_dims)

    @property
    def vocab_size(self):
        return len(self.class_names)

    def record_for(self, sample_id):
        if not 0 <= sample_id < len(self.records):
            raise BundleError(f"teacher record missing for sample {sample_id}")
        rec = self.records[sample_id]
        if rec is None or rec.sample_id != sample_id:
            raise BundleError(f"teacher record missing for sample {sample_id}")
        return rec


def write_bundle(path, bundle):
    with open(path, "wb") as f:
        f.write(BUNDLE_MAGIC)
        f.write(struct.pack("<I", BUNDLE_VERSION))
        f.write(struct.pack("<Q", len(bundle.records)))
        f.write(struct.pack("<I", bundle.n_scales))
        for dim in bundle.scale_dims:
            f.write(struct.pack("<I", dim))
        f.write(struct.pack("<I", bundle.embed_dim))
        f.write(struct.pack("<I", bundle.vocab_size))
        manifest = "\n".join(bundle.class_names).encode("utf-8")
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for rec in bundle.records:
            f.write(struct.pack("<Q", rec.sample_id))
            f.write(struct.pack("<I", rec.label))
            for scale, dim in enumerate(bundle.scale_dims):
                arr = np.ascontiguousarray(rec.features[scale], dtype="<f4")
                if arr.shape != (dim,):
                    raise BundleError(
                        f"write_bundle: sample {rec.sample_id} scale {scale} "
                        f"has shape {arr.shape}, header says ({dim},)")
                f.write(arr.tobytes())
            emb = np.ascontiguousarray(rec.embedding, dtype="<f4")
            if emb.shape != (bundle.embed_dim,):
                raise BundleError(
                    f"write_bundle: sample {rec.sample_id} embedding shape "
                    f"{emb.shape}, header says ({bundle.embed_dim},)")
            f.write(emb.tobytes())
            scores = np.ascontiguousarray(rec.vocab_scores, dtype="<f4")
            if scores.shape != (bundle.vocab_size,):
                raise BundleError(
                    f"write_bundle: sample {rec.sample_id} vocab_scores shape "
                    f"{scores.shape}, header says ({bundle.vocab_size},)")
            f.write(scores.tobytes())


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise BundleCorruptionError(f"truncated while reading {what}", self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32s(self, count, what):
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").copy()


def load_bundle(path):
    """Parse and structurally validate a bundle; never returns a partial one."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != BUNDLE_MAGIC:
        raise BundleFormatError(f"bundle: bad magic {magic!r}, expected {BUNDLE_MAGIC!r}")
    version = r.u32("version")
    if version != BUNDLE_VERSION:
        raise BundleFormatError(f"bundle: unsupported version {version}")
    n_samples = r.u64("n_samples")
    n_scales = r.u32("n_scales")
    scale_dims = [r.u32(f"scale dim {i}") for i in range(n_scales)]
    embed_dim = r.u32("embed_dim")
    vocab_size = r.u32("vocab_size")
    manifest_len = r.u32("manifest_len")
    manifest = r.take(manifest_len, "class manifest").decode("utf-8")
    class_names = manifest.split("\n") if manifest else []
    if len(class_names) != vocab_size:
        raise BundleFormatError(
            f"bundle: manifest lists {len(class_names)} names, vocab_size is {vocab_size}")
    records = []
    for i in range(n_samples):
        sample_id = r.u64(f"record {i} sample_id")
        (label,) = struct.unpack("<I", r.take(4, f"record {i} label"))
        feats = [r.f32s(dim, f"record {i} scale {s} features")
                 for s, dim in enumerate(scale_dims)]
        emb = r.f32s(embed_dim, f"record {i} embedding")
        scores = r.f32s(vocab_size, f"record {i} vocab_scores")
        records.append(TeacherRecord(sample_id=sample_id, label=label,
                                     features=feats, embedding=emb,
                                     vocab_scores=scores))
    if r.pos != len(blob):
        raise BundleCorruptionError(
            f"{len(blob) - r.pos} trailing bytes after last record", r.pos)
    bundle = TeacherBundle(scale_dims=scale_dims, embed_dim=embed_dim,
                           class_names=class_names, records=records)
    problems = validate_bundle(bundle)
    if problems:
        raise BundleError("bundle failed validation:\n" + "\n".join(problems))
    return bundle


def validate_bundle(bundle, expected_scales=None, expected_scale_dims=None,
                    expected_embed_dim=None, class_universe=None):
    """Collect violations as strings; empty list means the bundle is sound.

    Structural checks always run; the `expected_*`/`class_universe` arguments
    add checks against a student configuration and a dataset's class list.
    """
    problems = []
    if expected_scales is not None and bundle.n_scales != expected_scales:
        problems.append(
            f"header: bundle has {bundle.n_scales} scales, student expects {expected_scales}")
    if expected_scale_dims is not None:
        for i, (got, want) in enumerate(zip(bundle.scale_dims, expected_scale_dims)):
            if got != want:
                problems.append(f"header: scale {i} dim {got}, expected {want}")
    if expected_embed_dim is not None and bundle.embed_dim != expected_embed_dim:
        problems.append(
            f"header: embed_dim {bundle.embed_dim}, expected {expected_embed_dim}")
    seen_ids = set()
    for rec in bundle.records:
        if rec.sample_id in seen_ids:
            problems.append(f"sample {rec.sample_id}: duplicate sample_id")
        seen_ids.add(rec.sample_id)
        for s, feat in enumerate(rec.features):
            if not np.all(np.isfinite(feat)):
                problems.append(f"sample {rec.sample_id}: non-finite features at scale {s}")
        if not np.all(np.isfinite(rec.embedding)):
            problems.append(f"sample {rec.sample_id}: non-finite embedding")
        if not np.all(np.isfinite(rec.vocab_scores)):
            problems.append(f"sample {rec.sample_id}: non-finite vocab_scores")
        if not 0 <= rec.label < bundle.vocab_size:
            problems.append(
                f"sample {rec.sample_id}: label {rec.label} outside vocabulary "
                f"of size {bundle.vocab_size}")
    if seen_ids and seen_ids != set(range(len(bundle.records))):
        problems.append(
            f"sample ids not dense over 0..{len(bundle.records) - 1}")
    if class_universe is not None:
        for idx, name in enumerate(class_universe):
            if idx >= len(bundle.class_names) or bundle.class_names[idx] != name:
                problems.append(
                    f"vocabulary does not cover dataset class '{name}' at index {idx}")
    return problems


def synthetic_teacher(dataset, quality, scale_dims, embed_dim, seed,
                      margin=DEFAULT_MARGIN):
    """Deterministic stand-in for a real frozen teacher.

    Scores blend a margin-scaled one-hot of the true label with seeded noise;
    features and embedding are class centroids plus noise that shrinks as
    quality rises. All random draws are independent of `quality`, so accuracy
    is monotone in quality at a fixed seed.
    """
    if not 0.0 <= quality <= 1.0:
        raise UsageError(f"synthetic_teacher: quality must be in [0, 1], got {quality}")
    rng = np.random.default_rng([int(seed), 0x7EAC])
    n_classes = len(dataset.class_names)
    centroids = []
    for _ in range(n_classes):
        per_scale = [rng.normal(size=dim) for dim in scale_dims]
        emb = rng.normal(size=embed_dim)
        centroids.append((per_scale, emb))
    records = []
    noise_gain = 1.0 - quality
    for sample_id in range(len(dataset.labels)):
        label = int(dataset.labels[sample_id])
        per_scale, emb = centroids[label]
        feats = [(vec + noise_gain * rng.normal(size=vec.shape)).astype(np.float32)
                 for vec in per_scale]
        embedding = (emb + noise_gain * rng.normal(size=embed_dim)).astype(np.float32)
        one_hot = np.zeros(n_classes)
        one_hot[label] = margin
        scores = (quality * one_hot + noise_gain * rng.normal(size=n_classes)
                  ).astype(np.float32)
        records.append(TeacherRecord(sample_id=sample_id, label=label,
                                     features=feats, embedding=embedding,
                                     vocab_scores=scores))
    return TeacherBundle(scale_dims=list(scale_dims), embed_dim=embed_dim,
                         class_names=list(dataset.class_names), records=records)


def teacher_top1_accuracy(bundle, sample_ids=None):
    """Fraction of records whose highest vocabulary score is the true label."""
    recs = bundle.records if sample_ids is None else [bundle.record_for(i) for i in sample_ids]
    if not recs:
        raise UsageError("teacher_top1_accuracy: no records")
    hits = sum(int(np.argmax(rec.vocab_scores)) == rec.label for rec in recs)
    return hits / len(recs)
