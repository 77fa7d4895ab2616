"""Network definitions: the continual student, the per-scale MI discriminators,
and the gate network that weighs student vs teacher decisions.

Checkpoint format (normative): magic "BFSM" | version u32 | per named
parameter: name_len u16 + UTF-8 name + rank u8 + dims u32[] + f64 data,
all little-endian, parameters until EOF.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor, kaiming_uniform
from .errors import BundleFormatError, ConfigError, DimensionError, ProtocolError

CHECKPOINT_MAGIC = b"BFSM"
CHECKPOINT_VERSION = 1

# pre-sigmoid clip keeps the gate strictly inside (0, 1) in float64
GATE_LOGIT_LIMIT = 30.0


@dataclass
class StudentOutput:
    """Per-sample student results: one feature map per scale, the embedding,
    and raw class logits."""

    features: list
    embedding: Tensor
    logits: Tensor


def _dense(rng, out_dim, in_dim, name):
    w = Parameter(kaiming_uniform(rng, (out_dim, in_dim), fan_in=in_dim), name=f"{name}.weight")
    b = Parameter(np.zeros(out_dim), name=f"{name}.bias")
    return w, b


def _apply_dense(w, b, x):
    return ad.add(ad.matmul(w.tensor, x), b.tensor)


class StudentModel(Module):
    """Small trainable classifier: L conv stages (conv -> relu -> 2x average
    downsample) with a feature tap after each relu, a pooled embedding head,
    and a classifier whose row count grows as sessions add classes."""

    def __init__(self, height, width, in_channels, channels, embed_dim, rng, kernel=3):
        depth = len(channels)
        if depth < 1:
            raise ConfigError("StudentModel: need at least one conv stage")
        if height % (2 ** depth) or width % (2 ** depth):
            raise ConfigError(
                f"StudentModel: input {height}x{width} not divisible by 2^{depth} for downsampling")
        self.height = height
        self.width = width
        self.in_channels = in_channels
        self.channels = list(channels)
        self.embed_dim = embed_dim
        self.kernel = kernel
        self.classes = []

        self.conv_w = []
        self.conv_b = []
        prev = in_channels
        for i, ch in enumerate(channels):
            fan_in = kernel * kernel * prev
            self.conv_w.append(Parameter(
                kaiming_uniform(rng, (kernel, kernel, prev, ch), fan_in=fan_in),
                name=f"conv{i}.weight"))
            self.conv_b.append(Parameter(np.zeros(ch), name=f"conv{i}.bias"))
            prev = ch
        self.embed_w, self.embed_b = _dense(rng, embed_dim, channels[-1], "embed")
        self.cls_w = Parameter(np.zeros((0, embed_dim)), name="classifier.weight")
        self.cls_b = Parameter(np.zeros(0), name="classifier.bias")
        self._rng = rng

    @property
    def num_scales(self):
        return len(self.channels)

    def named_parameters(self):
        pairs = []
        for i in range(len(self.channels)):
            pairs.append((self.conv_w[i].name, self.conv_w[i]))
            pairs.append((self.conv_b[i].name, self.conv_b[i]))
        pairs.append((self.embed_w.name, self.embed_w))
        pairs.append((self.embed_b.name, self.embed_b))
        pairs.append((self.cls_w.name, self.cls_w))
        pairs.append((self.cls_b.name, self.cls_b))
        return pairs

    def conv_parameters(self):
        """The encoder parameters targeted by embedding transfer."""
        return self.conv_w + self.conv_b

    def row_of(self, label):
        return self.classes.index(label)

    def expand_classifier(self, new_classes):
        """Append freshly initialized classifier rows for `new_classes`.

        Existing rows (weights, bias, optimizer moments) are kept bitwise;
        old-class logits are unaffected for any input.
        """
        new_classes = list(new_classes)
        dup = set(new_classes) & set(self.classes)
        if dup:
            raise ProtocolError(f"expand_classifier: labels already registered: {sorted(dup)}")
        if len(set(new_classes)) != len(new_classes):
            raise ProtocolError("expand_classifier: duplicate labels in new_classes")
        if not new_classes:
            return
        k = len(new_classes)
        fresh_w = kaiming_uniform(self._rng, (k, self.embed_dim), fan_in=self.embed_dim)
        self.cls_w.tensor = Tensor(
            np.concatenate([self.cls_w.data, fresh_w], axis=0), requires_grad=True)
        self.cls_w.m = np.concatenate([self.cls_w.m, np.zeros((k, self.embed_dim))], axis=0)
        self.cls_w.v = np.concatenate([self.cls_w.v, np.zeros((k, self.embed_dim))], axis=0)
        self.cls_b.tensor = Tensor(
            np.concatenate([self.cls_b.data, np.zeros(k)]), requires_grad=True)
        self.cls_b.m = np.concatenate([self.cls_b.m, np.zeros(k)])
        self.cls_b.v = np.concatenate([self.cls_b.v, np.zeros(k)])
        self.classes.extend(new_classes)

    def forward(self, x):
        """x: Tensor (H, W, C_in) -> StudentOutput with L feature taps.

        Tap l sits after stage l's relu, before its downsample, so shapes are
        (H/2^(l-1), W/2^(l-1), channels[l-1])."""
        if x.data.shape != (self.height, self.width, self.in_channels):
            raise DimensionError(
                f"student_forward: input shape {x.data.shape} vs configured "
                f"({self.height}, {self.width}, {self.in_channels})")
        if not self.classes:
            raise ConfigError("student_forward: no classes registered yet")
        features = []
        h = x
        for w, b in zip(self.conv_w, self.conv_b):
            h = ad.relu(ad.conv2d(h, w.tensor, b.tensor))
            features.append(h)
            h = ad.avg_pool2x(h)
        pooled = ad.global_average_pool(h)
        embedding = _apply_dense(self.embed_w, self.embed_b, pooled)
        logits = _apply_dense(self.cls_w, self.cls_b, embedding)
        return StudentOutput(features=features, embedding=embedding, logits=logits)


class MineDiscriminator(Module):
    """Per-scale critics scoring (student, teacher) feature pairs.

    Each scale has its own parameter set: two linear projections into a
    shared width, then a conv stack with kernel sizes 1, 3 and 5 over the
    concatenated projection treated as a length-2*d_common signal, a global
    pool and a scalar head. Scores are clipped to +-clamp before use so the
    exponential in the bound cannot blow up.
    """

    def __init__(self, scale_dims, d_common, conv_channels, rng, clamp=20.0):
        if not scale_dims:
            raise ConfigError("MineDiscriminator: need at least one scale")
        self.scale_dims = list(scale_dims)
        self.d_common = d_common
        self.conv_channels = conv_channels
        self.clamp = clamp
        self._scales = []
        for l, (s_dim, t_dim) in enumerate(self.scale_dims):
            prefix = f"scale{l}"
            ps_w, ps_b = _dense(rng, d_common, s_dim, f"{prefix}.proj_s")
            pt_w, pt_b = _dense(rng, d_common, t_dim, f"{prefix}.proj_t")
            convs = []
            prev = 1
            for k in (1, 3, 5):
                fan_in = k * prev
                cw = Parameter(kaiming_uniform(rng, (k, prev, conv_channels), fan_in=fan_in),
                               name=f"{prefix}.conv{k}.weight")
                cb = Parameter(np.zeros(conv_channels), name=f"{prefix}.conv{k}.bias")
                convs.append((cw, cb))
                prev = conv_channels
            head_w, head_b = _dense(rng, 1, conv_channels, f"{prefix}.head")
            self._scales.append({
                "proj_s": (ps_w, ps_b), "proj_t": (pt_w, pt_b),
                "convs": convs, "head": (head_w, head_b),
            })

    @property
    def num_scales(self):
        return len(self._scales)

    def named_parameters(self):
        pairs = []
        for sc in self._scales:
            for pair in (sc["proj_s"], sc["proj_t"], *sc["convs"], sc["head"]):
                for p in pair:
                    pairs.append((p.name, p))
        return pairs

    def score(self, student_vec, teacher_vec, scale):
        """Clipped scalar critic score for one (student, teacher) vector pair."""
        if not 0 <= scale < len(self._scales):
            raise ConfigError(
                f"mine_score: scale {scale} not registered (have {len(self._scales)})")
        s_dim, t_dim = self.scale_dims[scale]
        if student_vec.data.shape != (s_dim,):
            raise DimensionError(
                f"mine_score: student shape {student_vec.data.shape} vs ({s_dim},)")
        if teacher_vec.data.shape != (t_dim,):
            raise DimensionError(
                f"mine_score: teacher shape {teacher_vec.data.shape} vs ({t_dim},)")
        sc = self._scales[scale]
        zs = _apply_dense(*sc["proj_s"], student_vec)
        zt = _apply_dense(*sc["proj_t"], teacher_vec)
        h = ad.concat([zs, zt]).reshape(2 * self.d_common, 1)
        for cw, cb in sc["convs"]:
            h = ad.relu(ad.conv1d(h, cw.tensor, cb.tensor))
        pooled = ad.global_average_pool(h)
        head_w, head_b = sc["head"]
        out = _apply_dense(head_w, head_b, pooled)
        return ad.clamp(out.reshape(()), -self.clamp, self.clamp)


class GateNet(Module):
    """Three dense layers mapping the pair of embeddings to a gate in (0, 1)."""

    def __init__(self, student_dim, teacher_dim, hidden, rng):
        if len(hidden) != 2:
            raise ConfigError(f"GateNet: expected two hidden widths, got {hidden}")
        self.student_dim = student_dim
        self.teacher_dim = teacher_dim
        h1, h2 = hidden
        self.w1, self.b1 = _dense(rng, h1, student_dim + teacher_dim, "gate.fc1")
        self.w2, self.b2 = _dense(rng, h2, h1, "gate.fc2")
        self.w3, self.b3 = _dense(rng, 1, h2, "gate.fc3")

    def named_parameters(self):
        return [(p.name, p) for p in
                (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)]

    def forward(self, student_embed, teacher_embed):
        if student_embed.data.shape != (self.student_dim,):
            raise DimensionError(
                f"gate_forward: student shape {student_embed.data.shape} "
                f"vs ({self.student_dim},)")
        if teacher_embed.data.shape != (self.teacher_dim,):
            raise DimensionError(
                f"gate_forward: teacher shape {teacher_embed.data.shape} "
                f"vs ({self.teacher_dim},)")
        z = ad.concat([student_embed, teacher_embed])
        h = ad.relu(_apply_dense(self.w1, self.b1, z))
        h = ad.relu(_apply_dense(self.w2, self.b2, h))
        logit = _apply_dense(self.w3, self.b3, h).reshape(())
        return ad.sigmoid(ad.clamp(logit, -GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT))


# -- checkpoint io ------------------------------------------------------------

def save_checkpoint(path, named_arrays):
    """Write (name, float array) pairs in the binary checkpoint format."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in named_arrays:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered {name: array} dict."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BundleFormatError(f"checkpoint: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise BundleFormatError(f"checkpoint: unsupported version {version}")
    out = {}
    pos = 8
    while pos < len(blob):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        out[name] = arr.astype(np.float64)
    return out


def save_model(path, *modules):
    pairs = []
    for mod in modules:
        pairs.extend((name, p.data) for name, p in mod.named_parameters())
    save_checkpoint(path, pairs)


def load_model(path, *modules):
    state = load_checkpoint(path)
    for mod in modules:
        for name, p in mod.named_parameters():
            if name not in state:
                raise BundleFormatError(f"checkpoint: missing parameter '{name}'")
            if state[name].shape != p.data.shape:
                raise DimensionError(
                    f"checkpoint: parameter '{name}' shape {state[name].shape} "
                    f"vs model {p.data.shape}")
            p.tensor.data = state[name].copy()
