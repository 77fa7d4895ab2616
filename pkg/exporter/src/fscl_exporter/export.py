"""Teacher-bundle export from a pretrained contrastive vision-language
checkpoint.

Images are scored zero-shot against one prompt per class ("The image
depicts a {}" by default); the stored vocab_scores are the checkpoint's
native-scale similarity logits, pre-softmax. Per-scale features are
token-mean-pooled hidden states from configurable vision-tower blocks, the
embedding is the L2-normalized projected image embedding, and an export
manifest (checkpoint, prompt, taps, class list, dataset fingerprint) is
written as a JSON sidecar next to the bundle.
"""

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import bftb
from .errors import CheckpointError, DatasetError, UsageError

DEFAULT_PROMPT = "The image depicts a {}"


@dataclass
class ExportManifest:
    checkpoint: str
    prompt_template: str
    taps: list
    class_names: list
    n_samples: int
    dataset_sha256: str

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


def validate_prompt(template):
    if template.count("{}") != 1 or template.count("{") != 1:
        raise UsageError(
            f"prompt template must contain exactly one {{}} placeholder, "
            f"got '{template}'")
    return template


def read_class_names(path):
    try:
        names = [line.strip() for line in
                 Path(path).read_text(encoding="utf-8").splitlines()]
    except OSError as e:
        raise UsageError(f"cannot read classes file {path}: {e}")
    names = [n for n in names if n]
    if not names:
        raise UsageError(f"classes file {path} lists no classes")
    if len(set(names)) != len(names):
        raise UsageError(f"classes file {path} has duplicate names")
    return names


def scan_dataset(root, class_names):
    """(path, label) pairs in deterministic order: class-list order, then
    sorted filenames. Layout: <root>/<class name>/<image file>."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    index = {name: i for i, name in enumerate(class_names)}
    for sub in sorted(p.name for p in root.iterdir() if p.is_dir()):
        if sub not in index:
            raise DatasetError(
                f"dataset directory '{sub}' is not in the classes file")
    pairs = []
    for name in class_names:
        class_dir = root / name
        if not class_dir.is_dir():
            continue
        for img in sorted(class_dir.iterdir()):
            if img.is_file():
                pairs.append((img, index[name]))
    if not pairs:
        raise DatasetError(f"no image files found under {root}")
    return pairs


def load_checkpoint(checkpoint_id):
    # imported here so --help stays fast and tests can run without a GPU stack
    import torch  # noqa: F401
    from transformers import CLIPModel, CLIPProcessor

    try:
        model = CLIPModel.from_pretrained(checkpoint_id)
        processor = CLIPProcessor.from_pretrained(checkpoint_id)
    except Exception as e:
        raise CheckpointError(f"cannot load checkpoint '{checkpoint_id}': {e}")
    for attr in ("text_model", "text_projection", "vision_model",
                 "visual_projection", "logit_scale"):
        if not hasattr(model, attr):
            raise CheckpointError(
                f"checkpoint '{checkpoint_id}' is not a dual-encoder model "
                f"(missing {attr})")
    model.eval()
    return model, processor


def resolve_taps(taps_spec, n_layers):
    """"auto" -> three evenly spaced intermediate blocks; otherwise
    comma-separated 1-based block indices."""
    if taps_spec == "auto":
        taps = [math.ceil(n_layers * k / 4) for k in (1, 2, 3)]
    else:
        try:
            taps = [int(v) for v in taps_spec.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"taps spec '{taps_spec}' is not a comma list of ints")
    if not taps:
        raise UsageError("taps spec selects no layers")
    for t in taps:
        if not 1 <= t <= n_layers:
            raise UsageError(
                f"tap {t} outside the image tower (1..{n_layers} blocks)")
    if len(set(taps)) != len(taps):
        raise UsageError(f"taps spec '{taps_spec}' repeats a block")
    return taps


def _decode_images(pairs, skip_bad, warn):
    decoded = []
    for path, label in pairs:
        try:
            with Image.open(path) as img:
                decoded.append((img.convert("RGB"), label, path))
        except Exception as e:
            if skip_bad:
                warn(f"warning: skipping undecodable image {path}: {e}")
            else:
                raise DatasetError(f"undecodable image {path}: {e}")
    if not decoded:
        raise DatasetError("no decodable images left after skipping")
    return decoded


def _dataset_fingerprint(paths):
    digest = hashlib.sha256()
    for path in paths:
        digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def export(dataset_dir, classes_file, checkpoint, taps_spec, out_path,
           prompt_template=DEFAULT_PROMPT, deterministic=False,
           skip_bad=False, batch_size=16, warn=None):
    """Run the full export; returns the written ExportManifest."""
    import torch

    warn = warn or (lambda msg: print(msg, file=sys.stderr))
    validate_prompt(prompt_template)
    class_names = read_class_names(classes_file)
    if deterministic:
        torch.manual_seed(0)
        torch.set_num_threads(1)
    model, processor = load_checkpoint(checkpoint)
    n_layers = model.config.vision_config.num_hidden_layers
    taps = resolve_taps(taps_spec, n_layers)

    pairs = scan_dataset(dataset_dir, class_names)
    decoded = _decode_images(pairs, skip_bad, warn)

    prompts = [prompt_template.format(name) for name in class_names]
    with torch.no_grad():
        tok = processor(text=prompts, return_tensors="pt", padding=True)
        t_out = model.text_model(input_ids=tok["input_ids"],
                                 attention_mask=tok["attention_mask"])
        t_emb = model.text_projection(t_out.pooler_output)
        t_emb = t_emb / t_emb.norm(dim=-1, keepdim=True)
        logit_scale = model.logit_scale.exp()

        records = []
        for start in range(0, len(decoded), batch_size):
            chunk = decoded[start:start + batch_size]
            pixel = processor(images=[img for img, _, _ in chunk],
                              return_tensors="pt")["pixel_values"]
            v_out = model.vision_model(pixel_values=pixel,
                                       output_hidden_states=True)
            v_emb = model.visual_projection(v_out.pooler_output)
            v_emb = v_emb / v_emb.norm(dim=-1, keepdim=True)
            scores = logit_scale * v_emb @ t_emb.T
            feats = [v_out.hidden_states[t].mean(dim=1) for t in taps]
            for j, (_, label, _) in enumerate(chunk):
                records.append(bftb.Record(
                    sample_id=len(records), label=label,
                    features=[f[j].numpy().astype(np.float32) for f in feats],
                    embedding=v_emb[j].numpy().astype(np.float32),
                    vocab_scores=scores[j].numpy().astype(np.float32)))

    hidden = model.config.vision_config.hidden_size
    scale_dims = [hidden] * len(taps)
    embed_dim = model.config.projection_dim
    bftb.write(out_path, scale_dims, embed_dim, class_names, records)
    manifest = ExportManifest(
        checkpoint=str(checkpoint), prompt_template=prompt_template,
        taps=taps, class_names=class_names, n_samples=len(records),
        dataset_sha256=_dataset_fingerprint([p for _, _, p in decoded]))
    manifest.write(str(out_path) + ".manifest.json")
    return manifest
