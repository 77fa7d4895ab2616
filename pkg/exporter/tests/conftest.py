import json
import string

import numpy as np
import pytest
from PIL import Image

CLASS_NAMES = ["cat", "dog", "bird"]
IMAGES_PER_CLASS = [4, 3, 3]  # 10-image smoke set


def build_tiny_checkpoint(path):
    """Randomly initialized CLIP-style dual encoder saved locally, with a
    minimal character-level BPE tokenizer, so tests run fully offline."""
    import torch
    from transformers import (
        CLIPConfig,
        CLIPImageProcessor,
        CLIPModel,
        CLIPProcessor,
        CLIPTokenizer,
    )

    path.mkdir(parents=True, exist_ok=True)
    chars = list(string.ascii_lowercase + string.digits + string.punctuation) + [" "]
    vocab = {"<|startoftext|>": 0, "<|endoftext|>": 1}
    for ch in chars:
        for form in (ch, ch + "</w>"):
            if form not in vocab:
                vocab[form] = len(vocab)
    (path / "vocab.json").write_text(json.dumps(vocab), encoding="utf-8")
    (path / "merges.txt").write_text("#version: 0.2\n", encoding="utf-8")
    tokenizer = CLIPTokenizer(str(path / "vocab.json"), str(path / "merges.txt"))

    config = CLIPConfig(
        text_config={
            "hidden_size": 32, "intermediate_size": 64, "num_hidden_layers": 2,
            "num_attention_heads": 4, "vocab_size": len(vocab),
            "max_position_embeddings": 77, "bos_token_id": 0, "eos_token_id": 1,
        },
        vision_config={
            "hidden_size": 32, "intermediate_size": 64, "num_hidden_layers": 5,
            "num_attention_heads": 4, "image_size": 32, "patch_size": 16,
            "num_channels": 3,
        },
        projection_dim=24,
    )
    torch.manual_seed(0)
    model = CLIPModel(config).eval()
    image_processor = CLIPImageProcessor(
        size={"shortest_edge": 32}, crop_size={"height": 32, "width": 32})
    processor = CLIPProcessor(image_processor=image_processor, tokenizer=tokenizer)
    model.save_pretrained(path)
    processor.save_pretrained(path)
    return path


def build_image_folder(path, class_names=CLASS_NAMES, per_class=IMAGES_PER_CLASS):
    rng = np.random.default_rng(1234)
    path.mkdir(parents=True, exist_ok=True)
    for name, count in zip(class_names, per_class):
        class_dir = path / name
        class_dir.mkdir()
        for i in range(count):
            arr = rng.uniform(0, 255, size=(40, 40, 3)).astype("uint8")
            Image.fromarray(arr).save(class_dir / f"img_{i:02d}.png")
    return path


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory):
    return build_tiny_checkpoint(tmp_path_factory.mktemp("ckpt") / "tiny-clip")


@pytest.fixture(scope="session")
def image_folder(tmp_path_factory):
    return build_image_folder(tmp_path_factory.mktemp("data") / "images")


@pytest.fixture(scope="session")
def classes_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("meta") / "classes.txt"
    path.write_text("\n".join(CLASS_NAMES) + "\n", encoding="utf-8")
    return path
