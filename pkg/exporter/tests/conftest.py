"""Exporter test fixtures: images, manifests, and a tiny local checkpoint."""

import json

import numpy as np
import pytest
from PIL import Image

_ACCEPTANCE_FILE = "test_acceptance.py"
_collected: list[tuple[str, str, float]] = []


def pytest_runtest_logreport(report):
    if _ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    if report.when == "call":
        _collected.append((name, report.outcome, report.duration))
    elif report.when == "setup" and report.outcome != "passed":
        _collected.append((name, report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _collected:
        return
    terminalreporter.section("exporter acceptance")
    for name, outcome, duration in _collected:
        word = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{word:5s} {name} ({duration:.2f}s)")


def make_png(path, seed, size=(24, 24)):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, (*size, 3)).astype(np.uint8)
    Image.fromarray(pixels, "RGB").save(path)
    return path


@pytest.fixture
def png_dir(tmp_path):
    d = tmp_path / "images"
    d.mkdir()
    for i in range(4):
        make_png(d / f"pic{i}.png", seed=i)
    return d


@pytest.fixture(scope="session")
def tiny_clip(tmp_path_factory):
    """A full CLIP checkpoint small enough to build and run offline."""
    torch = pytest.importorskip("torch")
    transformers = pytest.importorskip("transformers")

    root = tmp_path_factory.mktemp("tiny-clip")
    chars = [chr(c) for c in range(33, 127)] + [" "]
    vocab = {"<|startoftext|>": 0, "<|endoftext|>": 1}
    for ch in chars:
        vocab.setdefault(ch, len(vocab))
        vocab.setdefault(ch + "</w>", len(vocab))
    (root / "vocab.json").write_text(json.dumps(vocab))
    (root / "merges.txt").write_text("#version: 0.2\n")

    tokenizer = transformers.CLIPTokenizer(
        str(root / "vocab.json"), str(root / "merges.txt")
    )
    processor = transformers.CLIPProcessor(
        image_processor=transformers.CLIPImageProcessor(
            size={"shortest_edge": 30}, crop_size={"height": 30, "width": 30}
        ),
        tokenizer=tokenizer,
    )
    config = transformers.CLIPConfig(
        text_config=transformers.CLIPTextConfig(
            vocab_size=len(vocab),
            hidden_size=32,
            intermediate_size=64,
            num_hidden_layers=2,
            num_attention_heads=2,
            max_position_embeddings=32,
            bos_token_id=0,
            eos_token_id=1,
        ),
        vision_config=transformers.CLIPVisionConfig(
            hidden_size=32,
            intermediate_size=64,
            num_hidden_layers=2,
            num_attention_heads=2,
            image_size=30,
            patch_size=15,
        ),
        projection_dim=16,
    )
    torch.manual_seed(0)
    checkpoint = root / "checkpoint"
    transformers.CLIPModel(config).save_pretrained(checkpoint)
    processor.save_pretrained(checkpoint)
    return str(checkpoint)
