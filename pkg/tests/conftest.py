"""Shared fixtures: synthetic image trees written as binary PPM files."""

import numpy as np
import pytest

from defectvit.data import Dataset, LabeledImage, write_ppm


def striped_image(rng, size, base, stripe, vertical, period=4):
    """Solid base color with dark/bright stripes plus mild per-image jitter."""
    pixels = np.full((size, size, 3), base, dtype=np.float64)
    idx = np.arange(size)
    mask = (idx // period) % 2 == 0
    if vertical:
        pixels[:, mask] = stripe
    else:
        pixels[mask, :] = stripe
    pixels += rng.uniform(-0.04, 0.04, size=(size, size, 3))
    return np.clip(pixels, 0.0, 1.0)


def build_image_tree(root, counts, size=16, fmt="ppm"):
    """Create `<root>/<class>/img_*.ppm` with visually distinct class patterns."""
    root.mkdir(parents=True, exist_ok=True)
    for class_idx, (name, count) in enumerate(sorted(counts.items())):
        class_dir = root / name
        class_dir.mkdir()
        for i in range(count):
            rng = np.random.default_rng(10_000 * class_idx + i)
            if class_idx % 2 == 0:
                pixels = striped_image(rng, size, base=0.2, stripe=0.8, vertical=False)
            else:
                pixels = striped_image(rng, size, base=0.85, stripe=0.15, vertical=True)
            write_ppm(class_dir / f"img_{i:04d}.{fmt}", pixels)
    return root


def in_memory_dataset(counts, size=1):
    """Dataset with the given per-class counts and constant pixels (split tests)."""
    names = tuple(sorted(counts))
    images = [
        LabeledImage(pixels=np.zeros((size, size, 3)), label=label, source=f"mem://{name}/{i}")
        for label, name in enumerate(names)
        for i in range(counts[name])
    ]
    return Dataset(images=images, class_names=names)


@pytest.fixture
def tiny_tree(tmp_path):
    """Two visually distinct classes, six 16x16 images each."""
    return build_image_tree(tmp_path / "data", {"alpha": 6, "beta": 6}, size=16)


TINY_TRAIN_FLAGS = [
    "--image-size", "16", "--patch-size", "8", "--model-dim", "16",
    "--num-heads", "2", "--num-layers", "2", "--epochs", "2",
    "--batch-size", "8", "--seed", "3",
]


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criterion PASS/FAIL lines after the test summary."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
