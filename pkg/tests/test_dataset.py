import numpy as np
import pytest

from saliencybench.dataset import (
    DatasetManifest,
    generate_synthetic_dataset,
    load_manifest,
    select_eval_subset,
    synth_image,
)
from saliencybench.errors import ClassTooSmall
from saliencybench.rng import Rng


def manifest_with_counts(per_class: list[int]) -> DatasetManifest:
    entries = []
    for label, count in enumerate(per_class):
        entries.extend((f"img_{label}_{i}.tnsr", label) for i in range(count))
    return DatasetManifest(root=None, entries=entries)


@pytest.mark.parametrize("classes,min_total,per_class,total", [
    (200, 100, 1, 200),   # many classes: one image each
    (7, 100, 15, 105),    # few classes: fifteen each
    (16, 100, 7, 112),    # sixteen classes: seven each
])
def test_per_class_counts(classes, min_total, per_class, total):
    m = manifest_with_counts([per_class + 3] * classes)
    subset = select_eval_subset(m, min_total, Rng(1))
    assert len(subset) == total
    labels = [m.entries[i][1] for i in subset]
    for label in range(classes):
        assert labels.count(label) == per_class


def test_selection_is_deterministic_and_unique():
    m = manifest_with_counts([10, 10, 10])
    a = select_eval_subset(m, 6, Rng(42))
    b = select_eval_subset(m, 6, Rng(42))
    c = select_eval_subset(m, 6, Rng(43))
    assert a == b
    assert len(set(a)) == len(a)
    assert a != c


def test_class_too_small():
    m = manifest_with_counts([10, 2, 10])
    with pytest.raises(ClassTooSmall):
        select_eval_subset(m, 100, Rng(1))


def test_selection_balanced_across_seeds():
    m = manifest_with_counts([8, 8, 8, 8])
    for seed in range(5):
        subset = select_eval_subset(m, 10, Rng(seed))
        labels = [m.entries[i][1] for i in subset]
        assert [labels.count(c) for c in range(4)] == [3, 3, 3, 3]


def test_synth_image_contract():
    img = synth_image(2, 32, 3, Rng(5))
    assert img.shape == (32, 32, 3)
    assert img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0
    again = synth_image(2, 32, 3, Rng(5))
    assert np.array_equal(img, again)


def test_generate_and_reload(tmp_path):
    manifest = generate_synthetic_dataset(tmp_path / "ds", total=24, classes=4,
                                          size=16, channels=3, seed=9)
    assert len(manifest.entries) == 24
    assert manifest.class_count == 4
    reloaded = load_manifest(tmp_path / "ds" / "manifest.csv")
    assert reloaded.entries == manifest.entries
    img = reloaded.load_image(0)
    assert img.shape == (16, 16, 3)
    reloaded.validate()


def test_generation_is_seed_deterministic(tmp_path):
    m1 = generate_synthetic_dataset(tmp_path / "a", 8, 4, 16, 3, seed=3)
    m2 = generate_synthetic_dataset(tmp_path / "b", 8, 4, 16, 3, seed=3)
    for i in range(8):
        assert np.array_equal(m1.load_image(i), m2.load_image(i))
