"""Dataset manifests, evaluation-subset selection, synthetic corpus."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ClassTooSmall, IoFailure
from .rng import Rng
from .tensorio import Tensor, load_tensor, save_tensor


@dataclass(frozen=True)
class DatasetManifest:
    """Image paths with integer labels, resolved relative to ``root``."""

    root: Path
    entries: list[tuple[str, int]]

    @property
    def class_count(self) -> int:
        return 1 + max(label for _, label in self.entries)

    def per_class_counts(self) -> list[int]:
        counts = [0] * self.class_count
        for _, label in self.entries:
            counts[label] += 1
        return counts

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.entries], dtype=np.int64)

    def load_image(self, index: int) -> np.ndarray:
        rel, _ = self.entries[index]
        return load_tensor(self.root / rel).to_array()

    def validate(self) -> None:
        for rel, label in self.entries:
            if label < 0 or label >= self.class_count:
                raise ValueError(f"label {label} out of range")
            if not (self.root / rel).exists():
                raise IoFailure(f"manifest entry not found: {self.root / rel}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a UTF-8 ``path,label`` CSV; paths are relative to the CSV."""
    path = Path(path)
    entries: list[tuple[str, int]] = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "path":
                    continue
                entries.append((row[0], int(row[1])))
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    if not entries:
        raise IoFailure(f"manifest {path} is empty")
    return DatasetManifest(root=path.parent, entries=entries)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label"])
            writer.writerows(manifest.entries)
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc


def select_eval_subset(manifest: DatasetManifest, min_total: int, rng: Rng) -> list[int]:
    """Class-balanced evaluation indices.

    Per-class count is the smallest C with C * class_count >= min_total;
    each class contributes exactly C images drawn uniformly without
    replacement. Output is ordered by class, then by original index.
    """
    if min_total < 1:
        raise ValueError("min_total must be >= 1")
    n_classes = manifest.class_count
    per_class = math.ceil(min_total / n_classes)
    by_class: list[list[int]] = [[] for _ in range(n_classes)]
    for idx, (_, label) in enumerate(manifest.entries):
        by_class[label].append(idx)
    chosen: list[int] = []
    for label, members in enumerate(by_class):
        if len(members) < per_class:
            raise ClassTooSmall(
                f"class {label} has {len(members)} images, needs {per_class}"
            )
        child = rng.child(label)
        picks = child.sample_without_replacement(len(members), per_class)
        chosen.extend(sorted(members[p] for p in picks))
    return chosen


# --- synthetic corpus -------------------------------------------------------

_PALETTE = [
    (1.0, 0.15, 0.15), (0.15, 1.0, 0.15), (0.15, 0.15, 1.0), (1.0, 1.0, 0.2),
    (1.0, 0.2, 1.0), (0.2, 1.0, 1.0), (1.0, 1.0, 1.0), (0.75, 0.45, 0.15),
]


def synth_image(label: int, size: int, channels: int, rng: Rng) -> np.ndarray:
    """One synthetic image: a colored blob at a random position on gray.

    The class is coded in the blob, not its position (a pooled conv net is
    nearly translation invariant): color for 3-channel images, blob size
    for single-channel ones. The mid-gray background keeps the blob the
    only structure in the image, so saliency maps have something real to
    find.
    """
    cy = size * (0.2 + 0.6 * rng.next_float())
    cx = size * (0.2 + 0.6 * rng.next_float())
    if channels == 1:
        sigma = size * (0.07 + 0.05 * (label % 8))
        color = np.ones(1)
    else:
        sigma = size * 0.2
        color = np.resize(np.array(_PALETTE[label % len(_PALETTE)]), channels)
    ys = np.arange(size, dtype=np.float64)[:, None]
    xs = np.arange(size, dtype=np.float64)[None, :]
    blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma * sigma))
    img = 0.5 + 0.9 * blob[:, :, None] * (color[None, None, :] - 0.5)
    noise = np.array(
        [rng.next_normal() for _ in range(size * size * channels)], dtype=np.float64
    ).reshape(size, size, channels)
    img = img + 0.04 * noise
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic_dataset(
    out_dir: str | Path,
    total: int,
    classes: int,
    size: int,
    channels: int,
    seed: int,
) -> DatasetManifest:
    """Write ``total`` TNSR images plus manifest.csv under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = Rng(seed)
    entries: list[tuple[str, int]] = []
    for i in range(total):
        label = i % classes
        img = synth_image(label, size, channels, base.child(i))
        rel = f"img_{i:05d}.tnsr"
        save_tensor(Tensor.from_array(img), out_dir / rel)
        entries.append((rel, label))
    manifest = DatasetManifest(root=out_dir, entries=entries)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
