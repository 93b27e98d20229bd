"""Post-hoc attribution methods, all reduced to the feature-grid resolution.

Pixel-level attributions (integrated gradients, smoothgrad) are average
pooled onto the grid so every method hands the metrics the same map shape.
The explained class is always the ground-truth class of the image.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import BadDims, NoGradient
from .oracles import ScoringOracle
from .perturb import PatchGrid, upsample
from .rng import Rng
from .toynet import ToyNet


class MethodKind(enum.Enum):
    CAM = "cam"
    GRADCAM = "gradcam"
    INTEGRATED_GRADIENTS = "ig"
    SMOOTHGRAD = "smoothgrad"
    OCCLUSION = "occlusion"
    RISE = "rise"


def pool_to_grid(values: np.ndarray, cells_h: int, cells_w: int) -> np.ndarray:
    """Average a [H, W] or [H, W, C] field over grid blocks (and channels)."""
    if values.ndim == 3:
        values = values.mean(axis=2)
    h, w = values.shape
    if h % cells_h or w % cells_w:
        raise BadDims(f"{h}x{w} field not divisible by {cells_h}x{cells_w} grid")
    return values.reshape(cells_h, h // cells_h, cells_w, w // cells_w).mean(axis=(1, 3))


def cam(net: ToyNet, image: np.ndarray, class_index: int) -> np.ndarray:
    """Linear-head weighted sum of the final feature maps."""
    _, maps = net.forward(image)
    w = net.fc_w[class_index].astype(maps.dtype)
    return np.tensordot(w, maps, axes=(0, 0))


def grad_cam(net: ToyNet, image: np.ndarray, class_index: int) -> np.ndarray:
    """ReLU of the gradient-weighted feature-map combination."""
    x = np.asarray(image, dtype=np.float32).transpose(2, 0, 1)[None]
    cache = net.forward_batch(x)
    g_logits = np.zeros_like(cache["logits"])
    g_logits[0, class_index] = 1.0
    g_maps = net.backward_batch(cache, g_logits)["feature_maps"][0]
    alphas = g_maps.mean(axis=(1, 2))
    combined = np.tensordot(alphas, cache["p2"][0], axes=(0, 0))
    return np.maximum(combined, 0.0)


def ig_pixel_attribution(oracle: ScoringOracle, image: np.ndarray,
                         class_index: int, baseline: np.ndarray | None = None,
                         steps: int = 32) -> np.ndarray:
    """Path-integrated gradients at pixel level, midpoint Riemann rule."""
    if not oracle.has_gradients:
        raise NoGradient("integrated gradients needs an in-process oracle")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    image = np.asarray(image, dtype=np.float64)
    base = np.zeros_like(image) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if base.shape != image.shape:
        raise BadDims(f"baseline {base.shape} does not match image {image.shape}")
    delta = image - base
    acc = np.zeros_like(image)
    for i in range(steps):
        t = (i + 0.5) / steps
        point = (base + t * delta).astype(np.float32)
        acc += oracle.confidence_gradient(point, class_index)
    return delta * acc / steps


def integrated_gradients(oracle: ScoringOracle, image: np.ndarray,
                         class_index: int, grid: PatchGrid,
                         baseline: np.ndarray | None = None,
                         steps: int = 32) -> np.ndarray:
    attr = ig_pixel_attribution(oracle, image, class_index, baseline, steps)
    return pool_to_grid(attr, grid.cells_h, grid.cells_w).astype(np.float32)


def smoothgrad(oracle: ScoringOracle, image: np.ndarray, class_index: int,
               grid: PatchGrid, rng: Rng, samples: int = 30,
               sigma: float = 0.1) -> np.ndarray:
    """Mean absolute input gradient under additive Gaussian noise."""
    if not oracle.has_gradients:
        raise NoGradient("smoothgrad needs an in-process oracle")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    image = np.asarray(image, dtype=np.float32)
    acc = np.zeros(image.shape, dtype=np.float64)
    for i in range(samples):
        if sigma == 0.0:
            noisy = image
        else:
            child = rng.child(i)
            noise = np.array(
                [child.next_normal() for _ in range(image.size)], dtype=np.float64
            ).reshape(image.shape)
            noisy = (image + sigma * noise).astype(np.float32)
        acc += np.abs(oracle.confidence_gradient(noisy, class_index))
    return pool_to_grid(acc / samples, grid.cells_h, grid.cells_w).astype(np.float32)


def occlusion(oracle: ScoringOracle, image: np.ndarray, class_index: int,
              grid: PatchGrid) -> np.ndarray:
    """Confidence drop from zeroing each grid patch; H'W' + 1 oracle calls."""
    image = np.asarray(image, dtype=np.float32)
    batch = [image]
    for ci in range(grid.cells_h):
        for cj in range(grid.cells_w):
            masked = image.copy()
            masked[ci * grid.patch_h:(ci + 1) * grid.patch_h,
                   cj * grid.patch_w:(cj + 1) * grid.patch_w, :] = 0.0
            batch.append(masked)
    scores = oracle.score_batch(batch)[:, class_index]
    return (scores[0] - scores[1:]).reshape(grid.cells_h, grid.cells_w).astype(np.float32)


def rise(oracle: ScoringOracle, image: np.ndarray, class_index: int,
         grid: PatchGrid, rng: Rng, masks: int = 1000, keep_prob: float = 0.5,
         batch_size: int = 256) -> np.ndarray:
    """Monte-Carlo conditional mean of the score given a cell is kept.

    Binary cell grids are drawn i.i.d. Bernoulli(keep_prob), bilinearly
    upsampled and multiplied into the image. Each cell's value is the
    average score over the masks that kept it (the conditional-mean form
    of the keep_prob-normalized estimator), so a constant oracle yields an
    exactly constant map. Cells never kept score 0.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must be in (0, 1]")
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[0], image.shape[1]
    cells = grid.cell_count
    num = np.zeros(cells, dtype=np.float64)
    den = np.zeros(cells, dtype=np.float64)
    for start in range(0, masks, batch_size):
        count = min(batch_size, masks - start)
        grids = np.empty((count, cells), dtype=np.float32)
        batch = []
        for m in range(count):
            child = rng.child(start + m)
            g = np.array([1.0 if child.next_float() < keep_prob else 0.0
                          for _ in range(cells)], dtype=np.float32)
            grids[m] = g
            mask = upsample(g.reshape(grid.cells_h, grid.cells_w), h, w, "bilinear")
            batch.append(image * mask[:, :, None])
        scores = oracle.score_batch(batch)[:, class_index]
        num += scores @ grids
        den += grids.sum(axis=0)
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return out.reshape(grid.cells_h, grid.cells_w).astype(np.float32)
