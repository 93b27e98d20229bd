"""Masking, blurring and upsampling primitives plus the FP batch sampler.

All functions are pure over float32 numpy arrays: images are [H, W, C] in
[0, 1], saliency maps are [H', W'] and finite. Outputs stay in [0, 1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import BadDims, BadK, BadKernel
from .rng import Rng


class FpKind(enum.Enum):
    AD_INSPIRED = "ad"
    ADD_INSPIRED = "add"
    DELETION_INSPIRED = "deletion"
    INSERTION_INSPIRED = "insertion"


@dataclass(frozen=True)
class PatchGrid:
    """Maps an H' x W' cell grid onto an image whose sides it divides."""

    cells_h: int
    cells_w: int
    image_h: int
    image_w: int

    def __post_init__(self):
        if self.cells_h <= 0 or self.cells_w <= 0:
            raise BadDims("grid must have positive cell counts")
        if self.image_h % self.cells_h or self.image_w % self.cells_w:
            raise BadDims(
                f"image {self.image_h}x{self.image_w} not divisible by "
                f"grid {self.cells_h}x{self.cells_w}"
            )

    @property
    def patch_h(self) -> int:
        return self.image_h // self.cells_h

    @property
    def patch_w(self) -> int:
        return self.image_w // self.cells_w

    @property
    def cell_count(self) -> int:
        return self.cells_h * self.cells_w


@dataclass(frozen=True)
class BlurSpec:
    """Gaussian blur parameters; defaults are kernel 11, sigma 5 at 32 px."""

    kernel: int = 11
    sigma: float = 5.0

    @classmethod
    def for_size(cls, size: int) -> "BlurSpec":
        scale = size / 32.0
        kernel = max(3, int(round(11 * scale)) | 1)
        return cls(kernel=kernel, sigma=5.0 * scale)


def minmax_norm(s: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1] in 64-bit; a constant map becomes all ones.

    The all-ones convention keeps a flat map from erasing the image when
    it is used as a multiplicative mask.
    """
    s = np.asarray(s, dtype=np.float64)
    lo = float(s.min())
    hi = float(s.max())
    if hi == lo:
        return np.ones_like(s)
    return (s - lo) / (hi - lo)


def upsample(s: np.ndarray, target_h: int, target_w: int, mode: str = "bilinear") -> np.ndarray:
    """Resize a 2-D map up to (target_h, target_w), computing in 64-bit.

    ``nearest`` replicates source cells (floor index mapping); ``bilinear``
    uses the align-corners-false convention: output pixel i samples source
    coordinate (i + 0.5) * src / dst - 0.5, clamped at the borders.
    """
    s = np.asarray(s, dtype=np.float64)
    src_h, src_w = s.shape
    if target_h < src_h or target_w < src_w:
        raise BadDims(f"target {target_h}x{target_w} below source {src_h}x{src_w}")
    if mode == "nearest":
        rows = np.floor(np.arange(target_h) * (src_h / target_h)).astype(np.int64)
        cols = np.floor(np.arange(target_w) * (src_w / target_w)).astype(np.int64)
        return s[rows][:, cols]
    if mode != "bilinear":
        raise ValueError(f"unknown upsample mode {mode!r}")

    def axis_weights(src: int, dst: int):
        coords = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
        lo = np.floor(coords).astype(np.int64)
        frac = coords - lo
        lo_c = np.clip(lo, 0, src - 1)
        hi_c = np.clip(lo + 1, 0, src - 1)
        return lo_c, hi_c, frac

    r0, r1, fr = axis_weights(src_h, target_h)
    c0, c1, fc = axis_weights(src_w, target_w)
    top = s[r0][:, c0] * (1 - fc)[None, :] + s[r0][:, c1] * fc[None, :]
    bot = s[r1][:, c0] * (1 - fc)[None, :] + s[r1][:, c1] * fc[None, :]
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def _gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    center = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64) - center
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return (k / k.sum()).astype(np.float32)


def gaussian_blur(img: np.ndarray, sigma: float, kernel: int = 11) -> np.ndarray:
    """Separable Gaussian blur with symmetric (edge-repeating) borders."""
    if kernel < 3 or kernel % 2 == 0:
        raise BadKernel(f"kernel must be odd and >= 3, got {kernel}")
    if sigma <= 0:
        raise BadKernel(f"sigma must be positive, got {sigma}")
    img = np.asarray(img)
    if img.dtype not in (np.float32, np.float64):
        img = img.astype(np.float64)
    k = _gaussian_kernel(sigma, kernel).astype(img.dtype)
    pad = kernel // 2

    def conv_axis(x: np.ndarray, axis: int) -> np.ndarray:
        widths = [(0, 0)] * x.ndim
        widths[axis] = (pad, pad)
        padded = np.pad(x, widths, mode="symmetric")
        out = np.zeros_like(x)
        for i, w in enumerate(k):
            sl = [slice(None)] * x.ndim
            sl[axis] = slice(i, i + x.shape[axis])
            out += w * padded[tuple(sl)]
        return out

    return np.clip(conv_axis(conv_axis(img, 0), 1), 0.0, 1.0)


def apply_saliency_mask(
    img: np.ndarray,
    s: np.ndarray,
    kind: FpKind,
    up_mode: str = "bilinear",
) -> np.ndarray:
    """Multiply the image by the normalized upsampled map (or its complement)."""
    if kind not in (FpKind.AD_INSPIRED, FpKind.ADD_INSPIRED):
        raise ValueError(f"{kind} is not a saliency-mask perturbation")
    h, w = img.shape[0], img.shape[1]
    mask = minmax_norm(upsample(np.asarray(s, dtype=np.float64), h, w, up_mode))
    if kind is FpKind.ADD_INSPIRED:
        mask = 1.0 - mask
    return np.clip(np.asarray(img, dtype=np.float64) * mask[:, :, None], 0.0, 1.0)


def top_k_positions(s: np.ndarray, k: int) -> list[tuple[int, int]]:
    """Top-k cells by descending saliency; ties break in row-major order."""
    s = np.asarray(s)
    n = s.size
    if not 0 <= k <= n:
        raise BadK(f"k={k} outside [0, {n}]")
    flat = s.reshape(-1)
    order = sorted(range(n), key=lambda i: (-float(flat[i]), i))
    w = s.shape[1]
    return [(i // w, i % w) for i in order[:k]]


def deletion_mask(s: np.ndarray, grid: PatchGrid, k: int) -> np.ndarray:
    """Low-res binary mask, zero at the top-k cells, upsampled NN to image size."""
    lr = np.ones((grid.cells_h, grid.cells_w), dtype=np.float64)
    for (i, j) in top_k_positions(s, k):
        lr[i, j] = 0.0
    return upsample(lr, grid.image_h, grid.image_w, "nearest")


def apply_patch_mask(
    img: np.ndarray,
    s: np.ndarray,
    grid: PatchGrid,
    k: int,
    kind: FpKind,
    blur: BlurSpec | None = None,
) -> np.ndarray:
    """Deletion: black out top-k patches. Insertion: unblur top-k patches."""
    img = np.asarray(img, dtype=np.float64)
    if kind is FpKind.DELETION_INSPIRED:
        mask = deletion_mask(s, grid, k)
        return img * mask[:, :, None]
    if kind is FpKind.INSERTION_INSPIRED:
        blur = blur or BlurSpec.for_size(max(grid.image_h, grid.image_w))
        blurred = gaussian_blur(img, blur.sigma, blur.kernel)
        reveal = 1.0 - deletion_mask(s, grid, k)
        return blurred * (1.0 - reveal)[:, :, None] + img * reveal[:, :, None]
    raise ValueError(f"{kind} is not a patch perturbation")


def sample_fp_batch(
    images: list[np.ndarray],
    saliencies: list[np.ndarray],
    rng: Rng,
    blur: BlurSpec | None = None,
) -> tuple[list[np.ndarray], list[FpKind]]:
    """Perturb each image by one of the four kinds, each with probability 1/4.

    Deletion and insertion draw k uniformly from [0, H'W' - 1]. Image i
    consumes the child stream rng.child(i), so results do not depend on
    batch order or parallel scheduling.
    """
    if len(images) != len(saliencies):
        raise BadDims("need one saliency map per image")
    kinds = list(FpKind)
    out_images: list[np.ndarray] = []
    out_kinds: list[FpKind] = []
    for i, (img, s) in enumerate(zip(images, saliencies)):
        child = rng.child(i)
        kind = kinds[child.next_below(4)]
        if kind in (FpKind.AD_INSPIRED, FpKind.ADD_INSPIRED):
            perturbed = apply_saliency_mask(img, s, kind)
        else:
            grid = PatchGrid(s.shape[0], s.shape[1], img.shape[0], img.shape[1])
            k = child.next_below(grid.cell_count)
            perturbed = apply_patch_mask(img, s, grid, k, kind, blur)
        out_images.append(perturbed.astype(np.float32))
        out_kinds.append(kind)
    return out_images, out_kinds


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate [H, W, C] layout, C in {1, 3}, values in [0, 1]."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise BadDims(f"image must be [H, W, C] with C in {{1, 3}}, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise BadDims("image values must be finite and in [0, 1]")
    return img
