"""Small convolutional classifier with hand-derived gradients.

Fixed architecture: conv3x3(pad 1) / ReLU / avgpool2, twice, then global
average pooling into a linear head and softmax. A 32x32 input therefore
produces an 8-channel 8x8 grid of post-ReLU feature maps, which is the
resolution every saliency map in the engine lives on.

Parameters are float32; `astype_net(net, float64)` produces the 64-bit
shadow used by the finite-difference gradient checks. Images are accepted
in [H, W, C] layout and handled internally as [B, C, H, W].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadBeta, BadP, DimMismatch
from .perturb import BlurSpec, sample_fp_batch
from .rng import Rng
from .tensorio import Tensor, load_bundle, save_bundle

CHANNELS = 8  # conv width, fixed by the architecture
PGD_STEPS = 4
PGD_STEP_SIZE = 2.0 / 255.0
PGD_EPS = 1.0 / 255.0


class LossKind(enum.Enum):
    CROSS_ENTROPY = "ce"
    FOCAL_ADAPTIVE = "fl"


@dataclass(frozen=True)
class TrainingSetting:
    """One of the eight combinations of {FP, AP, FL} over the CE baseline."""

    fp: bool = False
    ap: bool = False
    fl: bool = False

    @property
    def loss_kind(self) -> LossKind:
        return LossKind.FOCAL_ADAPTIVE if self.fl else LossKind.CROSS_ENTROPY

    @property
    def batch_names(self) -> list[str]:
        names = ["regular"]
        if self.fp:
            names.append("fp")
        if self.ap:
            names.append("ap")
        if self.fp and self.ap:
            names.append("fp_ap")
        return names

    @property
    def name(self) -> str:
        parts = [p for p, on in (("fp", self.fp), ("ap", self.ap), ("fl", self.fl)) if on]
        return "+".join(parts) if parts else "baseline"


def parse_setting(text: str) -> TrainingSetting:
    text = text.strip().lower()
    if text in ("baseline", "ce", ""):
        return TrainingSetting()
    parts = {p.strip() for p in text.replace(" ", "").split("+")}
    unknown = parts - {"fp", "ap", "fl"}
    if unknown:
        raise ValueError(f"unknown setting parts: {sorted(unknown)}")
    return TrainingSetting(fp="fp" in parts, ap="ap" in parts, fl="fl" in parts)


ALL_SETTINGS = [
    TrainingSetting(),
    TrainingSetting(fp=True),
    TrainingSetting(ap=True),
    TrainingSetting(fp=True, ap=True),
    TrainingSetting(fl=True),
    TrainingSetting(fp=True, fl=True),
    TrainingSetting(ap=True, fl=True),
    TrainingSetting(fp=True, ap=True, fl=True),
]


# --- scalar losses ----------------------------------------------------------

def focal_loss(p: float, gamma: float) -> float:
    """-(1 - p)^gamma * log(p) for the ground-truth confidence p."""
    if p <= 0.0:
        raise BadP(f"confidence must be positive, got {p}")
    if p > 1.0:
        raise BadP(f"confidence must be <= 1, got {p}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return -((1.0 - p) ** gamma) * math.log(p)


def adaptive_gamma(p: float) -> float:
    """Confidence-dependent gamma schedule: 5 below 0.2, else 3."""
    return 5.0 if p < 0.2 else 3.0


def cross_entropy(p: float) -> float:
    if p <= 0.0:
        raise BadP(f"confidence must be positive, got {p}")
    return -math.log(p)


# --- network ----------------------------------------------------------------

@dataclass
class ToyNet:
    conv1_w: np.ndarray  # [8, C, 3, 3]
    conv1_b: np.ndarray  # [8]
    conv2_w: np.ndarray  # [8, 8, 3, 3]
    conv2_b: np.ndarray  # [8]
    fc_w: np.ndarray     # [K, 8]
    fc_b: np.ndarray     # [K]
    in_channels: int
    num_classes: int
    input_size: int = 32

    PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")

    @property
    def grid_size(self) -> int:
        return self.input_size // 4

    @classmethod
    def init(cls, seed: int, num_classes: int, in_channels: int = 3,
             input_size: int = 32) -> "ToyNet":
        if input_size % 4:
            raise DimMismatch("input size must be divisible by 4")
        rng = Rng(seed)

        def uniform(shape: tuple[int, ...], fan_in: int, key: int) -> np.ndarray:
            # He-uniform: limit sqrt(6/fan_in) keeps ReLU activations from shrinking
            child = rng.child(key)
            limit = math.sqrt(6.0 / fan_in)
            n = int(np.prod(shape))
            vals = [(child.next_float() * 2.0 - 1.0) * limit for _ in range(n)]
            return np.array(vals, dtype=np.float32).reshape(shape)

        return cls(
            conv1_w=uniform((CHANNELS, in_channels, 3, 3), in_channels * 9, 1),
            conv1_b=np.zeros(CHANNELS, dtype=np.float32),
            conv2_w=uniform((CHANNELS, CHANNELS, 3, 3), CHANNELS * 9, 2),
            conv2_b=np.zeros(CHANNELS, dtype=np.float32),
            fc_w=uniform((num_classes, CHANNELS), CHANNELS, 3),
            fc_b=np.zeros(num_classes, dtype=np.float32),
            in_channels=in_channels,
            num_classes=num_classes,
            input_size=input_size,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    # -- forward --

    def forward_batch(self, x: np.ndarray) -> dict:
        """Run [B, C, H, W] input through the net, keeping intermediates."""
        if x.ndim != 4 or x.shape[1] != self.in_channels or x.shape[2] != self.input_size:
            raise DimMismatch(f"expected [B, {self.in_channels}, {self.input_size}, "
                              f"{self.input_size}], got {x.shape}")
        # fixed preprocessing: map [0, 1] pixels to [-1, 1] before the convs
        cols1 = _im2col(2.0 * x - 1.0)
        z1 = _conv_from_cols(cols1, self.conv1_w, self.conv1_b)
        a1 = np.maximum(z1, 0)
        p1 = _avgpool2(a1)
        cols2 = _im2col(p1)
        z2 = _conv_from_cols(cols2, self.conv2_w, self.conv2_b)
        a2 = np.maximum(z2, 0)
        p2 = _avgpool2(a2)  # post-ReLU feature maps on the 8x8 grid
        feats = p2.mean(axis=(2, 3))
        logits = feats @ np.asarray(self.fc_w, dtype=x.dtype).T \
            + np.asarray(self.fc_b, dtype=x.dtype)
        return {
            "x": x, "cols1": cols1, "z1": z1, "p1": p1, "cols2": cols2,
            "z2": z2, "p2": p2, "feats": feats, "logits": logits,
        }

    def forward(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Logits and post-ReLU [8, 8, 8] feature maps for one [H, W, C] image."""
        cache = self.forward_batch(_to_nchw([image], self.conv1_w.dtype))
        return cache["logits"][0], cache["p2"][0]

    def probs_batch(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.forward_batch(x)["logits"])

    # -- backward --

    def backward_batch(self, cache: dict, g_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Exact gradients for every parameter, the input and the feature maps.

        ``g_logits`` is the upstream gradient of a scalar objective with
        respect to the logits, shape [B, K].
        """
        feats, p2, z2, p1, z1, x = (cache[k] for k in ("feats", "p2", "z2", "p1", "z1", "x"))
        fc_w = np.asarray(self.fc_w, dtype=x.dtype)
        g_fc_w = g_logits.T @ feats
        g_fc_b = g_logits.sum(axis=0)
        g_feats = g_logits @ fc_w
        gh, gw = p2.shape[2], p2.shape[3]
        g_p2 = np.broadcast_to(
            g_feats[:, :, None, None] / (gh * gw), p2.shape
        ).astype(x.dtype)
        g_a2 = _avgpool2_back(g_p2)
        g_z2 = g_a2 * (z2 > 0)
        g_w2, g_b2, g_p1 = _conv_back(cache["cols2"], g_z2, self.conv2_w, p1.shape)
        g_a1 = _avgpool2_back(g_p1)
        g_z1 = g_a1 * (z1 > 0)
        g_w1, g_b1, g_x = _conv_back(cache["cols1"], g_z1, self.conv1_w, x.shape)
        g_x = 2.0 * g_x  # undo the [-1, 1] input preprocessing
        return {
            "conv1_w": g_w1, "conv1_b": g_b1,
            "conv2_w": g_w2, "conv2_b": g_b2,
            "fc_w": g_fc_w, "fc_b": g_fc_b,
            "input": g_x, "feature_maps": g_p2,
        }

    def astype(self, dtype) -> "ToyNet":
        kwargs = {name: getattr(self, name).astype(dtype) for name in self.PARAM_NAMES}
        return ToyNet(in_channels=self.in_channels, num_classes=self.num_classes,
                      input_size=self.input_size, **kwargs)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def saliency_proxy(feature_maps: np.ndarray) -> np.ndarray:
    """Channel mean of the post-ReLU feature maps; cheap training-time map."""
    maps = np.asarray(feature_maps)
    if maps.ndim != 3:
        raise DimMismatch(f"feature maps must be [C, H', W'], got {maps.shape}")
    return maps.mean(axis=0)


# --- loss heads -------------------------------------------------------------

def _confidences(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = softmax(logits)
    return probs, np.maximum(probs[np.arange(len(labels)), labels], 1e-30)


def loss_and_logit_grad(logits: np.ndarray, labels: np.ndarray,
                        kind: LossKind) -> tuple[float, np.ndarray]:
    """Batch loss (summed over samples) and its gradient w.r.t. the logits.

    Sum reduction keeps gradient magnitudes workable for the fixed small
    learning rate at this model scale; every loss identity the callers
    rely on is reduction-independent.
    """
    n = len(labels)
    probs, p_y = _confidences(logits, labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    if kind is LossKind.CROSS_ENTROPY:
        loss = float(-np.log(p_y).sum())
        g = probs - onehot
        return loss, g
    gammas = np.where(p_y < 0.2, 5.0, 3.0)
    loss = float((-((1.0 - p_y) ** gammas) * np.log(p_y)).sum())
    # dL/dp = gamma (1-p)^(g-1) ln p - (1-p)^g / p, then dp/dz through softmax
    dl_dp = gammas * (1.0 - p_y) ** (gammas - 1.0) * np.log(p_y) \
        - (1.0 - p_y) ** gammas / p_y
    g = dl_dp[:, None] * p_y[:, None] * (onehot - probs)
    return loss, g


def batch_loss_and_grads(net: ToyNet, x: np.ndarray, labels: np.ndarray,
                         kind: LossKind) -> tuple[float, dict[str, np.ndarray]]:
    cache = net.forward_batch(x)
    loss, g_logits = loss_and_logit_grad(cache["logits"], labels, kind)
    return loss, net.backward_batch(cache, g_logits)


# --- PGD --------------------------------------------------------------------

def pgd_attack(net: ToyNet, x: np.ndarray, labels: np.ndarray, kind: LossKind,
               steps: int = PGD_STEPS, step_size: float = PGD_STEP_SIZE,
               eps: float = PGD_EPS) -> np.ndarray:
    """Untargeted L-inf PGD on [B, C, H, W] inputs, deterministic start.

    The attack ascends the training loss of the current setting. The
    output always satisfies the eps ball and [0, 1] clipping; both are
    asserted on every call.
    """
    x = x.astype(np.float32, copy=True)
    adv = x.copy()
    for _ in range(steps):
        cache = net.forward_batch(adv)
        _, g_logits = loss_and_logit_grad(cache["logits"], labels, kind)
        g_in = net.backward_batch(cache, g_logits)["input"]
        adv = adv + step_size * np.sign(g_in, dtype=np.float32)
        adv = x + np.clip(adv - x, -eps, eps)
        adv = np.clip(adv, 0.0, 1.0)
    assert float(np.abs(adv - x).max()) <= eps + 1e-7
    assert float(adv.min()) >= 0.0 and float(adv.max()) <= 1.0
    return adv.astype(np.float32)


# --- training ---------------------------------------------------------------

@dataclass
class SgdOptimizer:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-8
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, net: ToyNet, grads: dict[str, np.ndarray]) -> None:
        for name in ToyNet.PARAM_NAMES:
            param = getattr(net, name)
            g = grads[name].astype(np.float32) + self.weight_decay * param
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            setattr(net, name, param - self.lr * v)


def proxy_saliencies(net: ToyNet, x: np.ndarray) -> list[np.ndarray]:
    p2 = net.forward_batch(x)["p2"]
    return [maps.mean(axis=0) for maps in p2]


def make_fp_batch(net: ToyNet, x: np.ndarray, rng: Rng,
                  blur: BlurSpec | None = None) -> np.ndarray:
    """FP images for a regular batch, using the proxy saliency of the net."""
    images = list(_to_hwc(x))
    fp_images, _ = sample_fp_batch(images, proxy_saliencies(net, x), rng, blur)
    return _to_nchw(fp_images, np.float32)


def train_step(net: ToyNet, x: np.ndarray, labels: np.ndarray,
               setting: TrainingSetting, rng: Rng, opt: SgdOptimizer,
               blur: BlurSpec | None = None) -> dict[str, float]:
    """One SGD step: build the setting's batch list, sum losses, update.

    Returns the per-batch losses, keyed by batch name, so callers can
    verify exactly which code paths ran.
    """
    if len(x) == 0:
        raise DimMismatch("batch must be nonempty")
    kind = setting.loss_kind
    batches: dict[str, np.ndarray] = {"regular": x}
    if setting.fp:
        batches["fp"] = make_fp_batch(net, x, rng.child(1), blur)
    if setting.ap:
        batches["ap"] = pgd_attack(net, x, labels, kind)
    if setting.fp and setting.ap:
        batches["fp_ap"] = pgd_attack(net, batches["fp"], labels, kind)

    losses: dict[str, float] = {}
    total: dict[str, np.ndarray] = {}
    for name in setting.batch_names:
        loss, grads = batch_loss_and_grads(net, batches[name], labels, kind)
        losses[name] = loss
        for pname in ToyNet.PARAM_NAMES:
            total[pname] = grads[pname] if pname not in total else total[pname] + grads[pname]
    opt.step(net, total)
    return losses


def interp_loss(net: ToyNet, x: np.ndarray, labels: np.ndarray, rng: Rng,
                beta: float, blur: BlurSpec | None = None) -> float:
    """(2 - beta) * CE on the regular batch + beta * CE on its FP batch."""
    loss, _ = interp_loss_and_grads(net, x, labels, rng, beta, blur)
    return loss


def interp_loss_and_grads(net: ToyNet, x: np.ndarray, labels: np.ndarray,
                          rng: Rng, beta: float, blur: BlurSpec | None = None,
                          ) -> tuple[float, dict[str, np.ndarray]]:
    if not 0.0 <= beta <= 1.0:
        raise BadBeta(f"beta must be in [0, 1], got {beta}")
    kind = LossKind.CROSS_ENTROPY
    loss_reg, grads_reg = batch_loss_and_grads(net, x, labels, kind)
    fp = make_fp_batch(net, x, rng, blur)
    loss_fp, grads_fp = batch_loss_and_grads(net, fp, labels, kind)
    total = (2.0 - beta) * loss_reg + beta * loss_fp
    grads = {
        name: (2.0 - beta) * grads_reg[name] + beta * grads_fp[name]
        for name in ToyNet.PARAM_NAMES
    }
    return total, grads


def train_interp_step(net: ToyNet, x: np.ndarray, labels: np.ndarray, rng: Rng,
                      beta: float, opt: SgdOptimizer,
                      blur: BlurSpec | None = None) -> float:
    loss, grads = interp_loss_and_grads(net, x, labels, rng, beta, blur)
    opt.step(net, grads)
    return loss


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(net: ToyNet, path) -> None:
    tensors = {name: Tensor.from_array(arr) for name, arr in net.params().items()}
    meta = np.array([net.in_channels, net.num_classes, net.input_size], dtype=np.float32)
    tensors["meta"] = Tensor.from_array(meta)
    save_bundle(tensors, path)


def load_checkpoint(path) -> ToyNet:
    tensors = load_bundle(path)
    meta = tensors["meta"].to_array()
    kwargs = {name: tensors[name].to_array().copy() for name in ToyNet.PARAM_NAMES}
    return ToyNet(in_channels=int(meta[0]), num_classes=int(meta[1]),
                  input_size=int(meta[2]), **kwargs)


# --- layout and layer helpers -----------------------------------------------

def _to_nchw(images: list[np.ndarray], dtype) -> np.ndarray:
    return np.stack([np.asarray(im, dtype=dtype).transpose(2, 0, 1) for im in images])


def _to_hwc(x: np.ndarray) -> list[np.ndarray]:
    return [xi.transpose(1, 2, 0).astype(np.float32) for xi in x]


def _im2col(x: np.ndarray) -> np.ndarray:
    """3x3 pad-1 patches: [B, C, 9, H, W] view-copies of the padded input."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((b, c, 9, h, w), dtype=x.dtype)
    t = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, t] = xp[:, :, di:di + h, dj:dj + w]
            t += 1
    return cols


def _conv_from_cols(cols: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    wk = np.asarray(w, dtype=cols.dtype).reshape(w.shape[0], -1)
    out = np.einsum("bcthw,oct->bohw", cols,
                    wk.reshape(w.shape[0], w.shape[1], 9), optimize=True)
    return out + np.asarray(bias, dtype=cols.dtype)[None, :, None, None]


def _conv_back(cols: np.ndarray, g_out: np.ndarray, w: np.ndarray,
               in_shape: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w_ = np.asarray(w, dtype=cols.dtype)
    g_w = np.einsum("bohw,bcthw->oct", g_out, cols, optimize=True)
    g_w = g_w.reshape(w.shape)
    g_b = g_out.sum(axis=(0, 2, 3))
    g_cols = np.einsum("bohw,oct->bcthw", g_out,
                       w_.reshape(w.shape[0], w.shape[1], 9), optimize=True)
    b, c, h, wd = in_shape
    g_pad = np.zeros((b, c, h + 2, wd + 2), dtype=cols.dtype)
    t = 0
    for di in range(3):
        for dj in range(3):
            g_pad[:, :, di:di + h, dj:dj + wd] += g_cols[:, :, t]
            t += 1
    return g_w, g_b, g_pad[:, :, 1:1 + h, 1:1 + wd]


def _avgpool2(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avgpool2_back(g: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
