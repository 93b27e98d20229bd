"""Experiment configuration: a documented key-value text format.

One ``key = value`` pair per line; ``#`` starts a comment; list values are
comma separated. Unknown keys are an error so typos cannot silently fall
back to defaults. The seed is mandatory: the engine never draws entropy
implicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


@dataclass
class ExperimentConfig:
    dataset: str = ""
    out: str = "runs/out"
    seed: int | None = None
    settings: list[str] = field(default_factory=lambda: ["baseline", "fp+fl"])
    oracle: str = "toy"
    epochs: int = 6
    batch_size: int = 32
    eval_min_images: int = 64
    bootstrap: int = 1000
    metrics: list[str] = field(
        default_factory=lambda: ["ad", "add", "dauc", "iauc", "dc", "ic", "dcnc", "icnc"])
    methods: list[str] = field(
        default_factory=lambda: ["cam", "gradcam", "ig", "occlusion"])
    benchsize_alpha_risk: float = 0.05
    benchsize_p_samp: float = 0.5
    benchsize_mode: str = "binary"
    rise_masks: int = 1000
    rise_keep_prob: float = 0.5
    ig_steps: int = 32
    smoothgrad_samples: int = 30
    smoothgrad_sigma: float = 0.1
    calib_bins: int = 15
    interp_epochs: int = 2
    interp_betas: list[float] = field(
        default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    threads: int = 1
    deletion_order: str = "most"

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValueError("seed is mandatory; set it in the config or with --seed")
        return int(self.seed)

    def out_dir(self) -> Path:
        return Path(self.out)


_LIST_STR = {"settings", "metrics", "methods"}
_LIST_FLOAT = {"interp_betas"}
_INT = {"seed", "epochs", "batch_size", "eval_min_images", "bootstrap",
        "rise_masks", "ig_steps", "smoothgrad_samples", "calib_bins",
        "interp_epochs", "threads"}
_FLOAT = {"benchsize_alpha_risk", "benchsize_p_samp", "rise_keep_prob",
          "smoothgrad_sigma"}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in _LIST_STR:
            parsed = [v.strip() for v in value.split(",") if v.strip()]
        elif key in _LIST_FLOAT:
            parsed = [float(v) for v in value.split(",") if v.strip()]
        elif key in _INT:
            parsed = int(value)
        elif key in _FLOAT:
            parsed = float(value)
        else:
            parsed = value
        setattr(cfg, key, parsed)
    return cfg


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)
