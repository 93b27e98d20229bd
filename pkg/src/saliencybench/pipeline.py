"""Experiment stages: train, explain, score, rank, agree, compare, size.

Every stage is a pure function of (config, seed, inputs on disk) and
writes deterministic artifacts (no timestamps, repr'd floats), so a rerun
with the same config reproduces every output byte for byte.

Seed tree: the experiment seed owns children keyed by stage constants,
which own per-setting, per-image or per-iteration children. Nothing draws
from a shared stream, so thread counts and stage order cannot change any
result.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import benchsize as bs
from .calib import CalibReport, eval_regular_vs_fp
from .config import ExperimentConfig
from .dataset import DatasetManifest, load_manifest, select_eval_subset
from .errors import EngineError, NoGradient, TiedBest
from .metrics import (
    ALL_METRICS,
    MetricKind,
    ScoreMatrix,
    evaluate_matrices,
    load_matrix_csv,
    save_matrix_csv,
)
from .oracles import BridgeOracle, ScoringOracle, ToyNetOracle
from .perturb import BlurSpec, PatchGrid, sample_fp_batch
from .rng import Rng
from .saliency import (
    cam,
    grad_cam,
    integrated_gradients,
    occlusion,
    rise,
    smoothgrad,
)
from .stats import AlphaReport, RankMatrix, compare_settings, make_alpha_report, rank_rows
from .tensorio import Tensor, load_tensor, save_tensor
from .toynet import (
    SgdOptimizer,
    ToyNet,
    TrainingSetting,
    load_checkpoint,
    parse_setting,
    proxy_saliencies,
    save_checkpoint,
    train_interp_step,
    train_step,
)

# seed-tree keys, one per stage
KEY_TRAIN = 101
KEY_SUBSET = 102
KEY_EXPLAIN = 103
KEY_METRICS = 104
KEY_ALPHA = 105
KEY_BENCH = 106
KEY_CALIB = 107
KEY_INTERP = 108

GRADIENT_METHODS = {"cam", "gradcam", "ig", "smoothgrad"}


def _setting_key(setting: TrainingSetting) -> int:
    return 4 * int(setting.fp) + 2 * int(setting.ap) + int(setting.fl)


@dataclass
class TrainResult:
    checkpoint: Path
    holdout_accuracy: float
    final_losses: dict[str, float]


def _splits(manifest: DatasetManifest) -> tuple[list[int], list[int]]:
    """Deterministic 80/20 split: every fifth image is held out."""
    train = [i for i in range(len(manifest.entries)) if i % 5 != 4]
    hold = [i for i in range(len(manifest.entries)) if i % 5 == 4]
    return train, hold


def train_setting(cfg: ExperimentConfig, setting: TrainingSetting,
                  manifest: DatasetManifest) -> TrainResult:
    seed = cfg.require_seed()
    rng = Rng(seed).child(KEY_TRAIN).child(_setting_key(setting))
    train_idx, hold_idx = _splits(manifest)
    images = np.stack([manifest.load_image(i).transpose(2, 0, 1) for i in train_idx])
    labels = manifest.labels()[train_idx]
    hold_images = np.stack([manifest.load_image(i).transpose(2, 0, 1) for i in hold_idx])
    hold_labels = manifest.labels()[hold_idx]

    size = images.shape[2]
    net = ToyNet.init(seed=rng.child(0).next_u64(), num_classes=manifest.class_count,
                      in_channels=images.shape[1], input_size=size)
    opt = SgdOptimizer()
    blur = BlurSpec.for_size(size)
    losses: dict[str, float] = {}
    for epoch in range(cfg.epochs):
        ep_rng = rng.child(1 + epoch)
        order = list(range(len(images)))
        ep_rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            losses = train_step(net, images[batch], labels[batch], setting,
                                ep_rng.child(start), opt, blur)
    probs = net.probs_batch(hold_images)
    acc = float((probs.argmax(axis=1) == hold_labels).mean())

    out = cfg.out_dir() / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{setting.name.replace('+', '_')}.tnsb"
    save_checkpoint(net, path)
    return TrainResult(path, acc, losses)


def checkpoint_path(cfg: ExperimentConfig, setting: TrainingSetting) -> Path:
    return cfg.out_dir() / "checkpoints" / f"{setting.name.replace('+', '_')}.tnsb"


def open_eval_oracle(cfg: ExperimentConfig, setting: TrainingSetting) -> ScoringOracle:
    if cfg.oracle == "toy":
        return ToyNetOracle(load_checkpoint(checkpoint_path(cfg, setting)))
    if cfg.oracle.startswith("bridge:"):
        return BridgeOracle(cfg.oracle[len("bridge:"):])
    raise ValueError(f"unknown oracle spec {cfg.oracle!r}")


def eval_subset(cfg: ExperimentConfig, manifest: DatasetManifest) -> list[int]:
    rng = Rng(cfg.require_seed()).child(KEY_SUBSET)
    return select_eval_subset(manifest, cfg.eval_min_images, rng)


def _subset_arrays(manifest: DatasetManifest, subset: list[int]):
    images = [manifest.load_image(i) for i in subset]
    labels = [int(manifest.labels()[i]) for i in subset]
    ids = [f"{i:05d}" for i in subset]
    return images, labels, ids


def compute_map(method: str, oracle: ScoringOracle, image: np.ndarray,
                label: int, grid: PatchGrid, rng: Rng, cfg: ExperimentConfig) -> np.ndarray:
    if method in GRADIENT_METHODS and not isinstance(oracle, ToyNetOracle):
        raise NoGradient(f"method {method!r} needs the in-process toy oracle")
    if method == "cam":
        return cam(oracle.net, image, label)
    if method == "gradcam":
        return grad_cam(oracle.net, image, label)
    if method == "ig":
        return integrated_gradients(oracle, image, label, grid, steps=cfg.ig_steps)
    if method == "smoothgrad":
        return smoothgrad(oracle, image, label, grid, rng,
                          samples=cfg.smoothgrad_samples, sigma=cfg.smoothgrad_sigma)
    if method == "occlusion":
        return occlusion(oracle, image, label, grid)
    if method == "rise":
        return rise(oracle, image, label, grid, rng, masks=cfg.rise_masks,
                    keep_prob=cfg.rise_keep_prob)
    raise ValueError(f"unknown method {method!r}")


def _grid_for(cfg: ExperimentConfig, oracle: ScoringOracle, image: np.ndarray) -> PatchGrid:
    if isinstance(oracle, ToyNetOracle):
        g = oracle.net.grid_size
    else:
        g = 8
    return PatchGrid(g, g, image.shape[0], image.shape[1])


def explain_stage(cfg: ExperimentConfig, setting: TrainingSetting,
                  manifest: DatasetManifest) -> Path:
    """Compute and store every method's map for every evaluation image."""
    seed = cfg.require_seed()
    subset = eval_subset(cfg, manifest)
    images, labels, ids = _subset_arrays(manifest, subset)
    oracle = open_eval_oracle(cfg, setting)
    grid = _grid_for(cfg, oracle, images[0])
    base = cfg.out_dir() / "maps" / setting.name.replace("+", "_")
    rng = Rng(seed).child(KEY_EXPLAIN).child(_setting_key(setting))
    for m_idx, method in enumerate(cfg.methods):
        mdir = base / method
        mdir.mkdir(parents=True, exist_ok=True)
        for i, (img, label) in enumerate(zip(images, labels)):
            child = rng.child(m_idx).child(i)
            s = compute_map(method, oracle, img, label, grid, child, cfg)
            save_tensor(Tensor.from_array(s), mdir / f"{ids[i]}.tnsr")
    with open(base / "subset.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "index", "label"])
        for i, idx in enumerate(subset):
            writer.writerow([ids[i], idx, labels[i]])
    oracle.close()
    return base


def load_maps(cfg: ExperimentConfig, setting: TrainingSetting,
              ids: list[str]) -> list[tuple[str, list[np.ndarray]]]:
    base = cfg.out_dir() / "maps" / setting.name.replace("+", "_")
    out = []
    for method in cfg.methods:
        maps = [load_tensor(base / method / f"{i}.tnsr").to_array() for i in ids]
        out.append((method, maps))
    return out


def faithfulness_stage(cfg: ExperimentConfig, setting: TrainingSetting,
                       manifest: DatasetManifest) -> dict[MetricKind, ScoreMatrix]:
    subset = eval_subset(cfg, manifest)
    images, labels, ids = _subset_arrays(manifest, subset)
    methods = load_maps(cfg, setting, ids)
    oracle = open_eval_oracle(cfg, setting)
    grid = _grid_for(cfg, oracle, images[0])
    kinds = [MetricKind(m) for m in cfg.metrics]
    blur = BlurSpec.for_size(max(images[0].shape[0], images[0].shape[1]))
    mats = evaluate_matrices(oracle, images, labels, methods, grid, kinds, blur,
                             ids, cfg.deletion_order, cfg.threads)
    oracle.close()
    out = cfg.out_dir() / "scores" / setting.name.replace("+", "_")
    out.mkdir(parents=True, exist_ok=True)
    for kind, mat in mats.items():
        save_matrix_csv(mat, out / f"{kind.value}.csv")
    return mats


def load_scores(cfg: ExperimentConfig, setting: TrainingSetting) -> dict[MetricKind, ScoreMatrix]:
    out = cfg.out_dir() / "scores" / setting.name.replace("+", "_")
    return {MetricKind(m): load_matrix_csv(out / f"{m}.csv") for m in cfg.metrics}


def save_rank_csv(ranks: RankMatrix, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "method", "metric", "rank"])
        for i, image_id in enumerate(ranks.image_ids):
            for m, label in enumerate(ranks.method_labels):
                writer.writerow([image_id, label, ranks.kind.value,
                                 repr(float(ranks.values[i, m]))])


def alpha_stage(cfg: ExperimentConfig, setting: TrainingSetting,
                scores: dict[MetricKind, ScoreMatrix] | None = None,
                ) -> dict[MetricKind, AlphaReport]:
    seed = cfg.require_seed()
    scores = scores or load_scores(cfg, setting)
    rank_dir = cfg.out_dir() / "ranks" / setting.name.replace("+", "_")
    alpha_dir = cfg.out_dir() / "alpha" / setting.name.replace("+", "_")
    rank_dir.mkdir(parents=True, exist_ok=True)
    alpha_dir.mkdir(parents=True, exist_ok=True)
    reports = {}
    hist_dir = cfg.out_dir() / "rank_hist" / setting.name.replace("+", "_")
    hist_dir.mkdir(parents=True, exist_ok=True)
    for kind, matrix in scores.items():
        ranks = rank_rows(matrix)
        save_rank_csv(ranks, rank_dir / f"{kind.value}.csv")
        rng = Rng(seed).child(KEY_ALPHA).child(_setting_key(setting)).child(
            list(MetricKind).index(kind))
        report = make_alpha_report(ranks, cfg.bootstrap, rng)
        report.save(alpha_dir / f"{kind.value}.json")
        _save_rank_histogram(ranks, hist_dir / f"{kind.value}.csv")
        reports[kind] = report
    return reports


def _save_rank_histogram(ranks: RankMatrix, path: Path) -> None:
    """Fraction of images placing each method at each integer position."""
    values = ranks.values
    n, m = values.shape
    counts = np.zeros((m, m), dtype=np.int64)
    for row in values:
        for position, method in enumerate(np.argsort(row, kind="stable")):
            counts[method, position] += 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "position", "fraction"])
        for mi, label in enumerate(ranks.method_labels):
            for pos in range(m):
                writer.writerow([label, pos + 1, repr(float(counts[mi, pos] / n))])


def wins_from_ranks(ranks: RankMatrix) -> bs.WinCounts:
    """First-place counts per method; rank ties go to the lowest index."""
    winners = np.argmin(ranks.values, axis=1)
    counts = np.bincount(winners, minlength=ranks.values.shape[1])
    return bs.WinCounts.from_sequence(counts)


def benchsize_stage(cfg: ExperimentConfig, setting: TrainingSetting) -> dict[str, dict]:
    out = cfg.out_dir() / "benchsize" / setting.name.replace("+", "_")
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for metric in cfg.metrics:
        kind = MetricKind(metric)
        matrix = load_matrix_csv(cfg.out_dir() / "scores" /
                                 setting.name.replace("+", "_") / f"{metric}.csv")
        ranks = rank_rows(matrix)
        counts = wins_from_ranks(ranks)
        try:
            result = bs.min_benchmark_size(counts, cfg.benchsize_alpha_risk,
                                           cfg.benchsize_p_samp, cfg.benchsize_mode)
            payload = json.loads(result.to_json())
            payload["counts"] = list(counts.counts)
            result.save_curve_csv(out / f"{metric}_curve.csv")
        except (TiedBest, bs.NoSolution) as exc:
            payload = {"error": type(exc).__name__, "message": str(exc),
                       "counts": list(counts.counts)}
        (out / f"{metric}.json").write_text(json.dumps(payload, indent=1),
                                            encoding="utf-8")
        summary[metric] = payload
    return summary


def calib_stage(cfg: ExperimentConfig, setting: TrainingSetting,
                manifest: DatasetManifest) -> CalibReport:
    seed = cfg.require_seed()
    subset = eval_subset(cfg, manifest)
    images, labels, _ = _subset_arrays(manifest, subset)
    oracle = open_eval_oracle(cfg, setting)
    if not isinstance(oracle, ToyNetOracle):
        raise EngineError("calibration stage needs the in-process toy oracle")
    net = oracle.net
    blur = BlurSpec.for_size(images[0].shape[0])

    def fp_sampler(imgs, rng):
        x = np.stack([im.transpose(2, 0, 1) for im in imgs])
        out, _ = sample_fp_batch(list(imgs), proxy_saliencies(net, x), rng, blur)
        return out

    rng = Rng(seed).child(KEY_CALIB).child(_setting_key(setting))
    report = eval_regular_vs_fp(oracle, images, labels, fp_sampler, rng, cfg.calib_bins)
    oracle.close()
    out = cfg.out_dir() / "calib"
    out.mkdir(parents=True, exist_ok=True)
    report.save_csv(out / f"{setting.name.replace('+', '_')}.csv", setting.name)
    return report


def compare_stage(cfg: ExperimentConfig) -> Path:
    """Delta-alpha table of every candidate setting against the baseline."""
    settings = [parse_setting(s) for s in cfg.settings]
    baseline, candidates = settings[0], settings[1:]
    alpha_root = cfg.out_dir() / "alpha"

    def load_report(setting: TrainingSetting, metric: str) -> AlphaReport:
        return AlphaReport.load(alpha_root / setting.name.replace("+", "_") /
                                f"{metric}.json")

    out = cfg.out_dir() / "compare"
    out.mkdir(parents=True, exist_ok=True)
    heatmap_rows = []
    for metric in cfg.metrics:
        base_report = load_report(baseline, metric)
        row: dict[str, str] = {"metric": metric}
        for cand in candidates:
            cand_report = load_report(cand, metric)
            cmp = compare_settings(base_report, cand_report)
            cand_report.delta_vs_baseline = cmp.delta
            cand_report.p_value = cmp.p_value
            cand_report.test_name = cmp.test_name
            cand_report.significant = cmp.significant
            cand_report.save(alpha_root / cand.name.replace("+", "_") / f"{metric}.json")
            (out / f"{metric}_{cand.name.replace('+', '_')}.json").write_text(
                json.dumps({
                    "metric": metric,
                    "baseline": baseline.name,
                    "candidate": cand.name,
                    "delta_x100": round(cmp.delta * 100, 6),
                    "baseline_mean_x100": round(cmp.baseline_mean * 100, 6),
                    "candidate_mean_x100": round(cmp.candidate_mean * 100, 6),
                    "p_value": cmp.p_value,
                    "test": cmp.test_name,
                    "significant": cmp.significant,
                    "rendered": cmp.render(),
                }, indent=1), encoding="utf-8")
            # heatmap cell: delta / baseline -> candidate, all x100
            row[cand.name] = (f"{cmp.delta * 100:.1f} / {cmp.baseline_mean * 100:.1f} "
                              f"→ {cmp.candidate_mean * 100:.1f}")
        heatmap_rows.append(row)
    heatmap = out / "heatmap.csv"
    with open(heatmap, "w", newline="", encoding="utf-8") as fh:
        names = ["metric"] + [c.name for c in candidates]
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        writer.writerows(heatmap_rows)
    return heatmap


def interp_stage(cfg: ExperimentConfig, manifest: DatasetManifest) -> Path:
    """Train at each interpolation coefficient and track alpha per metric."""
    seed = cfg.require_seed()
    train_idx, _ = _splits(manifest)
    images = np.stack([manifest.load_image(i).transpose(2, 0, 1) for i in train_idx])
    labels = manifest.labels()[train_idx]
    size = images.shape[2]
    blur = BlurSpec.for_size(size)
    subset = eval_subset(cfg, manifest)
    eval_images, eval_labels, ids = _subset_arrays(manifest, subset)

    out = cfg.out_dir() / "interp"
    out.mkdir(parents=True, exist_ok=True)
    rows: dict[str, list] = {m: [] for m in cfg.metrics}
    for b_idx, beta in enumerate(cfg.interp_betas):
        rng = Rng(seed).child(KEY_INTERP).child(b_idx)
        net = ToyNet.init(seed=rng.child(0).next_u64(),
                          num_classes=manifest.class_count,
                          in_channels=images.shape[1], input_size=size)
        opt = SgdOptimizer()
        for epoch in range(cfg.interp_epochs):
            ep_rng = rng.child(1 + epoch)
            order = list(range(len(images)))
            ep_rng.shuffle(order)
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                train_interp_step(net, images[batch], labels[batch],
                                  ep_rng.child(start), beta, opt, blur)
        oracle = ToyNetOracle(net)
        grid = _grid_for(cfg, oracle, eval_images[0])
        methods = []
        for m_idx, method in enumerate(cfg.methods):
            maps = []
            for i, (img, label) in enumerate(zip(eval_images, eval_labels)):
                child = rng.child(1000 + m_idx).child(i)
                maps.append(compute_map(method, oracle, img, label, grid, child, cfg))
            methods.append((method, maps))
        kinds = [MetricKind(m) for m in cfg.metrics]
        mats = evaluate_matrices(oracle, eval_images, eval_labels, methods, grid,
                                 kinds, blur, ids, cfg.deletion_order, cfg.threads)
        for kind, mat in mats.items():
            ranks = rank_rows(mat)
            report = make_alpha_report(ranks, cfg.bootstrap,
                                       rng.child(2000 + list(MetricKind).index(kind)))
            rows[kind.value].append((beta, report.mean, report.ci_low, report.ci_high))
    for metric, data in rows.items():
        with open(out / f"{metric}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta", "alpha_mean", "ci_low", "ci_high"])
            for beta, mean, lo, hi in data:
                writer.writerow([beta, repr(mean), repr(lo), repr(hi)])
    return out


def run_pipeline(cfg: ExperimentConfig) -> dict:
    """Full workflow: train settings, explain, score, rank, agree, compare."""
    manifest = load_manifest(Path(cfg.dataset))
    settings = [parse_setting(s) for s in cfg.settings]
    summary: dict = {"settings": {}, "stages": []}
    for setting in settings:
        result = train_setting(cfg, setting, manifest)
        summary["settings"][setting.name] = {
            "checkpoint": str(result.checkpoint.relative_to(cfg.out_dir())),
            "holdout_accuracy": result.holdout_accuracy,
        }
    summary["stages"].append("train")
    for setting in settings:
        explain_stage(cfg, setting, manifest)
    summary["stages"].append("explain")
    for setting in settings:
        faithfulness_stage(cfg, setting, manifest)
    summary["stages"].append("faithfulness")
    for setting in settings:
        alpha_stage(cfg, setting)
    summary["stages"].append("alpha")
    compare_stage(cfg)
    summary["stages"].append("compare")
    for setting in settings:
        benchsize_stage(cfg, setting)
    summary["stages"].append("benchsize")
    for setting in settings:
        report = calib_stage(cfg, setting, manifest)
        summary["settings"][setting.name]["calibration"] = {
            "regular_ece": report.regular_ece, "fp_ece": report.fp_ece,
            "regular_acc": report.regular_acc, "fp_acc": report.fp_acc,
        }
    summary["stages"].append("calib")
    (cfg.out_dir() / "summary.json").write_text(json.dumps(summary, indent=1),
                                                encoding="utf-8")
    return summary
