"""Command-line surface. Exit codes: 0 ok, 1 user error, 2 internal error."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .benchsize import WinCounts, min_benchmark_size
from .config import ExperimentConfig, load_config
from .dataset import generate_synthetic_dataset, load_manifest
from .errors import EngineError
from .pipeline import (
    alpha_stage,
    benchsize_stage,
    calib_stage,
    compare_stage,
    explain_stage,
    faithfulness_stage,
    interp_stage,
    run_pipeline,
    train_setting,
)
from .toynet import parse_setting


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    """Bad arguments or missing required inputs; maps to exit code 1."""


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="experiment seed (mandatory)")
    p.add_argument("--dataset", help="path to manifest.csv")
    p.add_argument("--out", help="output directory")
    p.add_argument("--setting", help="training setting, e.g. baseline or fp+fl")
    p.add_argument("--oracle", help="toy | bridge:<command line>")
    p.add_argument("--threads", type=int, help="worker cap for parallel stages")
    p.add_argument("--epochs", type=int, help="training epochs")


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    for key in ("seed", "dataset", "out", "oracle", "threads", "epochs"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "setting", None):
        if args.cmd in ("pipeline", "compare"):
            base = cfg.settings[0] if cfg.settings else "baseline"
            cfg.settings = [base, args.setting]
        else:
            cfg.settings = [args.setting]
    return cfg


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saliencybench",
                     description="benchmark-reliability engine for saliency explanations")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate the synthetic TNSR dataset")
    p.add_argument("--total", type=int, default=2000)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=int, default=3)
    _add_common(p)

    for name, help_text in [
        ("train", "train one setting, write its checkpoint"),
        ("explain", "compute saliency maps for the evaluation subset"),
        ("faithfulness", "score maps with the configured metrics"),
        ("alpha", "rank rows and compute bootstrap agreement reports"),
        ("compare", "delta-alpha of candidates against the baseline"),
        ("benchsize", "minimum benchmark size per metric"),
        ("calib", "accuracy and AdaECE on regular vs FP images"),
        ("interp", "train across interpolation coefficients, track alpha"),
        ("report", "collect produced artifacts into a report index"),
        ("pipeline", "run every stage end to end"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


def _settings(cfg: ExperimentConfig):
    return [parse_setting(s) for s in cfg.settings]


def run(argv: list[str]) -> int:
    args = make_parser().parse_args(argv)
    cfg = _build_config(args)

    if args.cmd == "synth":
        if cfg.seed is None:
            raise UsageError("--seed is required")
        target = Path(cfg.dataset or (cfg.out_dir() / "dataset"))
        manifest = generate_synthetic_dataset(target, args.total, args.classes,
                                              args.size, args.channels,
                                              cfg.require_seed())
        print(f"wrote {len(manifest.entries)} images to {target}")
        return 0

    if args.cmd == "train":
        manifest = load_manifest(Path(cfg.dataset))
        for setting in _settings(cfg):
            result = train_setting(cfg, setting, manifest)
            print(f"{setting.name}: checkpoint {result.checkpoint} "
                  f"holdout accuracy {result.holdout_accuracy:.4f}")
        return 0

    if args.cmd == "explain":
        manifest = load_manifest(Path(cfg.dataset))
        for setting in _settings(cfg):
            base = explain_stage(cfg, setting, manifest)
            print(f"{setting.name}: maps under {base}")
        return 0

    if args.cmd == "faithfulness":
        manifest = load_manifest(Path(cfg.dataset))
        for setting in _settings(cfg):
            mats = faithfulness_stage(cfg, setting, manifest)
            print(f"{setting.name}: {len(mats)} score matrices written")
        return 0

    if args.cmd == "alpha":
        for setting in _settings(cfg):
            reports = alpha_stage(cfg, setting)
            for kind, report in reports.items():
                print(f"{setting.name} {kind.value}: alpha={report.alpha:.4f} "
                      f"mean={report.mean:.4f} "
                      f"ci=[{report.ci_low:.4f}, {report.ci_high:.4f}]")
        return 0

    if args.cmd == "compare":
        heatmap = compare_stage(cfg)
        print(f"heatmap written to {heatmap}")
        print(heatmap.read_text(encoding="utf-8"))
        return 0

    if args.cmd == "benchsize":
        for setting in _settings(cfg):
            summary = benchsize_stage(cfg, setting)
            for metric, payload in summary.items():
                if "error" in payload:
                    print(f"{setting.name} {metric}: {payload['error']}")
                else:
                    print(f"{setting.name} {metric}: N*={payload['n_star']} "
                          f"r={payload['ratio']:.3f}")
        return 0

    if args.cmd == "calib":
        manifest = load_manifest(Path(cfg.dataset))
        for setting in _settings(cfg):
            report = calib_stage(cfg, setting, manifest)
            print(f"{setting.name}: regular acc {report.regular_acc:.3f} "
                  f"ece {report.regular_ece:.4f} | fp acc {report.fp_acc:.3f} "
                  f"ece {report.fp_ece:.4f}")
        return 0

    if args.cmd == "interp":
        manifest = load_manifest(Path(cfg.dataset))
        out = interp_stage(cfg, manifest)
        print(f"interpolation sweep written under {out}")
        return 0

    if args.cmd == "report":
        out = cfg.out_dir()
        files = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                       if p.is_file() and p.name != "report.json")
        (out / "report.json").write_text(json.dumps({"artifacts": files}, indent=1),
                                         encoding="utf-8")
        print(f"{len(files)} artifacts indexed in {out / 'report.json'}")
        return 0

    if args.cmd == "pipeline":
        summary = run_pipeline(cfg)
        print(json.dumps(summary, indent=1))
        return 0

    raise UsageError(f"unknown command {args.cmd!r}")


def solve_benchsize_counts(counts: list[int], alpha_risk: float, p_samp: float,
                           mode: str) -> str:
    """Helper for scripting: solve directly from win counts, emit JSON."""
    result = min_benchmark_size(WinCounts.from_sequence(counts), alpha_risk,
                                p_samp, mode)
    return result.to_json()


def main() -> None:
    try:
        raise SystemExit(run(sys.argv[1:]))
    except SystemExit:
        raise
    except (UsageError, EngineError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1) from exc
    except Exception as exc:  # noqa: BLE001 - report and exit 2 per contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        raise SystemExit(2) from exc


if __name__ == "__main__":
    main()
