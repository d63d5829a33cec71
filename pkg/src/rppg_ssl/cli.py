"""Command-line interface tying the toolkit into reproducible runs.

Commands::

    synth        generate a synthetic labelled dataset
    pretrain     self-supervised pretraining -> checkpoint + training log
    linear-eval  frozen-encoder linear probe -> metrics.json
    finetune     end-to-end fine-tuning -> metrics.json
    evaluate     metrics from a predictions CSV
    report       text + plot summary across runs

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import config as cfg
from . import dataio, drm, pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

COMMANDS = ("synth", "pretrain", "linear-eval", "finetune", "evaluate", "report")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rppg-ssl",
        description="Self-supervised remote-photoplethysmography toolkit",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument(
        "--output-dir", required=True, help="directory for all run outputs"
    )
    return parser


def _require(values: dict, key: str, command: str) -> str:
    if not values[key]:
        raise cfg.ConfigError(f"{command} requires the {key!r} config key")
    return values[key]


def _cmd_synth(values: dict, out_dir: Path) -> int:
    scene = drm.SyntheticScene(
        frame_size=values["scene_size"],
        fps=values["fps"],
        n_frames=values["scene_frames"],
        background_sigma=values["background_sigma"],
        shading_strength=values["shading_strength"],
    )
    items = drm.synthesize_dataset(
        values["n_subjects"],
        values["clips_per_subject"],
        scene,
        hr_range_bpm=(values["hr_min"], values["hr_max"]),
        noise_sigma=values["noise_sigma"],
        pulse_shape=drm.PulseShape(values["pulse_shape"]),
        flicker_amplitude=values["flicker_amplitude"],
        flicker_freq_hz=values["flicker_freq_hz"],
        motion_amplitude=values["motion_amplitude"],
        motion_freq_hz=values["motion_freq_hz"],
        seed=values["synth_seed"],
    )
    dataio.write_dataset(items, out_dir)
    n = len(dataio.DatasetIndex(out_dir))
    print(f"wrote {n} clips to {out_dir}")
    return EXIT_OK


def _split(index: dataio.DatasetIndex, values: dict) -> dataio.SplitSpec:
    return dataio.subject_exclusive_split(
        index.labels.values(), values["test_fraction"], values["split_seed"]
    )


def _cmd_pretrain(values: dict, out_dir: Path) -> int:
    index = dataio.DatasetIndex(_require(values, "data", "pretrain"))
    train_config = cfg.train_config(values)
    ckpt = pipeline.pretrain(train_config, index, out_dir)
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def _cmd_eval(values: dict, out_dir: Path, finetune: bool) -> int:
    command = "finetune" if finetune else "linear-eval"
    index = dataio.DatasetIndex(_require(values, "data", command))
    train_config = cfg.train_config(values)
    checkpoint = values["checkpoint"] or None
    if checkpoint and not Path(checkpoint).exists():
        raise dataio.DatasetError(f"checkpoint not found: {checkpoint}")
    split = _split(index, values)
    runner = pipeline.finetune if finetune else pipeline.linear_eval
    report = runner(checkpoint, index, split, train_config, out_dir)
    print(report.to_json())
    return EXIT_OK


def _cmd_evaluate(values: dict, out_dir: Path) -> int:
    path = Path(_require(values, "predictions", "evaluate"))
    if not path.exists():
        raise dataio.DatasetError(f"predictions file not found: {path}")
    preds, truths = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["clip_id", "pred_bpm", "true_bpm"]:
            raise dataio.DatasetError(
                f"predictions CSV must have header clip_id,pred_bpm,true_bpm, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            try:
                preds.append(float(row["pred_bpm"]))
                truths.append(float(row["true_bpm"]))
            except (TypeError, ValueError) as exc:
                raise dataio.DatasetError(f"bad predictions row {row}") from exc
    if not preds:
        raise dataio.DatasetError(f"no prediction rows in {path}")
    report = pipeline.compute_metrics(preds, truths)
    (out_dir / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    print(report.to_json())
    return EXIT_OK


def _cmd_report(values: dict, out_dir: Path) -> int:
    paths = [p.strip() for p in values["runs"].split(",") if p.strip()]
    if not paths:
        raise cfg.ConfigError("report requires the 'runs' config key")
    runs = []
    for p in paths:
        path = Path(p)
        if not path.exists():
            raise dataio.DatasetError(f"metrics file not found: {path}")
        name = path.parent.name or path.stem
        runs.append((name, pipeline.MetricsReport.from_json(path.read_text("utf-8"))))

    lines = [f"{'run':<24} {'sd':>8} {'mae':>8} {'rmse':>8} {'r':>8} {'n':>6}"]
    for name, rep in runs:
        r_text = f"{rep.r:.3f}" if rep.r is not None else "n/a"
        lines.append(
            f"{name:<24} {rep.sd:>8.3f} {rep.mae:>8.3f} {rep.rmse:>8.3f} "
            f"{r_text:>8} {rep.n:>6d}"
        )
    text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics = ["sd", "mae", "rmse"]
    fig, ax = plt.subplots(figsize=(1.5 + 1.5 * len(runs), 4))
    width = 0.8 / len(metrics)
    for mi, metric in enumerate(metrics):
        xs = [i + mi * width for i in range(len(runs))]
        ys = [getattr(rep, metric) for _, rep in runs]
        ax.bar(xs, ys, width=width, label=metric.upper())
    ax.set_xticks([i + width for i in range(len(runs))])
    ax.set_xticklabels([name for name, _ in runs], rotation=20, ha="right")
    ax.set_ylabel("bpm")
    ax.set_title("Heart-rate estimation error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "report.png", dpi=120)
    plt.close(fig)
    return EXIT_OK


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    try:
        values = cfg.resolve(args.config, args.overrides)
        out_dir = Path(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.snapshot(values, out_dir)
        if args.command == "synth":
            return _cmd_synth(values, out_dir)
        if args.command == "pretrain":
            return _cmd_pretrain(values, out_dir)
        if args.command == "linear-eval":
            return _cmd_eval(values, out_dir, finetune=False)
        if args.command == "finetune":
            return _cmd_eval(values, out_dir, finetune=True)
        if args.command == "evaluate":
            return _cmd_evaluate(values, out_dir)
        return _cmd_report(values, out_dir)
    except cfg.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dataio.DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except pipeline.DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(run())
