"""Flat key=value run configuration with typed schema and overrides.

Config files contain one ``key = value`` assignment per line; ``#`` starts
a comment. Unknown keys are rejected. Command-line ``--set key=value``
overrides are applied after the file. Every command writes the fully
resolved configuration back into its output directory so any run can be
reproduced from its snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .pipeline import TrainConfig
from .rois import RoiId


class ConfigError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    norm = text.strip().lower()
    if norm in ("true", "1", "yes", "on"):
        return True
    if norm in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


SCHEMA: dict[str, _Key] = {
    # Shared I/O
    "data": _Key(str, "", "dataset root directory"),
    "checkpoint": _Key(str, "", "checkpoint path (empty = random weights)"),
    "predictions": _Key(str, "", "predictions CSV for the evaluate command"),
    "runs": _Key(str, "", "comma-separated metrics.json paths for report"),
    # Synthesis
    "n_subjects": _Key(int, 25, "synthetic subjects"),
    "clips_per_subject": _Key(int, 10, "clips per synthetic subject"),
    "scene_size": _Key(int, 64, "synthetic frame height/width"),
    "scene_frames": _Key(int, 150, "frames per synthetic clip"),
    "fps": _Key(float, 30.0, "synthetic frame rate"),
    "hr_min": _Key(float, 40.0, "lower heart-rate bound (bpm)"),
    "hr_max": _Key(float, 160.0, "upper heart-rate bound (bpm)"),
    "noise_sigma": _Key(float, 0.02, "sensor noise std"),
    "background_sigma": _Key(float, 0.01, "background noise std"),
    "pulse_shape": _Key(str, "sinusoid", "sinusoid | sinusoid_plus_harmonic"),
    "flicker_amplitude": _Key(float, 0.0, "ambient light flicker amplitude"),
    "flicker_freq_hz": _Key(float, 0.45, "ambient light flicker frequency"),
    "motion_amplitude": _Key(float, 0.0, "specular motion amplitude"),
    "motion_freq_hz": _Key(float, 0.25, "specular motion frequency"),
    "shading_strength": _Key(float, 0.0, "static facial shading strength"),
    "synth_seed": _Key(int, 0, "dataset synthesis seed"),
    # Augmentation
    "strides": _Key(_parse_int_list, (1, 2, 3, 4, 5), "temporal stride list"),
    "rois": _Key(_parse_int_list, tuple(int(r) for r in RoiId), "ROI index list"),
    "clip_len": _Key(int, 30, "frames per augmented view"),
    "frame_size": _Key(int, 64, "height/width of augmented views"),
    # Pretraining
    "variant": _Key(str, "full", "encoder variant: full | tiny"),
    "tau": _Key(float, 1.0, "contrastive temperature"),
    "mlp_dim": _Key(int, 2048, "projection head output dimension"),
    "lr": _Key(float, 1e-4, "pretraining learning rate"),
    "batch_size": _Key(int, 128, "videos per pretraining batch"),
    "epochs": _Key(int, 150, "pretraining epochs"),
    "use_pseudo_labels": _Key(_parse_bool, True, "add the pseudo-label losses"),
    "hr_max_bpm": _Key(float, 160.0, "Nyquist bound for stride validation"),
    "seed": _Key(int, 0, "training seed"),
    "deterministic": _Key(_parse_bool, True, "single-worker deterministic execution"),
    # Evaluation protocols
    "test_fraction": _Key(float, 0.2, "fraction of subjects held out"),
    "split_seed": _Key(int, 0, "subject split seed"),
    "eval_stride": _Key(int, 2, "stride of the deterministic eval view"),
    "eval_len": _Key(int, 0, "frames per eval view (0 = clip_len)"),
    "eval_roi": _Key(int, int(RoiId.WHOLE_FACE), "ROI of the eval view"),
    "eval_lr": _Key(float, 5e-3, "linear-probe learning rate"),
    "eval_epochs": _Key(int, 200, "linear-probe epochs"),
    "eval_batch": _Key(int, 32, "linear-probe batch size"),
    "finetune_lr": _Key(float, 1e-4, "fine-tuning learning rate"),
    "finetune_epochs": _Key(int, 100, "fine-tuning epochs"),
    "finetune_batch": _Key(int, 64, "fine-tuning batch size"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = SCHEMA[key].parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def resolve(
    config_path: str | Path | None, overrides: list[str] | None = None
) -> dict[str, Any]:
    """File values over defaults, then --set overrides over the file."""
    values = {key: spec.default for key, spec in SCHEMA.items()}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = SCHEMA[key].parse(value.strip())
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return values


def snapshot(values: dict[str, Any], out_dir: str | Path) -> Path:
    """Write the resolved configuration for reproducibility."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for key in SCHEMA:
        value = values[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    path = out_dir / "resolved_config.cfg"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def train_config(values: dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(
            tau=values["tau"],
            mlp_dim=values["mlp_dim"],
            lr=values["lr"],
            batch_size=values["batch_size"],
            epochs=values["epochs"],
            strides=values["strides"],
            rois=tuple(RoiId(r) for r in values["rois"]),
            clip_len=values["clip_len"],
            frame_size=values["frame_size"],
            variant=values["variant"],
            use_pseudo_labels=values["use_pseudo_labels"],
            hr_max_bpm=values["hr_max_bpm"],
            seed=values["seed"],
            deterministic=values["deterministic"],
            eval_stride=values["eval_stride"],
            eval_len=values["eval_len"],
            eval_roi=RoiId(values["eval_roi"]),
            eval_lr=values["eval_lr"],
            eval_epochs=values["eval_epochs"],
            eval_batch=values["eval_batch"],
            finetune_lr=values["finetune_lr"],
            finetune_epochs=values["finetune_epochs"],
            finetune_batch=values["finetune_batch"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
