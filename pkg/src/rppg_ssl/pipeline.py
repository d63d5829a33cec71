"""Pretraining loop, evaluation protocols and regression metrics.

Pretraining follows the two-view recipe: sample a batch of clips, draw two
spatiotemporal views of each, project everything, and minimise the sum of
the contrastive loss and the two pseudo-label cross entropies with Adam.

Two downstream protocols measure representation quality on heart-rate
regression, always under a subject-exclusive split:

* linear evaluation: the encoder is frozen (inference-mode normalisation,
  no gradients) and a single affine head is trained on the pooled
  features with an L1 loss;
* fine-tuning: the whole encoder plus a fresh affine head are trained,
  starting either from a checkpoint or from random weights.

Reported metrics are SD / MAE / RMSE of the prediction error and the
Pearson correlation between predictions and ground truth.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .augment import AugmentConfig, augment_pair, roi_crop, temporal_subsample
from .dataio import Clip, DatasetIndex, SplitSpec
from .encoder import (
    EncoderConfig,
    PretrainModel,
    load_checkpoint,
    model_from_checkpoint,
    parameter_digest,
    save_checkpoint,
)
from .losses import (
    EmbeddingBatch,
    PseudoLabelBatch,
    combined_loss,
    contrastive_loss,
    roi_ce,
    stride_ce,
)
from .rois import RoiId

TRAIN_LOG_HEADER = [
    "step",
    "epoch",
    "l_contrastive",
    "l_roi",
    "l_stride",
    "l_total",
    "lr",
    "wall_time_s",
]


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class MetricsReport:
    """Error statistics of predicted vs. true heart rate, in bpm."""

    sd: float
    mae: float
    rmse: float
    r: float | None
    n: int

    def to_dict(self) -> dict:
        return {"sd": self.sd, "mae": self.mae, "rmse": self.rmse, "r": self.r, "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        obj = json.loads(text)
        return cls(obj["sd"], obj["mae"], obj["rmse"], obj["r"], obj["n"])


def compute_metrics(pred: Sequence[float], truth: Sequence[float]) -> MetricsReport:
    """SD / MAE / RMSE of the error and Pearson R of (pred, truth)."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} truths")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    err = p - t
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    sd = float(np.std(err, ddof=1)) if p.size >= 2 else 0.0
    r = None
    if p.size >= 2 and np.ptp(p) > 0 and np.ptp(t) > 0:
        r = float(np.corrcoef(p, t)[0, 1])
    return MetricsReport(sd=sd, mae=mae, rmse=rmse, r=r, n=int(p.size))


@dataclass
class TrainConfig:
    """Hyper-parameters for pretraining and the evaluation protocols."""

    tau: float = 1.0
    mlp_dim: int = 2048
    lr: float = 1e-4
    batch_size: int = 128
    epochs: int = 150
    strides: tuple[int, ...] = (1, 2, 3, 4, 5)
    rois: tuple[RoiId, ...] = tuple(RoiId)
    clip_len: int = 30
    frame_size: int = 64
    variant: str = "full"
    use_pseudo_labels: bool = True
    hr_max_bpm: float = 160.0
    seed: int = 0
    deterministic: bool = True
    eval_stride: int = 2
    eval_len: int = 0  # frames per eval view; 0 means clip_len
    eval_roi: RoiId = RoiId.WHOLE_FACE
    eval_lr: float = 5e-3
    eval_epochs: int = 200
    eval_batch: int = 32
    finetune_lr: float = 1e-4
    finetune_epochs: int = 100
    finetune_batch: int = 64

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        self.rois = tuple(RoiId(r) for r in self.rois)
        self.eval_roi = RoiId(self.eval_roi)
        if not (self.tau > 0 and self.lr > 0 and self.eval_lr > 0 and self.finetune_lr > 0):
            raise ValueError("tau and learning rates must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2: contrastive training needs negatives")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eval_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("evaluation epoch counts must be >= 0")
        if self.eval_batch < 1 or self.finetune_batch < 1:
            raise ValueError("evaluation batch sizes must be >= 1")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")
        if self.eval_len < 0:
            raise ValueError("eval_len must be >= 0")
        if self.eval_len == 0:
            self.eval_len = self.clip_len
        if self.variant not in ("full", "tiny"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if self.mlp_dim < 1:
            raise ValueError("mlp_dim must be >= 1")

    def encoder_config(self) -> EncoderConfig:
        maker = EncoderConfig.full if self.variant == "full" else EncoderConfig.tiny
        return maker(
            projection_dim=self.mlp_dim,
            n_rois=len(self.rois),
            n_strides=len(self.strides),
        )

    def augment_config(self, fps: float) -> AugmentConfig:
        return AugmentConfig(
            strides=self.strides,
            rois=self.rois,
            clip_len=self.clip_len,
            frame_size=self.frame_size,
            fps=fps,
            hr_max_bpm=self.hr_max_bpm,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rois"] = [int(r) for r in self.rois]
        out["eval_roi"] = int(self.eval_roi)
        return out


def _dataset_fps(index: DatasetIndex, clip_ids: Sequence[str]) -> float:
    clip, _, _ = index.load(clip_ids[0])
    return clip.fps


def _clip_to_tensor(clip: Clip) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(clip.pixels))


def refresh_bn_stats(model: PretrainModel, views: torch.Tensor, batch: int = 32):
    """Re-estimate batch-norm running statistics with a forward-only pass.

    During training the exponential running averages lag behind the
    evolving weights; inference-mode consumers (linear probes, the
    pseudo-label classifiers) need statistics that match the final
    weights. Uses a cumulative average over ``views``, then restores the
    default momentum.
    """
    was_training = model.training
    bn_layers = [m for m in model.modules() if isinstance(m, nn.BatchNorm3d)]
    for layer in bn_layers:
        layer.reset_running_stats()
        layer.momentum = None
    model.train()
    with torch.no_grad():
        for lo in range(0, views.shape[0], batch):
            model.encoder(views[lo : lo + batch])
    for layer in bn_layers:
        layer.momentum = 0.1
    model.train(was_training)


def pretrain(
    config: TrainConfig,
    dataset: DatasetIndex,
    out_dir: str | Path,
    clip_ids: Sequence[str] | None = None,
) -> Path:
    """Run self-supervised pretraining; returns the checkpoint path.

    Writes ``checkpoint.pt`` (best epoch by mean training loss) and a
    per-step ``training_log.csv`` under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = list(clip_ids) if clip_ids is not None else list(dataset.clip_ids)
    if len(ids) < config.batch_size:
        raise ValueError(
            f"dataset has {len(ids)} clips, fewer than batch_size {config.batch_size}"
        )
    fps = _dataset_fps(dataset, ids)
    aug = config.augment_config(fps)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = PretrainModel(config.encoder_config())
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8
    )

    best_loss = math.inf
    best_state: dict | None = None
    best_epoch = -1
    step = 0
    t_start = time.monotonic()
    log_path = out_dir / "training_log.csv"
    with open(log_path, "w", newline="", encoding="utf-8") as log_file:
        log = csv.writer(log_file)
        log.writerow(TRAIN_LOG_HEADER)
        for epoch in range(config.epochs):
            order = rng.permutation(len(ids))
            epoch_losses = []
            for lo in range(0, len(ids) - config.batch_size + 1, config.batch_size):
                batch_ids = [ids[i] for i in order[lo : lo + config.batch_size]]
                views, roi_t, stride_t = [], [], []
                for cid in batch_ids:
                    clip, lms, _ = dataset.load(cid)
                    if abs(clip.fps - fps) > 1e-6:
                        raise ValueError(
                            f"clip {cid!r} has fps {clip.fps}, dataset started at {fps}"
                        )
                    for view in augment_pair(clip, lms, rng, aug):
                        views.append(_clip_to_tensor(view.clip))
                        roi_t.append(view.label.roi_index)
                        stride_t.append(view.label.stride_index)
                x = torch.stack(views)
                _, z, roi_logits, stride_logits = model(x)
                l_con = contrastive_loss(EmbeddingBatch(z, config.tau))
                labels = PseudoLabelBatch(
                    roi_logits,
                    stride_logits,
                    torch.tensor(roi_t, dtype=torch.long),
                    torch.tensor(stride_t, dtype=torch.long),
                )
                if config.use_pseudo_labels:
                    l_roi = roi_ce(labels)
                    l_stride = stride_ce(labels)
                    loss = combined_loss(l_con, l_roi, l_stride)
                else:
                    l_roi = torch.zeros(())
                    l_stride = torch.zeros(())
                    loss = l_con
                loss_val = float(loss.detach())
                if not math.isfinite(loss_val):
                    log_file.flush()
                    raise DivergenceError(
                        f"non-finite loss at step {step} (epoch {epoch})"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                step += 1
                epoch_losses.append(loss_val)
                log.writerow(
                    [
                        step,
                        epoch,
                        f"{float(l_con.detach()):.6f}",
                        f"{float(l_roi.detach()):.6f}",
                        f"{float(l_stride.detach()):.6f}",
                        f"{loss_val:.6f}",
                        f"{config.lr:g}",
                        f"{time.monotonic() - t_start:.3f}",
                    ]
                )
            mean_loss = float(np.mean(epoch_losses))
            if mean_loss < best_loss:
                best_loss = mean_loss
                best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    # Recalibrate normalisation statistics for the saved weights; without
    # this, inference-mode features lag the final training state.
    refresh_rng = np.random.default_rng(config.seed + 1)
    refresh_views = []
    for cid in (ids * 2)[: min(len(ids), 96)]:
        clip, lms, _ = dataset.load(cid)
        for view in augment_pair(clip, lms, refresh_rng, aug):
            refresh_views.append(_clip_to_tensor(view.clip))
    refresh_bn_stats(model, torch.stack(refresh_views))

    ckpt_path = out_dir / "checkpoint.pt"
    save_checkpoint(
        ckpt_path,
        model,
        optimizer,
        train_meta={
            "epochs": config.epochs,
            "best_epoch": best_epoch,
            "best_epoch_mean_loss": best_loss,
            "steps": step,
            "fps": fps,
        },
        resolved_config=config.to_dict(),
    )
    return ckpt_path


def _load_model(checkpoint, config: TrainConfig) -> PretrainModel:
    """Model from a checkpoint path/payload, or randomly initialised if None."""
    if checkpoint is None:
        torch.manual_seed(config.seed + 7919)
        return PretrainModel(config.encoder_config())
    if isinstance(checkpoint, (str, Path)):
        checkpoint = load_checkpoint(checkpoint)
    return model_from_checkpoint(checkpoint)


def eval_view(clip: Clip, landmarks, config: TrainConfig) -> Clip:
    """The deterministic evaluation view of a clip: fixed stride and ROI."""
    view = temporal_subsample(clip, config.eval_stride, out_len=config.eval_len, start=0)
    if landmarks.per_frame:
        from .dataio import LandmarkSet

        idx = np.arange(config.eval_len) * config.eval_stride
        landmarks = LandmarkSet(landmarks.points[idx])
    return roi_crop(view, landmarks, config.eval_roi, out_size=config.frame_size)


def _eval_views_and_targets(
    dataset: DatasetIndex, clip_ids: Sequence[str], config: TrainConfig
) -> tuple[torch.Tensor, torch.Tensor]:
    views, targets = [], []
    for cid in clip_ids:
        clip, lms, label = dataset.load(cid)
        views.append(_clip_to_tensor(eval_view(clip, lms, config)))
        targets.append(label.hr_bpm)
    return torch.stack(views), torch.tensor(targets, dtype=torch.float32)


def _encode_features(
    model: PretrainModel, views: torch.Tensor, batch: int = 64
) -> torch.Tensor:
    model.eval()
    chunks = []
    with torch.no_grad():
        for lo in range(0, views.shape[0], batch):
            chunks.append(model.encoder(views[lo : lo + batch]))
    return torch.cat(chunks)


class _Standardizer:
    """Target standardisation so the L1 head trains at unit scale."""

    def __init__(self, targets: torch.Tensor):
        self.mean = float(targets.mean())
        std = float(targets.std())
        self.std = std if std > 1e-6 else 1.0

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return (y - self.mean) / self.std

    def inverse(self, y: torch.Tensor) -> torch.Tensor:
        return y * self.std + self.mean


def _split_clip_ids(
    dataset: DatasetIndex, split: SplitSpec
) -> tuple[list[str], list[str]]:
    known = set(dataset.subjects())
    missing = (split.train_subjects | split.test_subjects) - known
    if missing:
        raise ValueError(f"split references unknown subjects: {sorted(missing)}")
    train_ids = dataset.clip_ids_for(split.train_subjects)
    test_ids = dataset.clip_ids_for(split.test_subjects)
    if not train_ids or not test_ids:
        raise ValueError("split leaves one side without clips")
    return train_ids, test_ids


def _write_eval_outputs(
    out_dir: str | Path | None,
    report: MetricsReport,
    test_ids: Sequence[str],
    preds: np.ndarray,
    truths: np.ndarray,
    train_ids: Sequence[str],
):
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    with open(out_dir / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "pred_bpm", "true_bpm"])
        for cid, p, t in zip(test_ids, preds, truths):
            writer.writerow([cid, f"{p:.4f}", f"{t:.4f}"])
    audit = {"train_clip_ids": list(train_ids), "test_clip_ids": list(test_ids)}
    (out_dir / "eval_audit.json").write_text(json.dumps(audit), encoding="utf-8")


def linear_eval(
    checkpoint,
    dataset: DatasetIndex,
    split: SplitSpec,
    config: TrainConfig,
    out_dir: str | Path | None = None,
) -> MetricsReport:
    """Frozen-encoder linear probe for heart-rate regression.

    ``checkpoint`` may be a path, a loaded payload, or None for a
    randomly initialised control encoder.
    """
    train_ids, test_ids = _split_clip_ids(dataset, split)
    model = _load_model(checkpoint, config)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    digest_before = parameter_digest(model)

    train_views, train_y = _eval_views_and_targets(dataset, train_ids, config)
    test_views, test_y = _eval_views_and_targets(dataset, test_ids, config)
    train_h = _encode_features(model, train_views)
    test_h = _encode_features(model, test_views)

    torch.manual_seed(config.seed)
    head = nn.Linear(train_h.shape[1], 1)
    scaler = _Standardizer(train_y)
    optimizer = torch.optim.Adam(head.parameters(), lr=config.eval_lr)
    gen = torch.Generator().manual_seed(config.seed)
    y_scaled = scaler.forward(train_y)
    for _ in range(config.eval_epochs):
        order = torch.randperm(train_h.shape[0], generator=gen)
        for lo in range(0, len(order), config.eval_batch):
            sel = order[lo : lo + config.eval_batch]
            pred = head(train_h[sel]).squeeze(-1)
            loss = torch.mean(torch.abs(pred - y_scaled[sel]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    with torch.no_grad():
        preds = scaler.inverse(head(test_h).squeeze(-1)).numpy()
    if parameter_digest(model) != digest_before:
        raise RuntimeError("linear evaluation must not update encoder parameters")
    report = compute_metrics(preds, test_y.numpy())
    _write_eval_outputs(out_dir, report, test_ids, preds, test_y.numpy(), train_ids)
    return report


def finetune(
    checkpoint,
    dataset: DatasetIndex,
    split: SplitSpec,
    config: TrainConfig,
    out_dir: str | Path | None = None,
) -> MetricsReport:
    """Train encoder + affine head end to end; ``checkpoint`` None = from scratch."""
    train_ids, test_ids = _split_clip_ids(dataset, split)
    model = _load_model(checkpoint, config)

    train_views, train_y = _eval_views_and_targets(dataset, train_ids, config)
    test_views, test_y = _eval_views_and_targets(dataset, test_ids, config)

    torch.manual_seed(config.seed)
    head = nn.Linear(model.config.feature_dim, 1)
    scaler = _Standardizer(train_y)
    params = list(model.encoder.parameters()) + list(head.parameters())
    optimizer = torch.optim.Adam(params, lr=config.finetune_lr)
    gen = torch.Generator().manual_seed(config.seed)
    y_scaled = scaler.forward(train_y)
    for _ in range(config.finetune_epochs):
        model.train()
        order = torch.randperm(train_views.shape[0], generator=gen)
        for lo in range(0, len(order), config.finetune_batch):
            sel = order[lo : lo + config.finetune_batch]
            h = model.encoder(train_views[sel])
            pred = head(h).squeeze(-1)
            loss = torch.mean(torch.abs(pred - y_scaled[sel]))
            if not torch.isfinite(loss):
                raise DivergenceError("non-finite fine-tuning loss")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    if config.finetune_epochs > 0:
        refresh_bn_stats(model, train_views)
    model.eval()
    with torch.no_grad():
        test_h = _encode_features(model, test_views)
        preds = scaler.inverse(head(test_h).squeeze(-1)).numpy()
    report = compute_metrics(preds, test_y.numpy())
    _write_eval_outputs(out_dir, report, test_ids, preds, test_y.numpy(), train_ids)
    return report


def classifier_accuracy(
    checkpoint,
    dataset: DatasetIndex,
    clip_ids: Sequence[str],
    config: TrainConfig,
    rounds: int = 4,
    seed: int = 123,
) -> tuple[float, float]:
    """(roi, stride) pseudo-label accuracy of a pretrained model on fresh views."""
    model = _load_model(checkpoint, config)
    model.eval()
    fps = _dataset_fps(dataset, list(clip_ids))
    aug = config.augment_config(fps)
    rng = np.random.default_rng(seed)
    views, roi_t, stride_t = [], [], []
    for _ in range(rounds):
        for cid in clip_ids:
            clip, lms, _ = dataset.load(cid)
            for view in augment_pair(clip, lms, rng, aug):
                views.append(_clip_to_tensor(view.clip))
                roi_t.append(view.label.roi_index)
                stride_t.append(view.label.stride_index)
    x = torch.stack(views)
    with torch.no_grad():
        correct_roi = correct_stride = 0
        for lo in range(0, x.shape[0], 64):
            h = model.encoder(x[lo : lo + 64])
            roi_pred = model.roi_head(h).argmax(dim=1)
            stride_pred = model.stride_head(h).argmax(dim=1)
            roi_true = torch.tensor(roi_t[lo : lo + 64])
            stride_true = torch.tensor(stride_t[lo : lo + 64])
            correct_roi += int((roi_pred == roi_true).sum())
            correct_stride += int((stride_pred == stride_true).sum())
    total = x.shape[0]
    return correct_roi / total, correct_stride / total
