"""Self-supervised training loops for the two translation tasks."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import raster as rz
from .checkpoint import ParameterStore, decode_rng_state, encode_rng_state, load_checkpoint, save_checkpoint
from .data import LabeledSample, stack_rasters, stack_vectors
from .errors import DivergedLoss, EmptyDataset, ShapeMismatch, UsageError
from .losses import pen_accuracy, rasterization_loss, vectorization_loss
from .models import ModelConfig, _build, build_model
from .strokes import StrokeSequence

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    task: str = "vectorization"
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    T_max: int = 64
    deterministic: bool = True
    teacher_forcing: bool = True
    grad_clip: float | None = 1.0
    augment: bool = False
    coord_error: str = "squared"
    keep_epoch_checkpoints: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise UsageError("lr must be > 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.task not in ("vectorization", "rasterization"):
            raise UsageError(f"unknown task {self.task!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        return _build(cls, d)


@dataclass
class PretrainResult:
    checkpoint: Path
    metrics: list[dict]
    model: torch.nn.Module


def seed_everything(seed: int, deterministic: bool) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Sample order of one epoch; a pure function of ``(seed, epoch)`` so resumes replay it."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def _augment(seq: StrokeSequence, rng: np.random.Generator, cfg: rz.RasterConfig) -> StrokeSequence:
    # horizontal flip and a random whole-pixel shift, mirrored in both views
    xy = np.array(seq.xy)
    if rng.random() < 0.5:
        xy[:, 0] = 1.0 - xy[:, 0]
    for axis, n in ((0, cfg.W), (1, cfg.H)):
        step = 1.0 / (n - 1)
        lo = math.ceil(-xy[:, axis].min() / step - 1e-9)
        hi = math.floor((1.0 - xy[:, axis].max()) / step + 1e-9)
        k = int(rng.integers(max(lo, -2), min(hi, 2) + 1)) if max(lo, -2) <= min(hi, 2) else 0
        xy[:, axis] = np.clip(xy[:, axis] + k * step, 0.0, 1.0)
    return seq.with_xy(xy)


class _Tensors:
    def __init__(self, samples: Sequence[LabeledSample], cfg: PretrainConfig, raster_cfg: rz.RasterConfig | None):
        self.samples = list(samples)
        if raster_cfg is None and self.samples and self.samples[0].raster is not None:
            h, w, c = self.samples[0].raster.shape
            raster_cfg = rz.RasterConfig(H=h, W=w, channels=c)
        self.raster_cfg = raster_cfg
        self.t_max = cfg.T_max
        self.images = torch.from_numpy(stack_rasters(self.samples, raster_cfg))
        seqs, masks = stack_vectors(self.samples, cfg.T_max)
        self.seqs = torch.from_numpy(seqs.astype(np.float32))
        self.masks = torch.from_numpy(masks.astype(np.float32))

    def batch(self, idx, rng: np.random.Generator | None = None):
        if rng is None:
            return self.images[idx], self.seqs[idx], self.masks[idx]
        subset = []
        for i in idx:
            s = self.samples[int(i)]
            aug = _augment(s.vector, rng, self.raster_cfg)
            subset.append(LabeledSample(s.id, aug, rz.render(aug, self.raster_cfg)))
        imgs = torch.from_numpy(stack_rasters(subset))
        seqs, masks = stack_vectors(subset, self.t_max)
        return imgs, torch.from_numpy(seqs.astype(np.float32)), torch.from_numpy(masks.astype(np.float32))


def _step_loss(model, task, imgs, seqs, masks, cfg: PretrainConfig):
    if task == "vectorization":
        preds = model(imgs, seqs, teacher_forcing=cfg.teacher_forcing)
        br = vectorization_loss(preds, model.model_targets(seqs), masks, cfg.coord_error)
        return br.total, {"loss": br.total, "coord_term": br.coord_term, "pen_term": br.pen_term}
    out = model(seqs, masks)
    if out.shape != imgs.shape:
        raise ShapeMismatch(f"decoder produces {tuple(out.shape[1:])}, targets are {tuple(imgs.shape[1:])}")
    mse = rasterization_loss(out, imgs)
    return mse, {"loss": mse}


def evaluate_pretext(model, samples: Sequence[LabeledSample], cfg: PretrainConfig, raster_cfg=None) -> dict:
    """Teacher-forced loss terms (and pen accuracy for vectorization) over ``samples``."""
    data = _Tensors(samples, cfg, raster_cfg)
    model.eval()
    with torch.no_grad():
        if model.task == "vectorization":
            preds = model(data.images, data.seqs, teacher_forcing=True)
            tgt = model.model_targets(data.seqs)
            br = vectorization_loss(preds, tgt, data.masks, cfg.coord_error)
            out = br.as_floats()
            out["loss"] = out["total"]
            out["pen_accuracy"] = pen_accuracy(preds, tgt, data.masks)
            return out
        return {"loss": float(rasterization_loss(model(data.seqs, data.masks), data.images))}


def pretrain(
    samples: Sequence[LabeledSample],
    cfg: PretrainConfig,
    out_dir: str | Path,
    raster_cfg: rz.RasterConfig | None = None,
    resume: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> PretrainResult:
    """Train ``cfg.task`` on ``samples`` with Adam; checkpoint every epoch.

    Checkpoints go to ``out_dir/checkpoint`` (latest) and, with
    ``keep_epoch_checkpoints``, ``out_dir/epoch_XXXX``. Per-epoch metrics are
    appended to ``out_dir/metrics.ndjson``.
    """
    if len(samples) == 0:
        raise EmptyDataset("no training samples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(cfg.seed, cfg.deterministic)
    cfg.model.validate(cfg.task)
    model = build_model(cfg.task, cfg.model)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    start_epoch, step, history = 0, 0, []
    if resume is not None:
        store, manifest = load_checkpoint(resume)
        if manifest["task"] != cfg.task:
            raise UsageError(f"cannot resume a {manifest['task']} checkpoint as {cfg.task}")
        store.load_into(model, opt)
        start_epoch, step = manifest["epoch"], manifest["step"]
        history = list(manifest.get("metrics_tail", []))
        torch.set_rng_state(decode_rng_state(manifest["rng_state"]))

    data = _Tensors(samples, cfg, raster_cfg)
    metrics_path = out_dir / "metrics.ndjson"
    ckpt = out_dir / "checkpoint"
    t0 = time.perf_counter()
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        model.train()
        order = epoch_order(len(data.samples), cfg.seed, epoch)
        aug_rng = np.random.default_rng([cfg.seed, epoch, 1]) if cfg.augment else None
        sums: dict[str, float] = {}
        seen = 0
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b : b + cfg.batch_size]
            imgs, seqs, masks = data.batch(idx, aug_rng)
            loss, parts = _step_loss(model, cfg.task, imgs, seqs, masks, cfg)
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {ckpt}")
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            step += 1
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.detach()) * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "step": step}
        record.update({k: v / seen for k, v in sums.items()})
        record["wall_time"] = 0.0 if cfg.deterministic else round(time.perf_counter() - t0, 3)
        history.append(record)
        with open(metrics_path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")
        fields = dict(
            task=cfg.task,
            config=cfg.to_dict(),
            epoch=epoch,
            step=step,
            metrics_tail=history[-5:],
            rng_state=encode_rng_state(torch.get_rng_state()),
        )
        store = ParameterStore.from_module(model, opt)
        save_checkpoint(store, ckpt, **fields)
        if cfg.keep_epoch_checkpoints:
            save_checkpoint(store, out_dir / f"epoch_{epoch:04d}", **fields)
        log.debug("epoch %d: %s", epoch, record)
        if on_epoch:
            on_epoch(record)
    if start_epoch >= cfg.epochs and not ckpt.exists():
        save_checkpoint(ParameterStore.from_module(model, opt), ckpt, task=cfg.task, config=cfg.to_dict(),
                        epoch=start_epoch, step=step, metrics_tail=history[-5:],
                        rng_state=encode_rng_state(torch.get_rng_state()))
    model.eval()
    return PretrainResult(ckpt, history, model)


def pretrain_vectorization(samples, cfg: PretrainConfig, out_dir, **kw) -> PretrainResult:
    if cfg.task != "vectorization":
        raise UsageError("config task must be 'vectorization'")
    return pretrain(samples, cfg, out_dir, **kw)


def pretrain_rasterization(samples, cfg: PretrainConfig, out_dir, **kw) -> PretrainResult:
    if cfg.task != "rasterization":
        raise UsageError("config task must be 'rasterization'")
    return pretrain(samples, cfg, out_dir, **kw)


def load_pretrained(path: str | Path) -> tuple[torch.nn.Module, PretrainConfig, dict]:
    """Rebuild the translation model stored in a checkpoint (inference mode)."""
    store, manifest = load_checkpoint(path)
    cfg = PretrainConfig.from_dict(manifest["config"])
    model = build_model(cfg.task, cfg.model)
    store.load_into(model)
    model.eval()
    return model, cfg, manifest
