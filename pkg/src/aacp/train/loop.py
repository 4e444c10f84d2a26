"""Epoch loops for masked pretraining, full-image fine-tuning and supervised scoring."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..data.corpus import Corpus
from ..data.masking import mask_patches
from ..data.records import PaintingRecord
from ..data.attributes import SCORE_MAX
from ..eval.report import evaluate_scores
from ..model.config import ModelConfig
from ..model.mae import masked_psnr, patch_weights
from ..model.network import AACPNet, images_to_tensor
from ..tensor import Tensor
from .checkpoint import Checkpoint
from .optim import OptimizerState, adam_step, clip_by_global_norm

logger = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune", "supervised")
REFERENCE_EPOCHS = {"pretrain": 1500, "finetune": 20, "supervised": 400}
STAGE_GROUPS = {
    "pretrain": ("encoder", "decoder"),
    "finetune": ("encoder", "decoder"),
    "supervised": ("spatial", "channel", "head"),
}
_STAGE_CODE = {name: i for i, name in enumerate(STAGES)}
LOG_COLUMNS = ("epoch", "stage", "loss", "psnr", "srcc", "lcc", "emd", "mse", "wall-seconds")
CACHE_CHUNK = 32


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """One training stage. ``epochs`` is multiplied by ``scale`` (rounded)."""

    stage: str
    epochs: int
    lr: float = 1e-4
    batch: int = 64
    seed: int = 0
    mask_ratio: float = 0.75
    refresh_period: int | None = None
    clip_norm: float = 5.0
    scale: float = 1.0
    train_subset: str = "train"
    eval_subset: str | None = "test"
    emd_ordering: str = "dataset"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage {self.stage!r}; expected one of {', '.join(STAGES)}")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if self.scale < 0:
            raise ConfigurationError("scale must be >= 0")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigurationError("mask_ratio must lie strictly between 0 and 1")
        if self.refresh_period is not None and self.refresh_period < 0:
            raise ConfigurationError("refresh_period must be >= 0 (0 disables periodic refresh)")

    @classmethod
    def reference(cls, stage: str, **overrides) -> "TrainConfig":
        """Reference schedule: 1500 / 20 / 400 epochs, lr 1e-4, batch 64."""
        return cls(**{"stage": stage, "epochs": REFERENCE_EPOCHS.get(stage, 0), **overrides})

    @property
    def effective_epochs(self) -> int:
        return int(round(self.epochs * self.scale))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StageResult:
    checkpoint: Checkpoint
    metrics: list[dict] = field(default_factory=list)
    batch_ids: list[list[str]] = field(default_factory=list)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over batch and attributes of squared differences."""
    target = target if isinstance(target, Tensor) else Tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise T.ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


# -- helpers ----------------------------------------------------------------
def _records(corpus: Corpus, name: str | None) -> list[PaintingRecord]:
    if corpus.split is None or name is None:
        return list(corpus.records)
    try:
        return corpus.subset(name)
    except KeyError as exc:
        raise ConfigurationError(str(exc.args[0])) from None


def _pixels(records, size: int, dtype) -> np.ndarray:
    for r in records:
        if r.image.shape[:2] != (size, size):
            raise ConfigurationError(f"record {r.id} is {r.image.shape[0]}x{r.image.shape[1]}, model expects {size}x{size}")
    if not records:
        return np.zeros((0, 3, size, size), dtype=dtype)
    return images_to_tensor(np.stack([r.image for r in records]), dtype=dtype).data


def _targets(records) -> np.ndarray:
    missing = [r.id for r in records if not r.labeled]
    if missing:
        raise ConfigurationError(f"supervised stage needs labels; {len(missing)} unlabeled records (first: {missing[0]})")
    return np.stack([r.target.to_array() / SCORE_MAX for r in records])


def _trainable(model: AACPNet, stage: str) -> dict[str, Tensor]:
    groups = STAGE_GROUPS[stage]
    return {name: p for name, p in model.named_parameters() if name.split(".", 1)[0] in groups}


def _apply_update(params: dict[str, Tensor], state: OptimizerState, cfg: TrainConfig) -> bool:
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
    ok = adam_step({name: params[name].data for name in grads}, grads, state, cfg.lr)
    for p in params.values():
        p.grad = None
    return ok


def _cache_latents(model: AACPNet, pixels: np.ndarray) -> np.ndarray:
    out = []
    with T.no_grad():
        for lo in range(0, len(pixels), CACHE_CHUNK):
            out.append(model.encode(Tensor._wrap(pixels[lo:lo + CACHE_CHUNK])).data)
    return np.concatenate(out) if out else np.zeros((0,))


def _fused(model: AACPNet, pixels: np.ndarray, latents: np.ndarray) -> np.ndarray:
    out = []
    with T.no_grad():
        for lo in range(0, len(pixels), CACHE_CHUNK):
            sl = slice(lo, lo + CACHE_CHUNK)
            out.append(model.forward_scores(Tensor._wrap(pixels[sl]), Tensor._wrap(latents[sl])).fused.data)
    return np.concatenate(out).astype(np.float64)


def predict_records(model: AACPNet, records, latents: np.ndarray | None = None) -> np.ndarray:
    """Normalised scores ``[N, 8]`` for records (float64)."""
    size = model.config.encoder.input_size
    pixels = _pixels(records, size, model.dtype)
    if latents is None:
        latents = _cache_latents(model, pixels)
    out = []
    with T.no_grad():
        for lo in range(0, len(pixels), CACHE_CHUNK):
            sl = slice(lo, lo + CACHE_CHUNK)
            out.append(model.predict_normalized(Tensor._wrap(pixels[sl]), Tensor._wrap(latents[sl])).data)
    return np.concatenate(out).astype(np.float64) if out else np.zeros((0, 8))


def _nan_if_none(v):
    return math.nan if v is None else float(v)


def _row(epoch: int, stage: str, start: float, **values) -> dict:
    row = {k: math.nan for k in ("loss", "psnr", "srcc", "lcc", "emd", "mse")}
    row.update({k: float(v) for k, v in values.items()})
    row.update(epoch=epoch, stage=stage, wall_seconds=time.perf_counter() - start)
    return row


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(rows, path) -> None:
    """Append rows to ``path``; the header is written when the file is new or empty."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r["wall_seconds"] if c == "wall-seconds" else r[c]) for c in LOG_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- stage runner -----------------------------------------------------------
def run_stage(config: TrainConfig, corpus: Corpus, checkpoint: Checkpoint | None = None,
              model_config: ModelConfig | None = None, log_path=None) -> StageResult:
    """Run one stage and return the updated checkpoint, metric rows and batch ids.

    Without ``checkpoint`` a fresh model is initialised from ``config.seed``.
    Zero effective epochs returns the input checkpoint untouched.
    """
    epochs = config.effective_epochs
    if checkpoint is not None and epochs == 0:
        return StageResult(checkpoint)
    if checkpoint is None:
        model = AACPNet(model_config or ModelConfig(), seed=config.seed)
        meta = {"history": []}
        state = None
    else:
        model = checkpoint.build_model()
        meta = dict(checkpoint.meta)
        meta.setdefault("history", [])
        state = checkpoint.optimizer if meta.get("optimizer_stage") == config.stage else None
    if epochs == 0:
        return StageResult(Checkpoint.from_model(model, state, meta))
    state = state or OptimizerState()

    train_recs = _records(corpus, config.train_subset)
    if not train_recs:
        raise ConfigurationError(f"subset {config.train_subset!r} is empty")
    if config.stage == "supervised":
        rows, batches = _run_supervised(model, config, corpus, train_recs, state, epochs)
    else:
        rows, batches = _run_reconstruction(model, config, train_recs, state, epochs)

    meta["history"] = list(meta["history"]) + [
        {"stage": config.stage, "epochs": epochs, "steps": len(batches), "seed": config.seed}]
    meta["optimizer_stage"] = config.stage
    out = Checkpoint.from_model(model, state, meta)
    if log_path is not None:
        write_metrics_csv(rows, log_path)
    return StageResult(out, rows, batches)


def _batches(rng: np.random.Generator, n: int, batch: int) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def _run_reconstruction(model, cfg: TrainConfig, records, state, epochs):
    enc = model.config.encoder
    pixels = _pixels(records, enc.input_size, model.dtype)
    ids = [r.id for r in records]
    params = _trainable(model, cfg.stage)
    rng = np.random.default_rng([cfg.seed, _STAGE_CODE[cfg.stage], state.step])
    masked = cfg.stage == "pretrain"
    rows, batch_log = [], []
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        losses, psnrs = [], []
        for idx in _batches(rng, len(records), cfg.batch):
            x = Tensor._wrap(pixels[idx])
            masks = None
            if masked:
                seeds = rng.integers(0, 2**31 - 1, size=len(idx))
                masks = [mask_patches((enc.input_size, enc.input_size), cfg.mask_ratio, enc.patch, int(s))
                         for s in seeds]
            pred, loss = model.mae_forward(x, masks)
            loss.backward()
            _apply_update(params, state, cfg)
            losses.append(float(loss.data))
            psnrs.append(masked_psnr(pred.data.astype(np.float64), pixels[idx], enc.patch,
                                     patch_weights(masks, len(idx), enc.num_tokens)))
            batch_log.append([ids[i] for i in idx])
        rows.append(_row(epoch, cfg.stage, start, loss=np.mean(losses), psnr=np.mean(psnrs)))
    return rows, batch_log


def _run_supervised(model, cfg: TrainConfig, corpus, records, state, epochs):
    size = model.config.encoder.input_size
    targets = _targets(records).astype(model.dtype)
    pixels = _pixels(records, size, model.dtype)
    latents = _cache_latents(model, pixels)
    ids = [r.id for r in records]

    eval_recs, eval_targets, eval_latents = [], None, None
    if cfg.eval_subset and corpus.split is not None and cfg.eval_subset in corpus.split.subsets:
        eval_recs = [r for r in corpus.subset(cfg.eval_subset) if r.labeled]
    if eval_recs:
        eval_targets = _targets(eval_recs)
        eval_latents = _cache_latents(model, _pixels(eval_recs, size, model.dtype))

    head = model.head
    period = cfg.refresh_period if cfg.refresh_period is not None else model.config.refresh_period
    if head.refreshes == 0:
        # seed the buffer with the whole training set, then give the scalar
        # heads a least-squares start on the fresh coordinates
        fused = _fused(model, pixels, latents)
        head.push(fused)
        if head.refresh(align=False):
            head.calibrate(fused, targets)

    params = _trainable(model, "supervised")
    rng = np.random.default_rng([cfg.seed, _STAGE_CODE["supervised"], state.step])
    rows, batch_log = [], []
    step = 0
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in _batches(rng, len(records), cfg.batch):
            out = model.forward_scores(Tensor._wrap(pixels[idx]), Tensor._wrap(latents[idx]))
            loss = mse_loss(out.scores, Tensor._wrap(targets[idx]))
            loss.backward()
            _apply_update(params, state, cfg)
            head.push(out.fused.data)
            step += 1
            if period and step % period == 0:
                head.refresh(align=True)
            losses.append(float(loss.data))
            batch_log.append([ids[i] for i in idx])
        values = {"loss": np.mean(losses)}
        if eval_recs:
            pred = predict_records(model, eval_recs, eval_latents)
            report = evaluate_scores(pred, eval_targets, cfg.emd_ordering)
            values.update({k: _nan_if_none(report.mean[k]) for k in ("srcc", "lcc", "emd", "mse")})
        rows.append(_row(epoch, "supervised", start, **values))
    return rows, batch_log
