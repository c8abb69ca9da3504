"""Training, inference and evaluation drivers shared by the CLI and the tests."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .core import AdamW, NumericError, Tensor, cosine_lr, load_checkpoint, save_checkpoint
from .data import augment, generate_dataset, load_dataset, make_batch
from .losses import LossBreakdown, SetCriterion
from .metrics import Detection, EvalResult, evaluate
from .model import IAUNet

LOG_COLUMNS = ("step", "lr", "cls", "dice", "bce", "total")


class TrainingDiverged(NumericError):
    def __init__(self, step: int, last: Optional[dict]):
        self.step = step
        self.last = last
        super().__init__(f"non-finite loss at step {step}; last finite breakdown: {last}")


@dataclass
class TrainResult:
    model: IAUNet
    log: list[dict] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [row["total"] for row in self.log]


def build_model(cfg: RunConfig) -> IAUNet:
    return IAUNet(cfg.model, np.random.default_rng([cfg.seed, 0]))


def load_samples(cfg: RunConfig):
    """The configured dataset directory, or the synthetic set implied by (data, seed)."""
    if cfg.data.root:
        return load_dataset(cfg.data.root)
    return generate_dataset(cfg.data, cfg.seed)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled every epoch."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def train(cfg: RunConfig, samples, out_dir: Optional[str | Path] = None, model: Optional[IAUNet] = None,
          progress=None) -> TrainResult:
    """AdamW + cosine schedule over ``cfg.optim.steps`` steps.

    With ``out_dir`` set, writes ``loss_log.csv`` and ``model.ckpt`` (plus
    ``step_<k>.ckpt`` every ``checkpoint_interval`` steps). Raises
    TrainingDiverged on a non-finite loss.
    """
    cfg.validate()
    model = model or build_model(cfg)
    model.train()
    opt_cfg = cfg.optim
    opt = AdamW(model.parameters(), lr=opt_cfg.lr, weight_decay=opt_cfg.weight_decay)
    criterion = SetCriterion(cfg.loss, cfg.model.num_classes)
    rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(model)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "loss_log.csv", "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    try:
        if opt_cfg.steps and not samples:
            raise ValueError("training needs at least one sample")
        stream = _batches(len(samples), opt_cfg.batch_size, rng) if samples else iter(())
        for step in range(1, opt_cfg.steps + 1):
            chosen = [samples[i] for i in next(stream)]
            if cfg.data.augment:
                chosen = [augment(img, rec, rng) for img, rec in chosen]
            images, targets = make_batch(chosen)
            lr = cosine_lr(step - 1, opt_cfg.steps, opt_cfg.lr, opt_cfg.min_lr)
            opt.lr = lr
            opt.zero_grad()
            last = result.log[-1] if result.log else None
            try:
                # overflow warnings are redundant here: non-finite values are caught below
                with np.errstate(over="ignore", invalid="ignore"):
                    breakdown: LossBreakdown = criterion(model(Tensor(images)).predictions, targets)
            except NumericError as exc:
                raise TrainingDiverged(step, last) from exc
            total = breakdown.total.item()
            if not math.isfinite(total):
                raise TrainingDiverged(step, last)
            breakdown.total.backward()
            opt.step()
            row = {"step": step, "lr": lr, "cls": breakdown.cls, "dice": breakdown.dice,
                   "bce": breakdown.bce, "total": total}
            result.log.append(row)
            if writer is not None:
                writer.writerow([step] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
            if progress is not None:
                progress(row)
            if out is not None and opt_cfg.checkpoint_interval and step % opt_cfg.checkpoint_interval == 0:
                save_checkpoint(out / f"step_{step}.ckpt", model.state_dict())
        if out is not None:
            save_checkpoint(out / "model.ckpt", model.state_dict())
            cfg.save(out / "config.json")
    finally:
        if writer is not None:
            log_file.close()
    return result


def load_model(cfg: RunConfig, checkpoint: str | Path) -> IAUNet:
    model = build_model(cfg)
    model.load_state_dict(load_checkpoint(checkpoint))
    return model


def predict_samples(model: IAUNet, samples, batch_size: int = 4) -> dict[str, list[Detection]]:
    out = {}
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        images = np.stack([img for img, _ in chunk])
        for (_, rec), instances in zip(chunk, model.predict(images)):
            out[rec.image_id] = [Detection(inst.class_id, inst.score, inst.mask) for inst in instances]
    return out


def evaluate_model(model: IAUNet, samples) -> EvalResult:
    return evaluate(predict_samples(model, samples), {rec.image_id: rec for _, rec in samples})
