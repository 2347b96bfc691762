from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..data import AugmentConfig, Dataset, augment_batch
from ..loss import multilabel_loss_from_logits
from ..models import Module, predict_proba
from ..tensor.core import Tensor
from ..tensor.optim import AdamState, adam_step
from ..weighting import ClassWeights, ModifierConfig, batch_weights
from .metrics import RocResult, evaluate_heads, mean_auc

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-4, ge=0.0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(20, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: AugmentConfig | None = Field(default_factory=AugmentConfig)
    select_best: bool = True


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_auc_mean: float


@dataclass
class TrainResult:
    model: Module
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0

    def write_log(self, path: str | Path) -> None:
        write_training_log(self.log, path)


def write_training_log(entries: list[EpochLog], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_auc_mean"])
        for e in entries:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_auc_mean)])


def _as_batch(images: np.ndarray, dtype) -> Tensor:
    return Tensor(images[:, None, :, :].astype(dtype, copy=False))


def train(
    model: Module,
    train_set: Dataset,
    val_set: Dataset | None,
    weights: list[ClassWeights] | None,
    modifier: ModifierConfig | None,
    hp: TrainConfig,
    seed: int,
) -> TrainResult:
    """Minibatch Adam on the weighted multi-label loss.

    ``weights=None`` trains with unit class weights; ``modifier=None`` is the
    baseline (no ambiguity modifiers). When ``hp.select_best`` is set and a
    validation set is given, the returned model holds the parameters of the
    epoch with the best mean validation AUC.
    """
    n_heads = train_set.labels.targets.shape[1]
    if model.cfg.head_count != n_heads:
        raise ValueError(f"model has {model.cfg.head_count} heads, labels have {n_heads}")
    rng = np.random.default_rng([seed, 2])
    model.set_rng(np.random.default_rng([seed, 3]))
    model.train()
    params = dict(model.named_parameters())
    dtype = next(iter(params.values())).dtype
    state = AdamState()
    targets = train_set.labels.targets
    ids = train_set.sample_ids
    n = len(train_set)
    if n == 0:
        raise ValueError("training set is empty")

    result = TrainResult(model)
    best_auc, best_state = -math.inf, None
    step = 0
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n)
        losses, sizes = [], []
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            images = augment_batch(train_set.images[idx], hp.augment, rng)
            y = targets[idx]
            w1, w0 = batch_weights(y, [ids[i] for i in idx], weights, modifier, step)
            model.zero_grad()
            logits = model(_as_batch(images, dtype))
            loss = multilabel_loss_from_logits(logits, y, w1, w0)
            value = loss.item()
            if not math.isfinite(value):
                worst = max(float(np.abs(p.data).max()) for p in params.values())
                raise NumericalError(
                    f"non-finite loss {value} at epoch {epoch} step {step}; "
                    f"max |param| = {worst:.3g}, batch ids {[ids[i] for i in idx[:5]]}..."
                )
            loss.backward()
            adam_step(
                {k: p.data for k, p in params.items()},
                {k: p.grad for k, p in params.items()},
                state,
                lr=hp.lr,
                beta1=hp.beta1,
                beta2=hp.beta2,
                eps=hp.adam_eps,
            )
            losses.append(value)
            sizes.append(len(idx))
            step += 1
        train_loss = float(np.average(losses, weights=sizes))
        val_auc = float("nan")
        if val_set is not None and len(val_set):
            val_auc = mean_auc(evaluate_heads(predict_proba(model, val_set.images), val_set.labels))
        result.log.append(EpochLog(epoch, train_loss, val_auc))
        log.info("epoch %d  train_loss %.5f  val_auc_mean %.4f", epoch, train_loss, val_auc)
        if hp.select_best and not math.isnan(val_auc) and val_auc > best_auc:
            best_auc, best_state, result.best_epoch = val_auc, model.state_dict(), epoch
    if hp.select_best and best_state is not None:
        model.load_state_dict(best_state)
    else:
        result.best_epoch = hp.epochs
    model.eval()
    return result


def evaluate(model: Module, dataset: Dataset) -> list[RocResult | None]:
    return evaluate_heads(predict_proba(model, dataset.images), dataset.labels)
