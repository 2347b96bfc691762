"""Grid sweep over the modifier mean, plus baseline and unweighted arms."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..data import Dataset, SynthConfig, generate, split
from ..models import CustomNetConfig, SimpleCNNConfig, build_model
from ..weighting import ModifierConfig, head_class_weights
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

BASELINE = "baseline"
UNWEIGHTED = "unweighted"
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))

ModelConfig = Union[CustomNetConfig, SimpleCNNConfig]


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    synth: SynthConfig
    model: ModelConfig = Field(discriminator="kind")
    train: TrainConfig = Field(default_factory=TrainConfig)
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    split_seed: int = 0
    sigma: float = Field(0.05, ge=0.0)
    include_unweighted: bool = False


def mu_label(mu: float) -> str:
    return f"{mu:g}"


@dataclass(frozen=True)
class Arm:
    label: str
    seed: int
    mu: float | None = None
    weighted: bool = True


@dataclass
class ArmResult:
    arm: Arm
    aucs: list[float | None]
    error: str | None = None
    best_epoch: int = 0


@dataclass
class SweepReport:
    head_names: list[str]
    grid: list[float]
    seeds: list[int]
    results: list[ArmResult] = field(default_factory=list)

    def rows(self) -> list[tuple[str, int, str, float]]:
        out = []
        for r in self.results:
            for head, auc in zip(self.head_names, r.aucs):
                out.append((r.arm.label, r.arm.seed, head, float("nan") if auc is None else auc))
        return out

    @property
    def failures(self) -> list[tuple[Arm, str]]:
        return [(r.arm, r.error) for r in self.results if r.error]

    def summary(self) -> dict[tuple[str, str], tuple[float, float]]:
        """(arm label, head) -> (mean, stddev) over seeds, NaNs skipped."""
        acc: dict[tuple[str, str], list[float]] = {}
        for label, _, head, auc in self.rows():
            if not math.isnan(auc):
                acc.setdefault((label, head), []).append(auc)
        return {k: (float(np.mean(v)), float(np.std(v))) for k, v in acc.items()}

    def arm_mean(self, label: str, heads: Sequence[str] | None = None) -> float:
        heads = list(heads) if heads is not None else self.head_names
        summ = self.summary()
        vals = [summ[(label, h)][0] for h in heads if (label, h) in summ]
        return float(np.mean(vals)) if vals else float("nan")

    def optimal_mu(self) -> float | None:
        """Grid value with the highest mean AUC over all heads (ties go to the smaller mu)."""
        best, best_val = None, -math.inf
        for mu in sorted(self.grid):
            val = self.arm_mean(mu_label(mu))
            if not math.isnan(val) and val > best_val:
                best, best_val = mu, val
        return best

    def positive_heads(self) -> list[str]:
        return self.head_names[0::2]

    def negated_heads(self) -> list[str]:
        return self.head_names[1::2]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mu", "seed", "head", "auc"])
        for label, seed, head, auc in self.rows():
            w.writerow([label, seed, head, repr(auc)])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def build_arms(grid: Sequence[float], seeds: Sequence[int], include_unweighted: bool) -> list[Arm]:
    arms = []
    for seed in seeds:
        arms.append(Arm(BASELINE, seed))
        if include_unweighted:
            arms.append(Arm(UNWEIGHTED, seed, weighted=False))
        for mu in grid:
            arms.append(Arm(mu_label(mu), seed, mu=float(mu)))
    return arms


def run_arm(arm: Arm, cfg: SweepConfig, train_set: Dataset, val_set: Dataset, test_set: Dataset) -> ArmResult:
    try:
        model = build_model(cfg.model, seed=arm.seed)
        weights = head_class_weights(train_set.labels) if arm.weighted else None
        modifier = ModifierConfig(mu=arm.mu, sigma=cfg.sigma, seed=arm.seed) if arm.mu is not None else None
        res = train(model, train_set, val_set, weights, modifier, cfg.train, seed=arm.seed)
        aucs = [None if r is None else r.auc for r in evaluate(model, test_set)]
        return ArmResult(arm, aucs, best_epoch=res.best_epoch)
    except Exception as exc:  # annotate the report instead of aborting the sweep
        log.error("arm %s seed %d failed: %s", arm.label, arm.seed, exc)
        return ArmResult(arm, [None] * train_set.labels.targets.shape[1], error=f"{type(exc).__name__}: {exc}")


def _run_arm_star(args):
    return run_arm(*args)


def mu_sweep(
    grid: Sequence[float],
    seeds: Sequence[int],
    cfg: SweepConfig,
    jobs: int = 1,
    dataset: Dataset | None = None,
) -> SweepReport:
    if not grid:
        raise ValueError("mu grid must be non-empty")
    if not seeds:
        raise ValueError("at least one seed is required")
    for mu in grid:
        if not 0.0 <= mu <= 1.0:
            raise ValueError(f"mu values must lie in [0, 1], got {mu}")
    dataset = dataset if dataset is not None else generate(cfg.synth)
    train_set, val_set, test_set = split(dataset, cfg.split_fractions, cfg.split_seed)
    arms = build_arms(grid, seeds, cfg.include_unweighted)
    jobs_args = [(arm, cfg, train_set, val_set, test_set) for arm in arms]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_arm_star, jobs_args))
    else:
        results = [run_arm(*a) for a in jobs_args]
    return SweepReport(dataset.vocab.head_names(), [float(m) for m in grid], list(seeds), results)


def read_report_csv(path: str | Path) -> list[tuple[str, int, str, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["mu", "seed", "head", "auc"]:
            raise ValueError(f"{path}: expected header mu,seed,head,auc, got {header}")
        return [(r[0], int(r[1]), r[2], float(r[3])) for r in reader if r]
