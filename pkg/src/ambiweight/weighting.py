"""Per-head class weights and Gaussian weight modifiers for ambiguous pairs."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .labelcore import LabelMatrix, PairState


class EmptyClassError(ValueError):
    pass


class InvalidSampleError(ValueError):
    pass


@dataclass(frozen=True)
class ClassWeights:
    w1: float
    w0: float
    f1: int
    f0: int


@dataclass(frozen=True)
class ModifierConfig:
    mu: float
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")


@dataclass(frozen=True)
class ModifierDraw:
    m: float
    m_bar: float


def class_weights(f1: int, f0: int) -> ClassWeights:
    total = f1 + f0
    if total <= 0:
        raise EmptyClassError("class weights need at least one sample (f1 + f0 = 0)")
    w1 = f0 / total
    return ClassWeights(w1=w1, w0=1.0 - w1, f1=int(f1), f0=int(f0))


def head_class_weights(matrix: LabelMatrix) -> list[ClassWeights]:
    """Class weights for every head, counting 1s and 0s in its column."""
    f1 = matrix.targets.sum(axis=0).astype(int)
    n = len(matrix)
    return [class_weights(int(c), n - int(c)) for c in f1]


def draw_modifier(cfg: ModifierConfig, rng: np.random.Generator) -> ModifierDraw:
    m = float(np.clip(rng.normal(cfg.mu, cfg.sigma), 0.0, 1.0)) if cfg.sigma > 0 else cfg.mu
    return ModifierDraw(m=m, m_bar=1.0 - m)


def modifier_rng(seed: int, sample_id: str, step: int) -> np.random.Generator:
    """Stream keyed by (seed, sample_id, step); independent of batch composition."""
    return np.random.default_rng([seed, zlib.crc32(sample_id.encode("utf-8")), step])


def effective_weights(
    pair: PairState, pos: ClassWeights, neg: ClassWeights, draw: ModifierDraw
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Return ((w1, w0) for the positive head, (w1, w0) for the negated head)."""
    if pair is PairState.CONTRADICTION:
        raise InvalidSampleError("contradictory (1, 1) pair cannot be weighted")
    if pair is PairState.AMBIGUOUS:
        return (pos.w1, pos.w0 * draw.m), (neg.w1, neg.w0 * draw.m_bar)
    return (pos.w1, pos.w0), (neg.w1, neg.w0)


def batch_weights(
    targets: np.ndarray,
    sample_ids: list[str],
    heads: list[ClassWeights] | None,
    modifier: ModifierConfig | None,
    step: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample per-head (w1, w0) arrays for a training batch.

    ``heads=None`` means unit weights (unweighted arm); ``modifier=None``
    disables the modifiers (baseline arm). Modifier draws are fresh per
    (sample, finding, step).
    """
    n, n_heads = targets.shape
    k = n_heads // 2
    if heads is None:
        base_w1 = np.ones(n_heads)
        base_w0 = np.ones(n_heads)
    else:
        base_w1 = np.array([h.w1 for h in heads])
        base_w0 = np.array([h.w0 for h in heads])
    w1 = np.tile(base_w1, (n, 1))
    w0 = np.tile(base_w0, (n, 1))
    pos, neg = targets[:, 0::2], targets[:, 1::2]
    if np.any((pos == 1) & (neg == 1)):
        raise InvalidSampleError("batch contains a contradictory (1, 1) pair")
    if modifier is None:
        return w1, w0
    ambiguous = (pos == 0) & (neg == 0)
    for i in np.nonzero(ambiguous.any(axis=1))[0]:
        if modifier.sigma > 0:
            rng = modifier_rng(modifier.seed, sample_ids[i], step)
            m = np.clip(rng.normal(modifier.mu, modifier.sigma, size=k), 0.0, 1.0)
        else:
            m = np.full(k, modifier.mu)
        amb = ambiguous[i]
        w0[i, 0::2][amb] *= m[amb]
        w0[i, 1::2][amb] *= 1.0 - m[amb]
    return w1, w0
