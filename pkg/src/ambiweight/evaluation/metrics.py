from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..labelcore import LabelMatrix

log = logging.getLogger(__name__)


class UndefinedAUCError(ValueError):
    pass


@dataclass(frozen=True)
class RocResult:
    head_id: int
    auc: float
    n_pos: int
    n_neg: int


def _split_classes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    return scores, pos, n_pos, n_neg


def roc_auc(scores, labels, head_id: int = 0) -> RocResult:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), via midranks."""
    scores, pos, n_pos, n_neg = _split_classes(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # midrank of each tie group, in doubled units to stay integral
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(scores)]))
    doubled = np.empty(len(scores), dtype=np.int64)
    doubled[order] = np.repeat(starts + ends + 1, ends - starts)
    rank_sum2 = int(doubled[pos].sum())
    # 2*U = 2*R_pos - n_pos*(n_pos+1)
    u2 = rank_sum2 - n_pos * (n_pos + 1)
    return RocResult(head_id, u2 / (2 * n_pos * n_neg), n_pos, n_neg)


def roc_auc_bruteforce(scores, labels, head_id: int = 0) -> RocResult:
    """O(n^2) pair count; reference for ``roc_auc``."""
    scores, pos, n_pos, n_neg = _split_classes(scores, labels)
    sp, sn = scores[pos], scores[~pos]
    wins2 = 0
    for chunk in np.array_split(sp, max(1, len(sp) // 512)):
        diff = chunk[:, None] - sn[None, :]
        wins2 += 2 * int(np.count_nonzero(diff > 0)) + int(np.count_nonzero(diff == 0))
    return RocResult(head_id, wins2 / (2 * n_pos * n_neg), n_pos, n_neg)


def filter_unambiguous(labels: LabelMatrix, finding_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows whose pair for ``finding_id`` is (1,0) or (0,1).

    Returns (row indices, positive-head targets, negated-head targets).
    """
    a, a_bar = labels.pair(finding_id)
    keep = np.flatnonzero(a != a_bar)
    if len(keep) == 0:
        log.warning("finding %d: no unambiguous samples, evaluation skipped", finding_id)
    return keep, a[keep].astype(np.int8), a_bar[keep].astype(np.int8)


def evaluate_heads(probs: np.ndarray, labels: LabelMatrix) -> list[RocResult | None]:
    """AUC per head on unambiguous samples; None where undefined."""
    out: list[RocResult | None] = []
    for k in range(labels.n_findings):
        keep, a, a_bar = filter_unambiguous(labels, k)
        for head, target in ((2 * k, a), (2 * k + 1, a_bar)):
            try:
                out.append(roc_auc(probs[keep, head], target, head_id=head))
            except UndefinedAUCError:
                out.append(None)
    return out


def mean_auc(results: list[RocResult | None]) -> float:
    vals = [r.auc for r in results if r is not None]
    return float(np.mean(vals)) if vals else float("nan")
