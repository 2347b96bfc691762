"""Finding vocabulary, mention states, negated-pair logic and the label matrix.

Head layout is interleaved: finding ``k`` owns ``positive_head = 2k`` and
``negated_head = 2k + 1``. Manifests and checkpoints rely on this order.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class VocabularyError(ValueError):
    pass


class ContradictionError(ValueError):
    """A (1, 1) negated pair was found where only consistent labels are allowed."""


class MentionState(enum.Enum):
    AFFIRMED = "affirmed"
    NEGATED = "negated"
    NOMENTION = "nomention"

    @classmethod
    def parse(cls, text: str) -> "MentionState":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown mention state {text!r} (expected affirmed|negated|nomention)") from None


class PairState(enum.Enum):
    CONTRADICTION = "contradiction"
    POSITIVE_EXISTS = "positive_exists"
    NEGATION_EXISTS = "negation_exists"
    AMBIGUOUS = "ambiguous"


_PAIR_TABLE = {
    (1, 1): PairState.CONTRADICTION,
    (1, 0): PairState.POSITIVE_EXISTS,
    (0, 1): PairState.NEGATION_EXISTS,
    (0, 0): PairState.AMBIGUOUS,
}

_STATE_BITS = {
    MentionState.AFFIRMED: (1, 0),
    MentionState.NEGATED: (0, 1),
    MentionState.NOMENTION: (0, 0),
}


def pair_state(a: int, a_bar: int) -> PairState:
    key = (int(a), int(a_bar))
    if key not in _PAIR_TABLE:
        raise ValueError(f"pair ({a}, {a_bar}) is not made of 0/1 bits")
    return _PAIR_TABLE[key]


def state_bits(state: MentionState) -> tuple[int, int]:
    return _STATE_BITS[state]


def state_from_bits(a: int, a_bar: int) -> MentionState:
    """Inverse of the target encoding; raises on a contradiction."""
    for state, bits in _STATE_BITS.items():
        if bits == (int(a), int(a_bar)):
            return state
    raise ContradictionError(f"pair ({a}, {a_bar}) has no mention state")


@dataclass(frozen=True)
class Finding:
    finding_id: int
    name: str
    synonyms: tuple[str, ...]

    @property
    def positive_head(self) -> int:
        return 2 * self.finding_id

    @property
    def negated_head(self) -> int:
        return 2 * self.finding_id + 1


@dataclass(frozen=True)
class FindingVocabulary:
    findings: tuple[Finding, ...]

    def __post_init__(self):
        ids = [f.finding_id for f in self.findings]
        if sorted(ids) != list(range(len(ids))):
            raise VocabularyError(f"finding ids must be unique and cover 0..K-1, got {ids}")
        for f in self.findings:
            if not f.synonyms:
                raise VocabularyError(f"finding {f.name!r} has no synonyms")
            for s in f.synonyms:
                if not s or s != s.lower():
                    raise VocabularyError(f"synonym {s!r} of {f.name!r} must be non-empty lowercase")
        object.__setattr__(self, "findings", tuple(sorted(self.findings, key=lambda f: f.finding_id)))

    @classmethod
    def from_names(cls, names: Sequence[str], synonyms: Sequence[Sequence[str]] | None = None) -> "FindingVocabulary":
        synonyms = synonyms or [[n.lower()] for n in names]
        return cls(tuple(Finding(i, n, tuple(s)) for i, (n, s) in enumerate(zip(names, synonyms))))

    @classmethod
    def parse(cls, text: str) -> "FindingVocabulary":
        """Parse ``finding_id,canonical_name,syn1|syn2`` lines; ``#`` starts a comment."""
        entries = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise VocabularyError(f"line {lineno}: expected 3 comma-separated fields, got {len(parts)}")
            try:
                fid = int(parts[0])
            except ValueError:
                raise VocabularyError(f"line {lineno}: finding id {parts[0]!r} is not an integer") from None
            syns = tuple(s.strip() for s in parts[2].split("|") if s.strip())
            entries.append(Finding(fid, parts[1], syns))
        return cls(tuple(entries))

    @classmethod
    def load(cls, path: str | Path) -> "FindingVocabulary":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        return "".join(f"{f.finding_id},{f.name},{'|'.join(f.synonyms)}\n" for f in self.findings)

    def __len__(self) -> int:
        return len(self.findings)

    @property
    def n_heads(self) -> int:
        return 2 * len(self.findings)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.findings]

    def __getitem__(self, finding_id: int) -> Finding:
        if not 0 <= finding_id < len(self.findings):
            raise KeyError(f"unknown finding id {finding_id}")
        return self.findings[finding_id]

    def head_names(self) -> list[str]:
        out = []
        for f in self.findings:
            out += [f.name, f"no {f.name}"]
        return out


def encode_targets(states: Sequence[MentionState], vocab: FindingVocabulary) -> np.ndarray:
    if len(states) != len(vocab):
        raise VocabularyError(f"got {len(states)} mention states for a vocabulary of {len(vocab)} findings")
    row = np.zeros(vocab.n_heads, dtype=np.int8)
    for f, s in zip(vocab.findings, states):
        row[f.positive_head], row[f.negated_head] = _STATE_BITS[s]
    return row


@dataclass(frozen=True)
class Violation:
    sample_index: int
    sample_id: str
    finding_id: int


@dataclass
class LabelMatrix:
    targets: np.ndarray  # n_samples x 2K, int8 in {0, 1}
    sample_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int8)
        if self.targets.ndim != 2 or self.targets.shape[1] % 2:
            raise ValueError(f"targets must be n x 2K, got shape {self.targets.shape}")
        if not self.sample_ids:
            self.sample_ids = [str(i) for i in range(len(self.targets))]
        if len(self.sample_ids) != len(self.targets):
            raise ValueError(f"{len(self.sample_ids)} sample ids for {len(self.targets)} rows")

    @classmethod
    def from_states(
        cls, rows: Iterable[Sequence[MentionState]], vocab: FindingVocabulary, sample_ids: Sequence[str] | None = None
    ) -> "LabelMatrix":
        rows = list(rows)
        targets = np.stack([encode_targets(r, vocab) for r in rows]) if rows else np.zeros((0, vocab.n_heads), np.int8)
        return cls(targets, list(sample_ids) if sample_ids is not None else [])

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def n_findings(self) -> int:
        return self.targets.shape[1] // 2

    def pair(self, finding_id: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= finding_id < self.n_findings:
            raise KeyError(f"unknown finding id {finding_id}")
        return self.targets[:, 2 * finding_id], self.targets[:, 2 * finding_id + 1]

    def ambiguous_mask(self) -> np.ndarray:
        """n × K boolean, True where the pair is (0, 0)."""
        return (self.targets[:, 0::2] == 0) & (self.targets[:, 1::2] == 0)

    def states(self) -> list[list[MentionState]]:
        return [
            [state_from_bits(row[2 * k], row[2 * k + 1]) for k in range(self.n_findings)] for row in self.targets
        ]

    def subset(self, idx: Sequence[int] | np.ndarray) -> "LabelMatrix":
        idx = np.asarray(idx, dtype=int)
        return LabelMatrix(self.targets[idx], [self.sample_ids[i] for i in idx])


def ambiguity_rate(matrix: LabelMatrix, finding_id: int) -> float:
    a, a_bar = matrix.pair(finding_id)
    if len(a) == 0:
        return 0.0
    return float(np.count_nonzero((a == 0) & (a_bar == 0)) / len(a))


def validate(matrix: LabelMatrix) -> list[Violation]:
    both = (matrix.targets[:, 0::2] == 1) & (matrix.targets[:, 1::2] == 1)
    return [Violation(int(i), matrix.sample_ids[i], int(k)) for i, k in zip(*np.nonzero(both))]


def enforce_consistency(matrix: LabelMatrix, strict: bool = True) -> LabelMatrix:
    """Reject (strict) or drop (lenient) samples carrying a (1, 1) pair."""
    bad = validate(matrix)
    if not bad:
        return matrix
    if strict:
        first = bad[0]
        raise ContradictionError(
            f"sample {first.sample_id!r} has contradictory labels for finding {first.finding_id}"
            + (f" (and {len(bad) - 1} more)" if len(bad) > 1 else "")
        )
    drop = {v.sample_index for v in bad}
    log.warning("dropping %d sample(s) with contradictory negated pairs", len(drop))
    return matrix.subset([i for i in range(len(matrix)) if i not in drop])
