"""Rule-based mention extraction from report text.

Dictionary lookup finds finding mentions; NegEx-style pre-triggers decide
polarity. Scope runs backwards from a mention over a fixed window of
``max_scope_tokens`` tokens and stops at a terminator; list separators
("," / "and") do not end it, so one trigger covers a short list.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .labelcore import FindingVocabulary, MentionState


class Polarity(enum.Enum):
    AFFIRMED = "affirmed"
    NEGATED = "negated"


@dataclass(frozen=True)
class Report:
    report_id: str
    body: str

    def __post_init__(self):
        if not " ".join(self.body.split()):
            raise ValueError(f"report {self.report_id!r} has an empty body")


@dataclass(frozen=True)
class Mention:
    finding_id: int
    start: int
    end: int
    polarity: Polarity | None = None


_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?|[^\sa-z0-9]")


def tokenize(body: str) -> list[str]:
    return _TOKEN.findall(body.lower())


DEFAULT_TERMINATORS = (".", ";", "!", "?", ":", "but", "however", "although", "though", "except", "yet")


@dataclass(frozen=True)
class NegationRuleSet:
    pre_triggers: tuple[str, ...]
    scope_terminators: tuple[str, ...] = DEFAULT_TERMINATORS
    max_scope_tokens: int = 6
    _trigger_tokens: tuple[tuple[str, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.max_scope_tokens < 1:
            raise ValueError("max_scope_tokens must be >= 1")
        for t in self.pre_triggers:
            if not t or t != t.lower():
                raise ValueError(f"trigger {t!r} must be non-empty lowercase")
        toks = tuple(sorted((tuple(tokenize(t)) for t in self.pre_triggers), key=len, reverse=True))
        object.__setattr__(self, "_trigger_tokens", toks)

    @classmethod
    def from_trigger_text(cls, text: str, **kwargs) -> "NegationRuleSet":
        triggers = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip().lower()
            if line:
                triggers.append(line)
        return cls(tuple(triggers), **kwargs)

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> "NegationRuleSet":
        return cls.from_trigger_text(Path(path).read_text(encoding="utf-8"), **kwargs)

    def trigger_ending_at(self, tokens: Sequence[str], j: int, lower: int) -> bool:
        """True when a trigger occupies tokens[i:j+1] with i >= lower."""
        for trig in self._trigger_tokens:
            i = j - len(trig) + 1
            if i >= lower and tuple(tokens[i : j + 1]) == trig:
                return True
        return False


def _resource_text(name: str) -> str:
    return resources.files("ambiweight.resources").joinpath(name).read_text(encoding="utf-8")


DEFAULT_RULES = NegationRuleSet.from_trigger_text(_resource_text("triggers.txt"))


def default_vocabulary() -> FindingVocabulary:
    return FindingVocabulary.parse(_resource_text("vocabulary.txt"))


def find_mentions(tokens: Sequence[str], vocab: FindingVocabulary) -> list[Mention]:
    """Greedy left-to-right longest match over all synonyms."""
    patterns: list[tuple[tuple[str, ...], int]] = []
    for f in vocab.findings:
        for syn in f.synonyms:
            patterns.append((tuple(tokenize(syn)), f.finding_id))
    patterns.sort(key=lambda p: len(p[0]), reverse=True)
    out = []
    i = 0
    while i < len(tokens):
        for pat, fid in patterns:
            if pat and tuple(tokens[i : i + len(pat)]) == pat:
                out.append(Mention(fid, i, i + len(pat)))
                i += len(pat)
                break
        else:
            i += 1
    return out


def resolve_polarity(tokens: Sequence[str], mention: Mention, rules: NegationRuleSet) -> Polarity:
    if not 0 <= mention.start < mention.end <= len(tokens):
        raise ValueError(f"mention span ({mention.start}, {mention.end}) outside {len(tokens)} tokens")
    # the window is fixed: tokens before start - max_scope_tokens are never read.
    # list separators ("," / "and") carry the trigger; only terminators stop it.
    lower = max(0, mention.start - rules.max_scope_tokens)
    for j in range(mention.start - 1, lower - 1, -1):
        if tokens[j] in rules.scope_terminators:
            return Polarity.AFFIRMED
        if rules.trigger_ending_at(tokens, j, lower=lower):
            return Polarity.NEGATED
    return Polarity.AFFIRMED


def label_report(report: Report, vocab: FindingVocabulary, rules: NegationRuleSet = DEFAULT_RULES) -> list[MentionState]:
    """Per-finding state; any affirmed mention wins over negated ones."""
    tokens = tokenize(report.body)
    states = [MentionState.NOMENTION] * len(vocab)
    for m in find_mentions(tokens, vocab):
        pol = resolve_polarity(tokens, m, rules)
        if pol is Polarity.AFFIRMED:
            states[m.finding_id] = MentionState.AFFIRMED
        elif states[m.finding_id] is MentionState.NOMENTION:
            states[m.finding_id] = MentionState.NEGATED
    return states


_AFFIRM_TEMPLATES = ("there is {}.", "{} is present.", "{} noted.", "findings consistent with {}.")
_FILLERS = ("heart size is normal.", "the mediastinum is unremarkable.", "lines and tubes unchanged.")


def synth_report(states: Sequence[MentionState], vocab: FindingVocabulary, rng: np.random.Generator) -> str:
    """Compose a report whose labels round-trip through ``label_report``."""
    sentences = []
    negated = [vocab[k].synonyms[0] for k, s in enumerate(states) if s is MentionState.NEGATED]
    for k, s in enumerate(states):
        if s is MentionState.AFFIRMED:
            tmpl = _AFFIRM_TEMPLATES[rng.integers(len(_AFFIRM_TEMPLATES))]
            sentences.append(tmpl.format(vocab[k].synonyms[0]))
    # at most two findings per negation sentence keeps every one inside the scope window
    for i in range(0, len(negated), 2):
        sentences.append("no " + " and ".join(negated[i : i + 2]) + ".")
    sentences.append(_FILLERS[rng.integers(len(_FILLERS))])
    order = rng.permutation(len(sentences))
    return " ".join(sentences[i] for i in order)
