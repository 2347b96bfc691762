import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambiweight.labelcore import FindingVocabulary, MentionState
from ambiweight.textlabeler import (
    DEFAULT_RULES,
    Mention,
    NegationRuleSet,
    Polarity,
    Report,
    default_vocabulary,
    find_mentions,
    label_report,
    resolve_polarity,
    synth_report,
    tokenize,
)

FIXTURES = Path(__file__).parent / "fixtures"
VOCAB = default_vocabulary()


def _labels(body, vocab=VOCAB, rules=DEFAULT_RULES):
    return dict(zip(vocab.names, (s.value for s in label_report(Report("r", body), vocab, rules))))


def test_tokenize_examples():
    assert tokenize("No pneumothorax.") == ["no", "pneumothorax", "."]
    assert tokenize("") == []
    assert tokenize("pleural effusion, consolidation") == ["pleural", "effusion", ",", "consolidation"]


def test_find_mentions_examples():
    toks = tokenize("pulmonary edema present")
    ms = find_mentions(toks, VOCAB)
    assert [(m.finding_id, m.start, m.end) for m in ms] == [(2, 0, 2)]
    assert find_mentions(tokenize("heart size normal"), VOCAB) == []


def test_longest_match_wins():
    vocab = FindingVocabulary.from_names(["edema", "pulmonary edema"], [["edema"], ["pulmonary edema"]])
    ms = find_mentions(tokenize("pulmonary edema"), vocab)
    assert [(m.finding_id, m.start, m.end) for m in ms] == [(1, 0, 2)]


def test_resolve_polarity_examples():
    labels = _labels("no pneumothorax, pleural effusion and consolidation")
    for name in ("pneumothorax", "pleural effusion", "consolidation"):
        assert labels[name] == "negated"
    assert _labels("pneumothorax is present")["pneumothorax"] == "affirmed"
    lab = _labels("no fracture. consolidation noted")
    assert lab["fracture"] == "negated" and lab["consolidation"] == "affirmed"


def test_label_report_examples():
    vocab = FindingVocabulary.from_names(["consolidation", "pneumothorax", "fracture"])
    assert _labels("no consolidation", vocab) == {
        "consolidation": "negated",
        "pneumothorax": "nomention",
        "fracture": "nomention",
    }
    assert set(_labels("heart size is normal", vocab).values()) == {"nomention"}
    assert _labels("consolidation in left lobe. no consolidation on right")["consolidation"] == "affirmed"


def test_hedged_mentions_are_affirmed():
    assert _labels("possible consolidation")["consolidation"] == "affirmed"
    assert _labels("cannot exclude pneumothorax")["pneumothorax"] == "affirmed"


def test_scope_window_is_bounded():
    rules = NegationRuleSet(DEFAULT_RULES.pre_triggers, max_scope_tokens=2)
    assert _labels("no acute fracture", rules=rules)["fracture"] == "negated"
    assert _labels("no acute displaced fracture", rules=rules)["fracture"] == "affirmed"


class _Spy(list):
    """Token list that records which indices were read."""

    def __init__(self, items):
        super().__init__(items)
        self.seen = set()

    def __getitem__(self, i):
        if isinstance(i, slice):
            self.seen.update(range(*i.indices(len(self))))
        else:
            self.seen.add(i if i >= 0 else len(self) + i)
        return super().__getitem__(i)


WORDS = ["no", "not", "and", ",", ".", "mild", "free", "of", "evidence", "without", "x", "negative", "for"]


@settings(max_examples=200)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=20), st.integers(1, 8), st.data())
def test_polarity_never_reads_outside_window(tokens, scope, data):
    start = data.draw(st.integers(0, len(tokens) - 1))
    end = data.draw(st.integers(start + 1, len(tokens)))
    rules = NegationRuleSet(DEFAULT_RULES.pre_triggers, max_scope_tokens=scope)
    spy = _Spy(tokens)
    resolve_polarity(spy, Mention(0, start, end), rules)
    assert all(start - scope <= i <= end for i in spy.seen)


@settings(max_examples=100)
@given(st.lists(st.sampled_from(list(MentionState)), min_size=6, max_size=6), st.integers(0, 2**32 - 1))
def test_synth_report_round_trips(states, seed):
    body = synth_report(states, VOCAB, np.random.default_rng(seed))
    assert label_report(Report("r", body), VOCAB) == states


def test_label_report_is_deterministic():
    body = "no pneumothorax. small effusion. without fracture"
    assert label_report(Report("a", body), VOCAB) == label_report(Report("b", body), VOCAB)


def test_empty_report_body_rejected():
    with pytest.raises(ValueError):
        Report("r", "   ")


def test_rules_validate_triggers(tmp_path):
    with pytest.raises(ValueError):
        NegationRuleSet(("No",))
    with pytest.raises(ValueError):
        NegationRuleSet(("no",), max_scope_tokens=0)
    path = tmp_path / "t.txt"
    path.write_text("# c\nabsent\n\n", encoding="utf-8")
    rules = NegationRuleSet.load(path)
    assert rules.pre_triggers == ("absent",)
    assert _labels("absent pneumothorax", rules=rules)["pneumothorax"] == "negated"
    assert _labels("no pneumothorax", rules=rules)["pneumothorax"] == "affirmed"


def _golden():
    with (FIXTURES / "golden_reports.jsonl").open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@pytest.mark.parametrize("case", _golden(), ids=lambda c: c["report_id"])
def test_golden_fixture(case):
    assert _labels(case["body"]) == case["expected"]


def test_golden_fixture_size():
    assert len(_golden()) == 20
