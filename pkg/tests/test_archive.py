from datetime import date
from functools import lru_cache

import pytest
from hypothesis import given, settings, strategies as st

from coorddelay.archive import (
    UNKNOWN_SENDER,
    extract_sender,
    levenshtein,
    parse_archive,
    resolve_identities,
    similarity,
    strip_message,
)

FULL_WINDOW = (date(2008, 2, 1), date(2016, 12, 31))


# --- strip_message -------------------------------------------------------

def test_strip_removes_quotation_lines():
    assert strip_message("fix is out\n> old text\n") == "fix is out\n"


def test_strip_empty():
    assert strip_message("") == ""


def test_strip_indented_quote_marker():
    assert strip_message("keep\n  > indented quote\nalso keep") == "keep\nalso keep"


# Hand-stripped corpus: (raw, expected) pairs covering quotes, forwards,
# and their combinations.
STRIP_CORPUS = [
    ("plain text\nno markers\n", "plain text\nno markers\n"),
    ("a\n> q1\n> q2\nb\n", "a\nb\n"),
    ("head\n---------- Forwarded message ----------\ntail\n", "head\n"),
    ("head\n-- Original Message --\nold quoted mail\n", "head\n"),
    ("head\nBegin forwarded message:\nfrom elsewhere\n", "head\n"),
    ("> fully quoted\n> every line\n", ""),
    ("a\n>quote no space\nb\n", "a\nb\n"),
    ("before\n--------Forwarded Message--------\nafter\n> quoted\n", "before\n"),
    ("text with > inline marker stays\n", "text with > inline marker stays\n"),
    ("a\n\n> q\n\nb\n", "a\n\n\nb\n"),
]


@pytest.mark.parametrize("raw,expected", STRIP_CORPUS)
def test_strip_against_hand_stripped_corpus(raw, expected):
    assert strip_message(raw) == expected


@given(st.text(alphabet=st.characters(max_codepoint=1000), max_size=300))
@settings(max_examples=200, deadline=None)
def test_strip_idempotent(body):
    once = strip_message(body)
    assert strip_message(once) == once


# --- extract_sender ------------------------------------------------------

def test_sender_display_name_with_address():
    assert extract_sender("John Doe <jd@example.org>") == "John Doe"


def test_sender_name_with_commas():
    assert extract_sender("Christey, Steven M.") == "Christey, Steven M."


def test_sender_address_only_is_unknown():
    assert extract_sender("<only@addr>") == UNKNOWN_SENDER
    assert extract_sender("") == UNKNOWN_SENDER


def test_sender_quoted_name():
    assert extract_sender('"Jane Roe" <jr@example.org>') == "Jane Roe"


# --- similarity ----------------------------------------------------------

def _levenshtein_reference(a: str, b: str) -> int:
    """Definitional recursive edit distance, memoized."""

    @lru_cache(maxsize=None)
    def dist(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            dist(i - 1, j) + 1,
            dist(i, j - 1) + 1,
            dist(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return dist(len(a), len(b))


def test_similarity_identity():
    assert similarity("John Doe", "John Doe") == 1.0


def test_similarity_comma_variant_crosses_threshold():
    delta = similarity("John Doe", "John, Doe")
    assert delta == pytest.approx(1.0 - 1.0 / 9.0)
    assert delta >= 0.8


def test_similarity_disjoint_names():
    assert similarity("Alice", "Bob") == 0.0


def test_similarity_case_fold_and_trim():
    assert similarity("  JOHN DOE ", "john doe") == 1.0


def test_similarity_both_empty_errors():
    with pytest.raises(ValueError):
        similarity("  ", "")


@given(st.text(max_size=12), st.text(max_size=12))
@settings(max_examples=150, deadline=None)
def test_levenshtein_matches_reference(a, b):
    assert levenshtein(a, b) == _levenshtein_reference(a, b)


nonblank = st.text(min_size=1, max_size=10).filter(lambda s: s.strip())


@given(nonblank, nonblank)
@settings(max_examples=150, deadline=None)
def test_similarity_symmetric(a, b):
    assert similarity(a, b) == pytest.approx(similarity(b, a))


@given(
    st.text(min_size=1, max_size=8),
    st.text(min_size=1, max_size=8),
    st.text(min_size=1, max_size=8),
)
@settings(max_examples=150, deadline=None)
def test_distance_triangle_inequality(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


# --- resolve_identities --------------------------------------------------

def test_resolve_merges_near_duplicates():
    participants = resolve_identities(["John Doe", "John, Doe", "Bob"])
    assert len(participants) == 2
    merged = next(p for p in participants if "John Doe" in p.aliases)
    assert merged.aliases == {"John Doe", "John, Doe"}


def test_resolve_manual_merge():
    names = ["Christey, Steven M.", "Steven M. Christey"]
    assert len(resolve_identities(names)) == 2
    merged = resolve_identities(
        names, manual_merges=[("Christey, Steven M.", "Steven M. Christey")]
    )
    assert len(merged) == 1


def test_resolve_canonical_most_frequent_then_lexicographic():
    participants = resolve_identities(["John, Doe", "John, Doe", "John Doe"])
    assert participants[0].canonical_name == "John, Doe"
    tie = resolve_identities(["John Doe", "John, Doe"])
    assert tie[0].canonical_name == "John Doe"  # tie: lexicographically first


def test_resolve_partition_property():
    names = ["A. Person", "B. Person", "A. Person", "Carol X", "carol x"]
    participants = resolve_identities(names)
    seen = [alias for p in participants for alias in p.aliases]
    assert sorted(seen) == sorted(set(names))


@given(st.permutations(["John Doe", "John, Doe", "Bob Jones", "bob jones", "Eve"]))
@settings(max_examples=50, deadline=None)
def test_resolve_order_independent(names):
    participants = resolve_identities(list(names))
    signature = sorted(
        (p.canonical_name, tuple(sorted(p.aliases))) for p in participants
    )
    baseline = resolve_identities(sorted(names))
    assert signature == sorted(
        (p.canonical_name, tuple(sorted(p.aliases))) for p in baseline
    )


def test_resolve_threshold_validation():
    with pytest.raises(ValueError):
        resolve_identities(["a"], threshold=0.0)


# --- parse_archive -------------------------------------------------------

def test_parse_mbox_full_window(data_dir):
    result = parse_archive(data_dir / "fixture.mbox", FULL_WINDOW)
    assert len(result) == 20
    assert result.dropped_outside_window == 0
    senders = {m.sender_raw for m in result}
    assert "Kurt Seifried" in senders and UNKNOWN_SENDER in senders
    for message in result:
        assert not any(
            line.lstrip().startswith(">") for line in message.body.splitlines()
        )
        assert FULL_WINDOW[0] <= message.sent_at.date() <= FULL_WINDOW[1]


def test_parse_mbox_window_filter(data_dir):
    result = parse_archive(
        data_dir / "fixture.mbox", (date(2008, 2, 1), date(2008, 12, 31))
    )
    assert len(result) == 17
    assert result.dropped_outside_window == 3


def test_parse_html_directory_matches_mbox(data_dir):
    from_dir = parse_archive(data_dir / "html_archive", FULL_WINDOW)
    from_mbox = parse_archive(data_dir / "fixture.mbox", FULL_WINDOW)
    assert len(from_dir) == 3
    by_subject = {m.subject: m for m in from_mbox.messages[:3]}
    for message in from_dir:
        twin = by_subject[message.subject]
        assert message.sender_raw == twin.sender_raw
        assert message.sent_at == twin.sent_at
        assert message.body.strip() == twin.body.strip()


def test_parse_skips_malformed_page(tmp_path):
    good = tmp_path / "ok.html"
    good.write_text(
        "<html><body><pre>\nDate: Tue, 05 Feb 2008 12:00:00 +0000\n"
        "From: A Person\nSubject: hello\n\nbody\n</pre></body></html>",
        encoding="utf-8",
    )
    undated = tmp_path / "bad.html"
    undated.write_text("<html><body>no headers at all</body></html>", encoding="utf-8")
    result = parse_archive(tmp_path, FULL_WINDOW)
    assert len(result) == 1
    assert result.dropped_undated == 1


def test_parse_unreadable_source_fatal(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_archive(tmp_path / "missing", FULL_WINDOW)
