"""Mailing-list archive ingestion and participant identity resolution.

Two archive layouts are supported: a directory of per-message HTML pages
(one file per message, headers rendered as plain ``Date:`` / ``From:`` /
``Subject:`` lines once tags are stripped) and a standard mbox file.
Senders are identified by display name only; archives obfuscate addresses.
"""

from __future__ import annotations

import html
import html.parser
import logging
import mailbox
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from email.utils import parsedate_to_datetime
from pathlib import Path

log = logging.getLogger(__name__)

UNKNOWN_SENDER = "unknown"
DEFAULT_SIMILARITY_THRESHOLD = 0.8

QUOTE_MARKER = ">"
# A line that introduces forwarded or re-sent content truncates the body.
FORWARD_MARKERS = re.compile(
    r"^\s*("
    r"-{2,}\s*forwarded message\s*-{2,}"
    r"|-{2,}\s*original message\s*-{2,}"
    r"|begin forwarded message:?"
    r")\s*$",
    re.IGNORECASE,
)

# Display name in a From header: everything before the address part, or the
# whole header when no address is present.
NAME_PATTERN = re.compile(r'^\s*"?([^"<]+?)"?\s*(?:<[^>]*>)?\s*$')


@dataclass(frozen=True)
class RawEmail:
    """One archived message after cleaning."""

    message_key: str
    sent_at: datetime
    sender_raw: str
    subject: str
    body: str


@dataclass
class Participant:
    """A resolved sender identity covering one or more raw name spellings."""

    canonical_name: str
    aliases: set[str]
    message_keys: set[str] = field(default_factory=set)


@dataclass
class IngestResult:
    """Messages retained by :func:`parse_archive` plus drop diagnostics."""

    messages: list[RawEmail]
    dropped_outside_window: int = 0
    dropped_undated: int = 0
    dropped_malformed: int = 0

    def __iter__(self):
        return iter(self.messages)

    def __len__(self) -> int:
        return len(self.messages)


class _TextExtractor(html.parser.HTMLParser):
    """Strip HTML tags, keeping block structure as newlines."""

    _BLOCK = {"p", "br", "div", "tr", "li", "pre", "blockquote"}

    def __init__(self) -> None:
        super().__init__()
        self.chunks: list[str] = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self._skip += 1
        elif tag in self._BLOCK:
            self.chunks.append("\n")

    def handle_endtag(self, tag):
        if tag in ("script", "style") and self._skip:
            self._skip -= 1
        elif tag in self._BLOCK:
            self.chunks.append("\n")

    def handle_data(self, data):
        if not self._skip:
            self.chunks.append(data)


def strip_html(markup: str) -> str:
    parser = _TextExtractor()
    parser.feed(markup)
    text = html.unescape("".join(parser.chunks))
    text = re.sub(r"[ \t]+\n", "\n", text)
    return re.sub(r"\n{3,}", "\n\n", text).strip("\n")


def strip_message(raw_body: str) -> str:
    """Remove quotation lines and truncate at the first forward marker.

    A quotation line is one whose first non-blank character is the quote
    marker. Kept lines retain their original terminators, so the output is
    a subsequence of the input and stripping is idempotent.
    """
    kept: list[str] = []
    for line in raw_body.splitlines(keepends=True):
        pieces = line.splitlines()
        bare = pieces[0] if pieces else ""
        if bare.lstrip().startswith(QUOTE_MARKER):
            continue
        if FORWARD_MARKERS.match(bare):
            break
        kept.append(line)
    return "".join(kept)


def extract_sender(from_header: str) -> str:
    """First display-name match in a From header, or ``"unknown"``."""
    if from_header:
        match = NAME_PATTERN.match(from_header)
        if match:
            name = match.group(1).strip()
            if name:
                return name
    return UNKNOWN_SENDER


def _normalize_name(name: str) -> str:
    return name.strip().casefold()


def levenshtein(a: str, b: str) -> int:
    """Edit distance (insert, delete, substitute all cost 1)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[len(b)]


def similarity(s1: str, s2: str) -> float:
    """Name similarity in [0, 1]: one minus normalized edit distance.

    Names are case-folded and trimmed before comparison so trivial
    spelling differences do not defeat the threshold.
    """
    n1, n2 = _normalize_name(s1), _normalize_name(s2)
    longest = max(len(n1), len(n2))
    if longest == 0:
        raise ValueError("similarity undefined for two empty names")
    return 1.0 - levenshtein(n1, n2) / longest


class _UnionFind:
    def __init__(self, items):
        self.parent = {item: item for item in items}

    def find(self, item):
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # deterministic root: lexicographically smaller name wins
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def resolve_identities(
    names: list[str],
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    manual_merges: list[tuple[str, str]] | None = None,
) -> list[Participant]:
    """Partition raw sender names into participants.

    All pairs with similarity at or above ``threshold`` are merged, plus any
    explicitly configured pairs; merging is transitive (union-find), so the
    result does not depend on input order. The canonical name of a
    participant is its most frequent alias, ties broken lexicographically.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    counts: dict[str, int] = {}
    for name in names:
        counts[name] = counts.get(name, 0) + 1
    unique = sorted(counts)
    uf = _UnionFind(unique)
    for i, a in enumerate(unique):
        for b in unique[i + 1 :]:
            if similarity(a, b) >= threshold:
                uf.union(a, b)
    by_norm: dict[str, list[str]] = {}
    for name in unique:
        by_norm.setdefault(_normalize_name(name), []).append(name)
    for left, right in manual_merges or []:
        la = by_norm.get(_normalize_name(left))
        rb = by_norm.get(_normalize_name(right))
        if not la or not rb:
            log.warning("manual merge pair (%r, %r) not found in archive", left, right)
            continue
        uf.union(la[0], rb[0])

    groups: dict[str, list[str]] = {}
    for name in unique:
        groups.setdefault(uf.find(name), []).append(name)
    participants = []
    for aliases in groups.values():
        best = max(counts[a] for a in aliases)
        canonical = min(a for a in aliases if counts[a] == best)
        participants.append(Participant(canonical_name=canonical, aliases=set(aliases)))
    participants.sort(key=lambda p: p.canonical_name)
    return participants


def alias_index(participants: list[Participant]) -> dict[str, Participant]:
    """Raw-name lookup table; alias sets of distinct participants are disjoint."""
    index: dict[str, Participant] = {}
    for participant in participants:
        for alias in participant.aliases:
            if alias in index:
                raise ValueError(f"alias {alias!r} assigned to two participants")
            index[alias] = participant
    return index


def _in_window(moment: datetime, window: tuple[date, date]) -> bool:
    day = moment.date()
    return window[0] <= day <= window[1]


def _parse_archive_page(text: str) -> tuple[str | None, str, str, str]:
    """Split a tag-stripped archive page into (date, from, subject, body)."""
    date_value = None
    from_value = ""
    subject_value = ""
    body_start = 0
    lines = text.splitlines()
    seen_header = False
    for i, line in enumerate(lines):
        header = line.strip()
        lowered = header.lower()
        if lowered.startswith("date:"):
            date_value = header[5:].strip()
            seen_header = True
        elif lowered.startswith("from:"):
            from_value = header[5:].strip()
            seen_header = True
        elif lowered.startswith("subject:"):
            subject_value = header[8:].strip()
            seen_header = True
        elif seen_header and not header:
            body_start = i + 1
            break
    body = "\n".join(lines[body_start:])
    return date_value, from_value, subject_value, body


def _parse_date_header(value: str) -> datetime | None:
    for parser in (parsedate_to_datetime, datetime.fromisoformat):
        try:
            moment = parser(value)
        except (ValueError, TypeError):
            continue
        if moment.tzinfo is None:
            moment = moment.replace(tzinfo=timezone.utc)
        return moment.astimezone(timezone.utc)
    return None


def parse_archive(source: str | Path, window: tuple[date, date]) -> IngestResult:
    """Parse an archive (mbox file or directory of HTML pages) into messages.

    Messages dated outside ``window`` are dropped and counted; a single
    malformed message is skipped with a log entry, never aborting the whole
    ingest. An unreadable source is fatal.
    """
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"archive not readable: {source}")
    result = IngestResult(messages=[])
    if source.is_dir():
        entries = sorted(p for p in source.iterdir() if p.is_file())
        for path in entries:
            try:
                text = path.read_text(encoding="utf-8", errors="replace")
                if path.suffix.lower() in (".html", ".htm"):
                    text = strip_html(text)
                date_value, from_value, subject, body = _parse_archive_page(text)
            except Exception:
                log.exception("skipping malformed archive page %s", path)
                result.dropped_malformed += 1
                continue
            _append_message(result, path.name, date_value, from_value, subject, body, window)
    else:
        box = mailbox.mbox(str(source))
        for index, message in enumerate(box):
            try:
                date_value = message.get("Date")
                from_value = message.get("From", "") or ""
                subject = message.get("Subject", "") or ""
                body = _mbox_body(message)
            except Exception:
                log.exception("skipping malformed mbox message %d", index)
                result.dropped_malformed += 1
                continue
            _append_message(
                result, f"mbox-{index:05d}", date_value, from_value, subject, body, window
            )
    log.info(
        "ingested %d messages (%d outside window, %d undated, %d malformed)",
        len(result.messages),
        result.dropped_outside_window,
        result.dropped_undated,
        result.dropped_malformed,
    )
    return result


def _mbox_body(message: mailbox.mboxMessage) -> str:
    if message.is_multipart():
        parts = []
        for part in message.walk():
            if part.get_content_type() == "text/plain":
                payload = part.get_payload(decode=True)
                if payload is not None:
                    parts.append(payload.decode("utf-8", "replace"))
        return "\n".join(parts)
    payload = message.get_payload(decode=True)
    if payload is None:
        return str(message.get_payload())
    return payload.decode("utf-8", "replace")


def _append_message(
    result: IngestResult,
    key: str,
    date_value: str | None,
    from_value: str,
    subject: str,
    body: str,
    window: tuple[date, date],
) -> None:
    if not date_value:
        result.dropped_undated += 1
        return
    moment = _parse_date_header(date_value)
    if moment is None:
        result.dropped_undated += 1
        return
    if not _in_window(moment, window):
        result.dropped_outside_window += 1
        return
    result.messages.append(
        RawEmail(
            message_key=key,
            sent_at=moment,
            sender_raw=extract_sender(from_value),
            subject=subject,
            body=strip_message(body),
        )
    )
