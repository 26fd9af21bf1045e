"""Vulnerability database records: loading, filtering, and CVSS features.

Feeds are either NVD JSON files (the ``CVE_Items`` schema, optionally
gzipped) or a simplified CSV layout used for fixtures. Records flagged as
rejected never enter any downstream sample.
"""

from __future__ import annotations

import csv
import gzip
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)

REJECT_TOKEN = "REJECT"


class AccessVector(Enum):
    LOCAL = "LOCAL"
    ADJACENT = "ADJACENT"
    NETWORK = "NETWORK"


class AccessComplexity(Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


class Authentication(Enum):
    NONE = "NONE"
    SINGLE = "SINGLE"
    MULTIPLE = "MULTIPLE"


class Impact(Enum):
    NONE = "NONE"
    PARTIAL = "PARTIAL"
    COMPLETE = "COMPLETE"


# Feed spellings that differ from the enum values.
_AV_ALIASES = {"ADJACENT_NETWORK": "ADJACENT"}
_AU_ALIASES = {"SINGLE_INSTANCE": "SINGLE", "MULTIPLE_INSTANCES": "MULTIPLE"}


@dataclass(frozen=True)
class CvssV2:
    access_vector: AccessVector
    access_complexity: AccessComplexity
    authentication: Authentication
    conf_impact: Impact
    integ_impact: Impact
    avail_impact: Impact


@dataclass
class CveRecord:
    cve_id: str
    published_at: date
    summary: str = ""
    cvss: CvssV2 | None = None
    cwes: list[str] = field(default_factory=list)
    reference_urls: list[str] = field(default_factory=list)

    @property
    def rejected(self) -> bool:
        return is_rejected(self)


def is_rejected(record: CveRecord) -> bool:
    """True iff the summary carries the literal REJECT token (case-sensitive)."""
    return REJECT_TOKEN in record.summary


def recode_impact(x: Impact) -> int:
    """Collapse a three-level impact rating to a binary indicator."""
    if not isinstance(x, Impact):
        raise ValueError(f"unknown impact level: {x!r}")
    return 0 if x is Impact.NONE else 1


def impact_flags(cvss: CvssV2) -> tuple[int, int, int]:
    """(IMPC, IMPI, IMPA): binary recodes of the three impact ratings."""
    return (
        recode_impact(cvss.conf_impact),
        recode_impact(cvss.integ_impact),
        recode_impact(cvss.avail_impact),
    )


def exploit_flags(cvss: CvssV2) -> tuple[int, int, int]:
    """(EXPNET, EXPCPLX, EXPAUTH) from the exploitability dimension.

    EXPNET: exploitable only with network access. EXPCPLX: medium or high
    access complexity. EXPAUTH: exploitation requires authentication.
    """
    expnet = int(cvss.access_vector is AccessVector.NETWORK)
    expcplx = int(cvss.access_complexity in (AccessComplexity.MEDIUM, AccessComplexity.HIGH))
    expauth = int(cvss.authentication in (Authentication.SINGLE, Authentication.MULTIPLE))
    return expnet, expcplx, expauth


def reference_count(record: CveRecord) -> int:
    """Raw number of reference entries as listed in the database."""
    return len(record.reference_urls)


def _parse_enum(enum_cls, value: str, aliases: dict[str, str] | None = None):
    token = value.strip().upper()
    if aliases:
        token = aliases.get(token, token)
    try:
        return enum_cls(token)
    except ValueError:
        raise ValueError(f"bad {enum_cls.__name__} value: {value!r}") from None


def parse_cvss(
    av: str, ac: str, au: str, c: str, i: str, a: str
) -> CvssV2:
    return CvssV2(
        access_vector=_parse_enum(AccessVector, av, _AV_ALIASES),
        access_complexity=_parse_enum(AccessComplexity, ac),
        authentication=_parse_enum(Authentication, au, _AU_ALIASES),
        conf_impact=_parse_enum(Impact, c),
        integ_impact=_parse_enum(Impact, i),
        avail_impact=_parse_enum(Impact, a),
    )


def _parse_published(value: str) -> date | None:
    value = value.strip()
    if not value:
        return None
    # NVD JSON uses e.g. "2008-10-27T20:30Z"; fixtures use plain dates.
    value = value.replace("Z", "+00:00")
    try:
        return datetime.fromisoformat(value).date()
    except ValueError:
        pass
    try:
        return date.fromisoformat(value[:10])
    except ValueError:
        return None


def load_records(feeds: list[str | Path] | str | Path) -> dict[str, CveRecord]:
    """Load one record per CVE from one or more feed files.

    Duplicate identifiers keep the first record seen (with a warning);
    records missing an id or publication date are skipped with a
    diagnostic.
    """
    if isinstance(feeds, (str, Path)):
        feeds = [feeds]
    records: dict[str, CveRecord] = {}
    for feed in feeds:
        path = Path(feed)
        if path.suffix == ".csv":
            loaded = _load_csv_feed(path)
        else:
            loaded = _load_json_feed(path)
        for record in loaded:
            if record.cve_id in records:
                log.warning("duplicate record for %s, keeping first", record.cve_id)
                continue
            records[record.cve_id] = record
    return records


def _load_json_feed(path: Path) -> list[CveRecord]:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as handle:
        feed = json.load(handle)
    records = []
    for item in feed.get("CVE_Items", []):
        try:
            meta = item["cve"]["CVE_data_meta"]
            cve_id = meta.get("ID", "").strip()
        except (KeyError, TypeError):
            cve_id = ""
        if not cve_id:
            log.warning("skipping feed item without an id in %s", path.name)
            continue
        published = _parse_published(item.get("publishedDate", ""))
        if published is None:
            log.warning("skipping %s: missing publication date", cve_id)
            continue
        descriptions = (
            item["cve"].get("description", {}).get("description_data", [])
        )
        summary = descriptions[0].get("value", "") if descriptions else ""
        cwes = []
        for ptype in item["cve"].get("problemtype", {}).get("problemtype_data", []):
            for desc in ptype.get("description", []):
                value = desc.get("value", "").strip()
                if value:
                    cwes.append(value)
        urls = [
            ref.get("url", "")
            for ref in item["cve"].get("references", {}).get("reference_data", [])
            if ref.get("url")
        ]
        cvss = None
        base = item.get("impact", {}).get("baseMetricV2", {}).get("cvssV2")
        if base:
            try:
                cvss = parse_cvss(
                    base["accessVector"],
                    base["accessComplexity"],
                    base["authentication"],
                    base["confidentialityImpact"],
                    base["integrityImpact"],
                    base["availabilityImpact"],
                )
            except (KeyError, ValueError):
                log.warning("ignoring unparseable CVSS vector for %s", cve_id)
        records.append(
            CveRecord(
                cve_id=cve_id,
                published_at=published,
                summary=summary,
                cvss=cvss,
                cwes=cwes,
                reference_urls=urls,
            )
        )
    return records


def _load_csv_feed(path: Path) -> list[CveRecord]:
    """Simplified fixture schema: cve_id, published, summary, av, ac, au,
    c, i, a, cwes (semicolon-joined), references (semicolon-joined)."""
    records = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            cve_id = (row.get("cve_id") or "").strip()
            published = _parse_published(row.get("published") or "")
            if not cve_id or published is None:
                log.warning("skipping CSV feed row without id/date in %s", path.name)
                continue
            cvss = None
            if (row.get("av") or "").strip():
                cvss = parse_cvss(
                    row["av"], row["ac"], row["au"], row["c"], row["i"], row["a"]
                )
            cwes = [t for t in (row.get("cwes") or "").split(";") if t]
            urls = [t for t in (row.get("references") or "").split(";") if t]
            records.append(
                CveRecord(
                    cve_id=cve_id,
                    published_at=published,
                    summary=row.get("summary") or "",
                    cvss=cvss,
                    cwes=cwes,
                    reference_urls=urls,
                )
            )
    return records
