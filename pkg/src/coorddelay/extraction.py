"""CVE identifier and domain-name extraction from message bodies."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .archive import RawEmail

# Either prefix, a four-digit year, and four or more digits; the deprecated
# candidate prefix is canonicalized away.
CVE_PATTERN = re.compile(r"\b(CVE|CAN)-(\d{4})-(\d{4,})\b", re.IGNORECASE)

# Hosts inside explicit scheme://... hyperlinks, plus bare www-prefixed hosts
# as they commonly appear in archived messages.
URL_PATTERN = re.compile(
    r"\b(?:https?|ftp)://(?:[^\s/@<>\"']*@)?([A-Za-z0-9.-]+)", re.IGNORECASE
)
BARE_WWW_PATTERN = re.compile(r"(?<![\w@/.])(www\.[A-Za-z0-9.-]+)", re.IGNORECASE)


@dataclass(frozen=True)
class MessageFacts:
    """Identifiers and validated domain names found in one message body."""

    message_key: str
    cve_ids: frozenset[str]
    domains: frozenset[str]
    body_length_chars: int


def extract_cves(text: str) -> set[str]:
    """All CVE identifiers in canonical upper-case CVE-prefixed form."""
    return {
        f"CVE-{year}-{digits}"
        for _, year, digits in CVE_PATTERN.findall(text)
    }


def _is_ipv4(host: str) -> bool:
    parts = host.split(".")
    if len(parts) != 4:
        return False
    for part in parts:
        if not part.isdigit() or not 0 <= int(part) <= 255:
            return False
    return True


def validate_domain(d: str) -> bool:
    """At least three characters, contains a dot, and is not a valid IPv4."""
    return len(d) >= 3 and "." in d and not _is_ipv4(d)


def _clean_host(host: str) -> str:
    host = host.lower().rstrip(".-")
    if ":" in host:
        host = host.split(":", 1)[0]
    return host


def extract_domains(text: str) -> set[str]:
    """Validated host names from hyperlinks in the text.

    Hosts are lowercased; userinfo and ports are stripped; anything failing
    :func:`validate_domain` (including dotted-quad IPv4 addresses) is
    dropped.
    """
    hosts = [m.group(1) for m in URL_PATTERN.finditer(text)]
    hosts += [m.group(1) for m in BARE_WWW_PATTERN.finditer(text)]
    return {h for h in (_clean_host(raw) for raw in hosts) if validate_domain(h)}


def message_facts(email: RawEmail) -> MessageFacts:
    """Facts for one cleaned message; every domain is validated."""
    domains = extract_domains(email.body)
    assert all(validate_domain(d) for d in domains)
    return MessageFacts(
        message_key=email.message_key,
        cve_ids=frozenset(extract_cves(email.body)),
        domains=frozenset(domains),
        body_length_chars=len(email.body),
    )
