"""Bipartite coordination networks and infrastructure classification.

Two networks share one structure: participants linked to the CVEs they
mentioned, and domain names linked to the CVEs they co-occurred with in a
message. Both are unweighted, undirected, and strictly two-mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

log = logging.getLogger(__name__)


@dataclass
class BipartiteGraph:
    """Two-mode graph stored as adjacency sets on both sides."""

    left_adjacency: dict[str, set[str]] = field(default_factory=dict)
    right_adjacency: dict[str, set[str]] = field(default_factory=dict)

    @property
    def left_vertices(self) -> set[str]:
        return set(self.left_adjacency)

    @property
    def right_vertices(self) -> set[str]:
        return set(self.right_adjacency)

    @property
    def edges(self) -> set[tuple[str, str]]:
        return {
            (left, right)
            for left, neighbors in self.left_adjacency.items()
            for right in neighbors
        }

    def add_edge(self, left: str, right: str) -> None:
        if left in self.right_adjacency or right in self.left_adjacency:
            raise ValueError(
                f"edge ({left!r}, {right!r}) would join vertices of one mode"
            )
        self.left_adjacency.setdefault(left, set()).add(right)
        self.right_adjacency.setdefault(right, set()).add(left)

    def degree(self, vertex: str) -> int:
        if vertex in self.left_adjacency:
            return len(self.left_adjacency[vertex])
        if vertex in self.right_adjacency:
            return len(self.right_adjacency[vertex])
        raise KeyError(f"unknown vertex: {vertex!r}")

    def neighbors(self, vertex: str) -> set[str]:
        if vertex in self.left_adjacency:
            return set(self.left_adjacency[vertex])
        if vertex in self.right_adjacency:
            return set(self.right_adjacency[vertex])
        raise KeyError(f"unknown vertex: {vertex!r}")

    def edge_count(self) -> int:
        return sum(len(n) for n in self.left_adjacency.values())

    def check_invariants(self) -> None:
        """Bipartiteness and the degree-sum identity, asserted on build."""
        assert not (self.left_vertices & self.right_vertices)
        left_sum = sum(len(n) for n in self.left_adjacency.values())
        right_sum = sum(len(n) for n in self.right_adjacency.values())
        assert left_sum == right_sum == len(self.edges)


def degree(graph: BipartiteGraph, vertex: str) -> int:
    return graph.degree(vertex)


def build_social_network(
    messages: Iterable[tuple[str, Iterable[str]]],
) -> BipartiteGraph:
    """Participants on the left, CVEs on the right.

    An edge is present iff the participant sent at least one message
    containing the CVE; repeated mentions collapse to one edge.
    """
    graph = BipartiteGraph()
    for participant, cves in messages:
        for cve in cves:
            graph.add_edge(participant, cve)
    graph.check_invariants()
    return graph


def build_domain_network(
    messages: Iterable[tuple[Iterable[str], Iterable[str]]],
) -> BipartiteGraph:
    """Domains on the left, CVEs on the right.

    An edge is present iff some single message contains both the CVE and a
    hyperlink to the domain.
    """
    graph = BipartiteGraph()
    for cves, domains in messages:
        for cve in cves:
            for domain in domains:
                graph.add_edge(domain, cve)
    graph.check_invariants()
    return graph


@dataclass(frozen=True)
class InfraFlags:
    vulninf: int = 0
    bugs: int = 0
    repos: int = 0
    support: int = 0


# Host patterns per tracking-infrastructure class. A trailing dot means a
# prefix match on the host; a bare name matches the host itself or any
# subdomain of it.
INFRA_PATTERNS: dict[str, tuple[str, ...]] = {
    "vulninf": (
        "cert.", "exploit-db.com", "first.org", "mitre.org", "nist.gov",
        "osvdb.org",
    ),
    "bugs": (
        "bugs.", "bugzilla.", "gnats.", "issues.", "jira.", "redmine.",
        "trac.", "tracker.",
    ),
    "repos": (
        "code.", "cvs.", "cvsweb.", "download.", "downloads.", "ftp.",
        "git.", "gitweb.", "hg.", "packages.", "svn.", "webcvs.", "websvn.",
    ),
    "support": (
        "blog.", "blogs.", "dev.", "doc.", "docs.", "forum.", "forums.",
        "help.", "info.", "lists.", "support.", "wiki.",
    ),
}


def _matches(domain: str, pattern: str) -> bool:
    if pattern.endswith("."):
        return domain.startswith(pattern)
    return domain == pattern or domain.endswith("." + pattern)


def classify_infrastructure(domains: Iterable[str]) -> InfraFlags:
    """Flag each infrastructure class with at least one matching domain."""
    flags = {name: 0 for name in INFRA_PATTERNS}
    for domain in domains:
        for name, patterns in INFRA_PATTERNS.items():
            if flags[name]:
                continue
            if any(_matches(domain, p) for p in patterns):
                flags[name] = 1
    return InfraFlags(**flags)


def core_membership(
    social_graph: BipartiteGraph, core_names: Iterable[str]
) -> dict[str, int]:
    """Per-CVE flag: adjacent to at least one configured core participant."""
    flags = {cve: 0 for cve in social_graph.right_vertices}
    for name in core_names:
        if name not in social_graph.left_adjacency:
            log.warning("core participant %r not present in the network", name)
            continue
        for cve in social_graph.left_adjacency[name]:
            flags[cve] = 1
    return flags
