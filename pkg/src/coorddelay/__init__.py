"""Toolkit for mining CVE coordination delays from a security mailing list.

The pipeline runs in stages: ingest a mailing-list archive, load a
vulnerability database feed, extract CVE identifiers and domain names from
message bodies, build the two bipartite coordination networks, derive the
per-CVE metric suite, and fit OLS / quantile-regression / L1-penalized
quantile-regression models of the publication delays.
"""

__version__ = "0.1.0"
