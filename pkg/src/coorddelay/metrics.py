"""Per-CVE delay observations and the nested explanatory-metric matrices.

The delay for a CVE is the whole number of UTC calendar days between its
earliest mailing-list mention and its database publication date; negative
values identify already-archived CVEs and are dropped. Six nested model
matrices stack metric groups on top of the temporal controls.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .networks import BipartiteGraph, classify_infrastructure, core_membership
from .vulndb import CveRecord, exploit_flags, impact_flags

log = logging.getLogger(__name__)

YEAR_COLUMNS = [str(y) for y in range(2009, 2017)]
MONTH_COLUMNS = ["Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]
TEMPORAL_COLUMNS = YEAR_COLUMNS + MONTH_COLUMNS + ["WEEKEND"]
SOCIAL_COLUMNS = ["SOCDEG", "MITREDEV", "MSGSLEN", "MSGSENT"]
INFRA_COLUMNS = ["INFDEG", "NVDREFS", "VULNINF", "BUGS", "REPOS", "SUPPORT"]
IMPACT_COLUMNS = ["IMPC", "IMPI", "IMPA"]
EXPLOIT_COLUMNS = ["EXPNET", "EXPCPLX", "EXPAUTH"]
LOG_TRANSFORMED = {"SOCDEG", "MSGSLEN", "MSGSENT", "INFDEG", "NVDREFS"}

_CWE_NUMBER = re.compile(r"^CWE-(\d+)$")


@dataclass(frozen=True)
class CoordinationSample:
    """One CVE's delay observation with both endpoint dates."""

    cve_id: str
    t_oss: date
    t_nvd: date
    y: int


@dataclass
class DelayResult:
    samples: list[CoordinationSample]
    dropped_negative: int = 0
    dropped_missing: int = 0
    dropped_rejected: int = 0


def compute_delays(
    mentions: dict[str, date], records: dict[str, CveRecord]
) -> DelayResult:
    """Join earliest mention dates against publication dates.

    CVEs absent from the database, rejected, or published before their
    first mention are dropped and counted.
    """
    result = DelayResult(samples=[])
    for cve_id in sorted(mentions):
        record = records.get(cve_id)
        if record is None:
            log.info("%s mentioned on the list but absent from the database", cve_id)
            result.dropped_missing += 1
            continue
        if record.rejected:
            result.dropped_rejected += 1
            continue
        t_oss = mentions[cve_id]
        delay = (record.published_at - t_oss).days
        if delay < 0:
            result.dropped_negative += 1
            continue
        result.samples.append(
            CoordinationSample(cve_id=cve_id, t_oss=t_oss, t_nvd=record.published_at, y=delay)
        )
    return result


def temporal_dummies(t_oss: date) -> dict[str, int]:
    """Year, month, and weekend flags for one assignment date.

    2008 and January are reference categories and carry no column; the
    weekend flag covers UTC Saturdays and Sundays.
    """
    if not 2008 <= t_oss.year <= 2016:
        raise ValueError(f"assignment date {t_oss} outside the sampling window")
    flags = dict.fromkeys(TEMPORAL_COLUMNS, 0)
    if t_oss.year > 2008:
        flags[str(t_oss.year)] = 1
    if t_oss.month > 1:
        flags[MONTH_COLUMNS[t_oss.month - 2]] = 1
    flags["WEEKEND"] = int(t_oss.weekday() >= 5)
    return flags


def shannon_entropy(text: str) -> float:
    """Base-2 entropy of the character frequency distribution."""
    if not text:
        return 0.0
    counts = Counter(text)
    total = len(text)
    return -sum((c / total) * math.log2(c / total) for c in counts.values())


def message_stats(bodies: list[str]) -> tuple[float, float]:
    """(MSGSLEN, MSGSENT) over all cleaned bodies mentioning one CVE.

    MSGSLEN is the summed character count divided by one hundred; MSGSENT
    is the entropy of the concatenation.
    """
    joined = "".join(bodies)
    if not joined:
        return 0.0, 0.0
    return len(joined) / 100.0, shannon_entropy(joined)


def _cwe_sort_key(cwe: str) -> tuple[int, str]:
    match = _CWE_NUMBER.match(cwe)
    return (int(match.group(1)), "") if match else (10**9, cwe)


def top_cwes(
    records: dict[str, CveRecord], sample: list[str], k: int
) -> list[str]:
    """The ``k`` most frequent weakness identifiers over the sample.

    Frequency counts one occurrence per CVE; ties break toward the smaller
    numeric id. Placeholder entries that are not CWE-numbered identifiers
    are ignored.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    counts: Counter[str] = Counter()
    for cve_id in sample:
        record = records.get(cve_id)
        if record is None:
            continue
        for cwe in set(record.cwes):
            if _CWE_NUMBER.match(cwe):
                counts[cwe] += 1
    ranked = sorted(counts, key=lambda c: (-counts[c], _cwe_sort_key(c)))
    return ranked[:k]


def cwe_dummies(record: CveRecord | None, cwe_list: list[str]) -> list[int]:
    present = set(record.cwes) if record is not None else set()
    return [int(cwe in present) for cwe in cwe_list]


@dataclass
class MetricTable:
    """Raw (untransformed) per-CVE metric values on a common index."""

    cve_ids: list[str]
    columns: dict[str, np.ndarray]
    cwe_list: list[str]
    y: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]


def build_metric_table(
    samples: list[CoordinationSample],
    records: dict[str, CveRecord],
    social_graph: BipartiteGraph,
    domain_graph: BipartiteGraph,
    bodies_by_cve: dict[str, list[str]],
    core_names: list[str],
    cwe_top_k: int = 10,
) -> MetricTable:
    """Derive every explanatory metric for the sampled CVEs.

    CVEs without a CVSS vector or without CWE assignments contribute zeros
    to the respective dummy groups; the companion CVSS_MISSING / CWE_MISSING
    indicator columns are for diagnostics only and never enter a model
    matrix.
    """
    cve_ids = [s.cve_id for s in samples]
    n = len(cve_ids)
    cwe_list = top_cwes(records, cve_ids, cwe_top_k)
    mitredev = core_membership(social_graph, core_names)
    columns: dict[str, list[float]] = {
        name: []
        for name in (
            TEMPORAL_COLUMNS
            + SOCIAL_COLUMNS
            + INFRA_COLUMNS
            + IMPACT_COLUMNS
            + EXPLOIT_COLUMNS
            + cwe_list
            + ["CVSS_MISSING", "CWE_MISSING"]
        )
    }
    for sample in samples:
        record = records[sample.cve_id]
        for name, value in temporal_dummies(sample.t_oss).items():
            columns[name].append(value)
        columns["SOCDEG"].append(social_graph.degree(sample.cve_id))
        columns["MITREDEV"].append(mitredev.get(sample.cve_id, 0))
        msgslen, msgsent = message_stats(bodies_by_cve.get(sample.cve_id, []))
        columns["MSGSLEN"].append(msgslen)
        columns["MSGSENT"].append(msgsent)
        if sample.cve_id in domain_graph.right_adjacency:
            neighborhood = domain_graph.neighbors(sample.cve_id)
        else:
            neighborhood = set()
        columns["INFDEG"].append(len(neighborhood))
        columns["NVDREFS"].append(len(record.reference_urls))
        infra = classify_infrastructure(neighborhood)
        columns["VULNINF"].append(infra.vulninf)
        columns["BUGS"].append(infra.bugs)
        columns["REPOS"].append(infra.repos)
        columns["SUPPORT"].append(infra.support)
        if record.cvss is not None:
            impc, impi, impa = impact_flags(record.cvss)
            expnet, expcplx, expauth = exploit_flags(record.cvss)
            columns["CVSS_MISSING"].append(0)
        else:
            impc = impi = impa = expnet = expcplx = expauth = 0
            columns["CVSS_MISSING"].append(1)
        columns["IMPC"].append(impc)
        columns["IMPI"].append(impi)
        columns["IMPA"].append(impa)
        columns["EXPNET"].append(expnet)
        columns["EXPCPLX"].append(expcplx)
        columns["EXPAUTH"].append(expauth)
        for cwe, value in zip(cwe_list, cwe_dummies(record, cwe_list)):
            columns[cwe].append(value)
        columns["CWE_MISSING"].append(int(not any(_CWE_NUMBER.match(c) for c in record.cwes)))
    return MetricTable(
        cve_ids=cve_ids,
        columns={name: np.asarray(vals, dtype=float) for name, vals in columns.items()},
        cwe_list=cwe_list,
        y=np.asarray([s.y for s in samples], dtype=float),
    )


@dataclass
class ModelMatrix:
    """Design matrix for one nested model level, intercept column first."""

    model_level: int
    column_names: list[str]
    rows: np.ndarray
    transform_log: set[str] = field(default_factory=set)
    cve_ids: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def k(self) -> int:
        return self.rows.shape[1]


def model_columns(
    level: int, cwe_list: list[str], drop_year_dummies: bool = False
) -> list[str]:
    if not 1 <= level <= 6:
        raise ValueError(f"model level must be 1..6, got {level}")
    names: list[str] = [] if drop_year_dummies else list(YEAR_COLUMNS)
    names += MONTH_COLUMNS + ["WEEKEND"]
    groups = [SOCIAL_COLUMNS, INFRA_COLUMNS, IMPACT_COLUMNS, EXPLOIT_COLUMNS, cwe_list]
    for group in groups[: level - 1]:
        names += list(group)
    return names


def assemble(
    table: MetricTable, level: int, drop_year_dummies: bool = False
) -> ModelMatrix:
    """Stack the metric groups for one model level into a numeric matrix.

    Continuous metrics enter as log(x + 1); the intercept column of ones
    comes first and every level's columns are a prefix of the next level's.
    """
    names = model_columns(level, table.cwe_list, drop_year_dummies)
    n = len(table.cve_ids)
    data = np.empty((n, len(names) + 1))
    data[:, 0] = 1.0
    for j, name in enumerate(names, start=1):
        raw = table.columns[name]
        data[:, j] = np.log1p(raw) if name in LOG_TRANSFORMED else raw
    return ModelMatrix(
        model_level=level,
        column_names=["Intercept"] + names,
        rows=data,
        transform_log=set(names) & LOG_TRANSFORMED,
        cve_ids=list(table.cve_ids),
    )
