"""Pipeline configuration, stage orchestration, and report artifacts.

Stages communicate exclusively through CSV artifacts in the output
directory, so any suffix of the pipeline can be re-run (or skipped) without
recomputing the rest. All randomness derives from one master seed recorded
in ``run.json``, and every writer formats values deterministically, so
re-running with identical inputs reproduces byte-identical artifacts.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .archive import RawEmail, parse_archive, resolve_identities, alias_index
from .classify import median_split, train_and_evaluate
from .extraction import message_facts
from .metrics import (
    CoordinationSample,
    MetricTable,
    assemble,
    build_metric_table,
    compute_delays,
)
from .networks import build_domain_network, build_social_network
from .regress import (
    RankDeficiencyError,
    between_quantile_test,
    bootstrap_se,
    coefficient_pvalues,
    hc_covariance,
    nested_wald_test,
    ols_fit,
    qr_fit,
    qr_lasso_fit,
)
from .vulndb import load_records

log = logging.getLogger(__name__)

STAGES = ["ingest", "nvd", "extract", "networks", "metrics", "regress", "classify"]


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed fatally (CLI exit code 1)."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    archive: Path
    feeds: list[Path]
    window_start: date
    window_end: date
    out_dir: Path
    merges: Path | None = None
    delta_threshold: float = 0.8
    core_names: list[str] = field(default_factory=list)
    quantiles: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 0.9])
    lambdas: list[float] = field(default_factory=lambda: [float(v) for v in range(1, 101)])
    bootstrap_reps: int = 200
    cwe_top: int = 10
    cwe_sweep: list[int] = field(default_factory=lambda: list(range(5, 60, 5)))
    hc_variant: str = "HC3"
    test_fraction: float = 0.1
    folds: int = 10
    trees: int = 500
    seed: int = 0
    stages: list[str] = field(default_factory=lambda: list(STAGES))

    def validate(self) -> None:
        if not self.archive or not Path(self.archive).exists():
            raise ConfigError(f"inputs.archive does not exist: {self.archive}")
        if not self.feeds:
            raise ConfigError("inputs.feeds is required")
        for feed in self.feeds:
            if not Path(feed).exists():
                raise ConfigError(f"inputs.feeds entry does not exist: {feed}")
        if self.merges is not None and not Path(self.merges).exists():
            raise ConfigError(f"inputs.merges does not exist: {self.merges}")
        if self.window_start > self.window_end:
            raise ConfigError("window.start must not be after window.end")
        if not 0.0 < self.delta_threshold <= 1.0:
            raise ConfigError("identity.threshold must be in (0, 1]")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"run.stages contains unknown stages: {unknown}")


def _parse_number_list(text: str) -> list[float]:
    """Space-separated values, or start:stop[:step] inclusive ranges."""
    values: list[float] = []
    for token in text.replace(",", " ").split():
        if ":" in token:
            parts = [float(p) for p in token.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1.0
            current = start
            while current <= stop + 1e-9:
                values.append(round(current, 10))
                current += step
        else:
            values.append(float(token))
    return values


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Read the key-value config file; relative paths resolve against it."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    base = path.parent

    def resolve(raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else (base / p)

    try:
        archive = resolve(parser.get("inputs", "archive"))
        feeds = [resolve(tok) for tok in parser.get("inputs", "feeds").split()]
    except (configparser.NoSectionError, configparser.NoOptionError) as exc:
        raise ConfigError(f"missing required config field: {exc}") from None
    merges_raw = parser.get("inputs", "merges", fallback="").strip()
    try:
        window_start = date.fromisoformat(parser.get("window", "start", fallback="2008-02-01"))
        window_end = date.fromisoformat(parser.get("window", "end", fallback="2016-12-31"))
    except ValueError as exc:
        raise ConfigError(f"bad window date: {exc}") from None
    core_raw = parser.get("networks", "core", fallback="")
    config = PipelineConfig(
        archive=archive,
        feeds=feeds,
        merges=resolve(merges_raw) if merges_raw else None,
        window_start=window_start,
        window_end=window_end,
        delta_threshold=parser.getfloat("identity", "threshold", fallback=0.8),
        core_names=[name.strip() for name in core_raw.split(";") if name.strip()],
        quantiles=_parse_number_list(parser.get("models", "quantiles", fallback="0.25 0.5 0.75 0.9")),
        lambdas=_parse_number_list(parser.get("models", "lambdas", fallback="1:100")),
        bootstrap_reps=parser.getint("models", "bootstrap_reps", fallback=200),
        cwe_top=parser.getint("models", "cwe_top", fallback=10),
        cwe_sweep=[int(v) for v in _parse_number_list(parser.get("models", "cwe_sweep", fallback="5:55:5"))],
        hc_variant=parser.get("models", "hc_variant", fallback="HC3"),
        test_fraction=parser.getfloat("classify", "test_fraction", fallback=0.1),
        folds=parser.getint("classify", "folds", fallback=10),
        trees=parser.getint("classify", "trees", fallback=500),
        seed=parser.getint("run", "seed", fallback=0),
        out_dir=resolve(parser.get("run", "out", fallback="output")),
        stages=[s.strip() for s in parser.get("run", "stages", fallback=",".join(STAGES)).split(",") if s.strip()],
    )
    for key, value in (overrides or {}).items():
        setattr(config, key, value)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# deterministic CSV helpers


def fmt_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if value != value:  # NaN
            return ""
        if value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_value(v) for v in row])


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _utc(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# stages


def stage_ingest(config: PipelineConfig, out: Path) -> dict:
    result = parse_archive(config.archive, (config.window_start, config.window_end))
    manual_merges: list[tuple[str, str]] = []
    if config.merges:
        for row in _read_csv(config.merges):
            values = list(row.values())
            if len(values) >= 2:
                manual_merges.append((values[0], values[1]))
    names = [m.sender_raw for m in result.messages]
    participants = resolve_identities(names, config.delta_threshold, manual_merges)
    index = alias_index(participants)
    ids = {p.canonical_name: f"P{i:04d}" for i, p in enumerate(participants, start=1)}
    counts: dict[str, int] = {p.canonical_name: 0 for p in participants}
    message_rows = []
    body_rows = []
    for message in sorted(result.messages, key=lambda m: m.message_key):
        participant = index[message.sender_raw]
        participant.message_keys.add(message.message_key)
        counts[participant.canonical_name] += 1
        message_rows.append(
            [message.message_key, _utc(message.sent_at), ids[participant.canonical_name], message.subject]
        )
        body_rows.append([message.message_key, message.body])
    write_csv(out / "messages.csv", ["message_key", "sent_at", "participant_id", "subject"], message_rows)
    write_csv(out / "message_bodies.csv", ["message_key", "body"], body_rows)
    write_csv(
        out / "participants.csv",
        ["participant_id", "canonical_name", "aliases", "message_count"],
        [
            [ids[p.canonical_name], p.canonical_name, ";".join(sorted(p.aliases)), counts[p.canonical_name]]
            for p in participants
        ],
    )
    return {
        "messages": len(result.messages),
        "participants": len(participants),
        "dropped_outside_window": result.dropped_outside_window,
        "dropped_undated": result.dropped_undated,
        "dropped_malformed": result.dropped_malformed,
    }


def stage_nvd(config: PipelineConfig, out: Path) -> dict:
    records = load_records(config.feeds)
    rows = []
    rejected = 0
    for cve_id in sorted(records):
        record = records[cve_id]
        rejected += int(record.rejected)
        cvss = record.cvss
        rows.append(
            [
                cve_id,
                record.published_at.isoformat(),
                len(record.reference_urls),
                cvss.access_vector.value if cvss else "",
                cvss.access_complexity.value if cvss else "",
                cvss.authentication.value if cvss else "",
                cvss.conf_impact.value if cvss else "",
                cvss.integ_impact.value if cvss else "",
                cvss.avail_impact.value if cvss else "",
                ";".join(record.cwes),
                int(record.rejected),
            ]
        )
    write_csv(
        out / "records.csv",
        ["cve_id", "published_at", "refs", "av", "ac", "au", "c", "i", "a", "cwes", "rejected"],
        rows,
    )
    return {"records": len(records), "rejected": rejected}


def _read_messages(out: Path) -> tuple[list[dict[str, str]], dict[str, str]]:
    messages = _read_csv(out / "messages.csv")
    bodies = {row["message_key"]: row["body"] for row in _read_csv(out / "message_bodies.csv")}
    return messages, bodies


def stage_extract(config: PipelineConfig, out: Path) -> dict:
    messages, bodies = _read_messages(out)
    rows = []
    n_cves = set()
    n_domains = set()
    for row in messages:
        key = row["message_key"]
        email = RawEmail(
            message_key=key,
            sent_at=datetime.strptime(row["sent_at"], "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc),
            sender_raw="",
            subject=row["subject"],
            body=bodies.get(key, ""),
        )
        facts = message_facts(email)
        for cve in sorted(facts.cve_ids):
            rows.append([key, cve, ""])
            n_cves.add(cve)
        for domain in sorted(facts.domains):
            rows.append([key, "", domain])
            n_domains.add(domain)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    write_csv(out / "facts.csv", ["message_key", "cve_id", "domain"], rows)
    return {"cves_mentioned": len(n_cves), "domains_seen": len(n_domains)}


def _read_facts(out: Path) -> dict[str, dict[str, set[str]]]:
    facts: dict[str, dict[str, set[str]]] = {}
    for row in _read_csv(out / "facts.csv"):
        entry = facts.setdefault(row["message_key"], {"cves": set(), "domains": set()})
        if row["cve_id"]:
            entry["cves"].add(row["cve_id"])
        if row["domain"]:
            entry["domains"].add(row["domain"])
    return facts


@dataclass
class AnalysisState:
    """Everything the modeling stages need, rebuilt from artifacts."""

    samples: list[CoordinationSample]
    table: MetricTable
    records: dict
    social_graph: object
    domain_graph: object
    diagnostics: dict


def _build_graphs(out: Path):
    messages, _ = _read_messages(out)
    facts = _read_facts(out)
    participant_names = {
        row["participant_id"]: row["canonical_name"] for row in _read_csv(out / "participants.csv")
    }
    social_pairs = []
    domain_pairs = []
    for row in messages:
        key = row["message_key"]
        entry = facts.get(key)
        if not entry or not entry["cves"]:
            continue
        name = participant_names[row["participant_id"]]
        social_pairs.append((name, sorted(entry["cves"])))
        if entry["domains"]:
            domain_pairs.append((sorted(entry["cves"]), sorted(entry["domains"])))
    return build_social_network(social_pairs), build_domain_network(domain_pairs)


def stage_networks(config: PipelineConfig, out: Path) -> dict:
    social, domain = _build_graphs(out)
    write_csv(
        out / "graphs" / "social_edges.csv",
        ["vertex_type", "left", "right"],
        [["participant-cve", l, r] for l, r in sorted(social.edges)],
    )
    write_csv(
        out / "graphs" / "domain_edges.csv",
        ["vertex_type", "left", "right"],
        [["domain-cve", l, r] for l, r in sorted(domain.edges)],
    )
    return {
        "participants_in_network": len(social.left_vertices),
        "cves_in_network": len(social.right_vertices),
        "domains_in_network": len(domain.left_vertices),
        "cves_with_domains": len(domain.right_vertices),
        "social_edges": social.edge_count(),
        "domain_edges": domain.edge_count(),
    }


def load_state(config: PipelineConfig, out: Path, cwe_top: int | None = None) -> AnalysisState:
    messages, bodies = _read_messages(out)
    facts = _read_facts(out)
    records = load_records(config.feeds)
    mentions: dict[str, date] = {}
    bodies_by_cve: dict[str, list[str]] = {}
    for row in messages:
        key = row["message_key"]
        entry = facts.get(key)
        if not entry or not entry["cves"]:
            continue
        day = datetime.strptime(row["sent_at"], "%Y-%m-%dT%H:%M:%SZ").date()
        for cve in entry["cves"]:
            if cve not in mentions or day < mentions[cve]:
                mentions[cve] = day
            bodies_by_cve.setdefault(cve, []).append(bodies.get(key, ""))
    delays = compute_delays(mentions, records)
    social, domain = _build_graphs(out)
    table = build_metric_table(
        delays.samples,
        records,
        social,
        domain,
        bodies_by_cve,
        config.core_names,
        cwe_top_k=cwe_top or config.cwe_top,
    )
    return AnalysisState(
        samples=delays.samples,
        table=table,
        records=records,
        social_graph=social,
        domain_graph=domain,
        diagnostics={
            "samples": len(delays.samples),
            "dropped_negative_delay": delays.dropped_negative,
            "dropped_missing_record": delays.dropped_missing,
            "dropped_rejected": delays.dropped_rejected,
        },
    )


def summarize_delays(samples: list[CoordinationSample], quantiles: list[float]) -> dict:
    """Descriptive statistics of the delay distribution."""
    if not samples:
        raise ValueError("no samples to summarize")
    y = np.array([s.y for s in samples], dtype=float)
    stats = {
        "n": int(y.size),
        "mean": float(np.mean(y)),
        "median": float(np.median(y)),
        "sd": float(np.std(y, ddof=1)) if y.size > 1 else 0.0,
        "zero_share": float(np.mean(y == 0)),
    }
    for q in quantiles:
        stats[f"q{int(round(q * 100))}"] = float(np.quantile(y, q))
    annual: dict[int, list[float]] = {}
    for sample in samples:
        annual.setdefault(sample.t_oss.year, []).append(sample.y)
    stats["annual"] = [
        {
            "year": year,
            "n": len(values),
            "mean": float(np.mean(values)),
            "median": float(np.median(values)),
        }
        for year, values in sorted(annual.items())
    ]
    return stats


def stage_metrics(config: PipelineConfig, out: Path) -> dict:
    state = load_state(config, out)
    write_csv(
        out / "delays.csv",
        ["cve_id", "t_oss", "t_nvd", "y"],
        [[s.cve_id, s.t_oss.isoformat(), s.t_nvd.isoformat(), s.y] for s in state.samples],
    )
    table = state.table
    metric_names = [name for name in table.columns]
    write_csv(
        out / "metric_table.csv",
        ["cve_id"] + metric_names,
        [
            [table.cve_ids[i]] + [table.columns[name][i] for name in metric_names]
            for i in range(len(table.cve_ids))
        ],
    )
    dims = {}
    for level in range(1, 7):
        matrix = assemble(table, level)
        write_csv(
            out / f"model_matrix_M{level}.csv",
            ["cve_id"] + matrix.column_names,
            [[matrix.cve_ids[i]] + list(matrix.rows[i]) for i in range(matrix.n)],
        )
        dims[f"M{level}_columns"] = matrix.k
    summary = summarize_delays(state.samples, config.quantiles)
    annual = summary.pop("annual")
    write_csv(out / "summary.csv", ["statistic", "value"], [[k, v] for k, v in summary.items()])
    write_csv(
        out / "annual_delays.csv",
        ["year", "n", "mean", "median"],
        [[row["year"], row["n"], row["mean"], row["median"]] for row in annual],
    )
    return {**state.diagnostics, **dims}


def _fit_seed(base: int, level: int, tau: float | None) -> int:
    tau_part = 0 if tau is None else int(round(tau * 1000))
    return base * 100000 + level * 10000 + tau_part


def stage_regress(config: PipelineConfig, out: Path) -> dict:
    state = load_state(config, out)
    table = state.table
    y_raw = table.y
    y_log = np.log1p(y_raw)
    taus = sorted(config.quantiles)
    matrices = {level: assemble(table, level) for level in range(1, 7)}
    ols_fits = {level: ols_fit(matrices[level], y_log) for level in matrices}
    qr_fits = {
        (level, tau): qr_fit(matrices[level], y_raw, tau)
        for level, tau in product(matrices, taus)
    }

    perf_rows = []
    for level in range(1, 7):
        row = [f"M{level}", ols_fits[level].adj_r2, ols_fits[level].aic]
        row.append(ols_fits[level].aic - ols_fits[level - 1].aic if level > 1 else float("nan"))
        for tau in taus:
            fit = qr_fits[(level, tau)]
            row.append(fit.aic)
            row.append(fit.aic - qr_fits[(level - 1, tau)].aic if level > 1 else float("nan"))
        perf_rows.append(row)
    header = ["model", "ols_adj_r2", "ols_aic", "ols_delta_aic"]
    for tau in taus:
        header += [f"qr_aic_tau{tau}", f"qr_delta_aic_tau{tau}"]
    write_csv(out / "performance.csv", header, perf_rows)

    for level in range(1, 7):
        fit = ols_fits[level]
        cov = hc_covariance(fit, config.hc_variant)
        se = np.sqrt(np.diag(cov))
        pvals = coefficient_pvalues(fit, se)
        write_csv(
            out / f"coefficients_M{level}_ols.csv",
            ["column", "estimate", "se", "p"],
            [
                [fit.column_names[j], fit.coefficients[j], se[j], pvals[j]]
                for j in range(fit.k)
            ],
        )
        for tau in taus:
            qfit = qr_fits[(level, tau)]
            se_q = bootstrap_se(
                matrices[level],
                y_raw,
                tau,
                reps=config.bootstrap_reps,
                seed=_fit_seed(config.seed, level, tau),
            )
            pvals_q = coefficient_pvalues(qfit, se_q)
            write_csv(
                out / f"coefficients_M{level}_qr_tau{tau}.csv",
                ["column", "estimate", "se", "p"],
                [
                    [qfit.column_names[j], qfit.coefficients[j], se_q[j], pvals_q[j]]
                    for j in range(qfit.k)
                ],
            )

    nested_rows = []
    for level in range(2, 7):
        test = nested_wald_test(
            ols_fits[level - 1],
            ols_fits[level],
            bootstrap_reps=config.bootstrap_reps,
            seed=_fit_seed(config.seed, level, None) + 1,
        )
        nested_rows.append(
            [f"M{level-1} vs M{level}", "ols", "", test.statistic, test.df[0], test.df[1], test.p_value]
        )
        for tau in taus:
            test = nested_wald_test(
                qr_fits[(level - 1, tau)],
                qr_fits[(level, tau)],
                bootstrap_reps=config.bootstrap_reps,
                seed=_fit_seed(config.seed, level, tau) + 1,
            )
            nested_rows.append(
                [f"M{level-1} vs M{level}", "qr", tau, test.statistic, test.df[0], test.df[1], test.p_value]
            )
    write_csv(
        out / "nested_tests.csv",
        ["comparison", "method", "tau", "statistic", "df1", "df2", "p_value"],
        nested_rows,
    )

    full_fits = [qr_fits[(6, tau)] for tau in taus]
    bq_rows = []
    names = matrices[6].column_names
    for j in range(matrices[6].k):
        for set_size in range(2, len(taus) + 1):
            try:
                test = between_quantile_test(full_fits[:set_size], j)
                bq_rows.append(
                    [names[j], f"S{set_size-1}", test.statistic, test.p_value, int(test.p_value >= 0.05)]
                )
            except (ValueError, np.linalg.LinAlgError) as exc:
                log.warning("between-quantile test skipped for %s (S%d): %s", names[j], set_size - 1, exc)
                bq_rows.append([names[j], f"S{set_size-1}", float("nan"), float("nan"), ""])
    write_csv(
        out / "between_quantile_tests.csv",
        ["column", "set", "statistic", "p_value", "equal_at_5pct"],
        bq_rows,
    )

    lasso_rows = []
    for tau in taus:
        for lam in config.lambdas:
            fit = qr_lasso_fit(matrices[6], y_raw, tau, lam)
            for j, name in enumerate(names):
                lasso_rows.append([tau, lam, name, fit.coefficients[j]])
    write_csv(out / "lasso_path.csv", ["tau", "lambda", "column", "value"], lasso_rows)

    annual_rows = []
    years = sorted({s.t_oss.year for s in state.samples})
    sample_years = np.array([s.t_oss.year for s in state.samples])
    for year in years:
        mask = sample_years == year
        for level in range(1, 7):
            sub = assemble(table, level, drop_year_dummies=True)
            X_sub = sub.rows[mask]
            y_sub = y_log[mask]
            if X_sub.shape[0] <= X_sub.shape[1] + 1:
                annual_rows.append([year, f"M{level}", int(mask.sum()), X_sub.shape[1], float("nan")])
                continue
            keep = _nonconstant_columns(X_sub)
            try:
                fit = ols_fit(X_sub[:, keep], y_sub)
                annual_rows.append([year, f"M{level}", fit.n, len(keep), fit.adj_r2])
            except (RankDeficiencyError, ValueError) as exc:
                log.warning("annual subset %d M%d not estimable: %s", year, level, exc)
                annual_rows.append([year, f"M{level}", int(mask.sum()), X_sub.shape[1], float("nan")])
    write_csv(out / "annual_subsets.csv", ["year", "model", "n", "k", "adj_r2"], annual_rows)

    sweep_rows = []
    seen_counts = set()
    for count in config.cwe_sweep:
        sweep_state = build_metric_table(
            state.samples,
            state.records,
            state.social_graph,
            state.domain_graph,
            _bodies_by_cve(out),
            config.core_names,
            cwe_top_k=count,
        )
        actual = len(sweep_state.cwe_list)
        if actual in seen_counts:
            continue
        seen_counts.add(actual)
        matrix = assemble(sweep_state, 6)
        fit = ols_fit(matrix, y_log)
        qfit = qr_fit(matrix, y_raw, 0.5)
        sweep_rows.append([actual, matrix.k, fit.adj_r2, fit.aic, qfit.aic])
    write_csv(
        out / "cwe_sweep.csv",
        ["n_cwes", "k", "ols_adj_r2", "ols_aic", "qr_aic_tau0.5"],
        sweep_rows,
    )
    return {
        "models_fitted": len(ols_fits) + len(qr_fits),
        "lasso_fits": len(taus) * len(config.lambdas),
        "nested_tests": len(nested_rows),
    }


def _bodies_by_cve(out: Path) -> dict[str, list[str]]:
    messages, bodies = _read_messages(out)
    facts = _read_facts(out)
    by_cve: dict[str, list[str]] = {}
    for row in messages:
        entry = facts.get(row["message_key"])
        if not entry:
            continue
        for cve in entry["cves"]:
            by_cve.setdefault(cve, []).append(bodies.get(row["message_key"], ""))
    return by_cve


def _nonconstant_columns(X: np.ndarray) -> list[int]:
    """Intercept plus every column that varies within the subset."""
    keep = [0]
    for j in range(1, X.shape[1]):
        if np.ptp(X[:, j]) > 0:
            keep.append(j)
    return keep


def stage_classify(config: PipelineConfig, out: Path) -> dict:
    state = load_state(config, out)
    split = median_split(state.table.y)
    rows = []
    for level in range(1, 7):
        matrix = assemble(state.table, level)
        result = train_and_evaluate(
            matrix,
            split.labels,
            test_fraction=config.test_fraction,
            folds=config.folds,
            seed=config.seed,
            n_trees=config.trees,
        )
        rows.append([level, result.cv_accuracy, result.test_accuracy, config.seed])
    write_csv(
        out / "classification.csv",
        ["model_level", "cv_accuracy", "test_accuracy", "seed"],
        rows,
    )
    return {"threshold": split.threshold}


_STAGE_FUNCTIONS = {
    "ingest": stage_ingest,
    "nvd": stage_nvd,
    "extract": stage_extract,
    "networks": stage_networks,
    "metrics": stage_metrics,
    "regress": stage_regress,
    "classify": stage_classify,
}


def run(config: PipelineConfig, stages: list[str] | None = None) -> dict:
    """Execute the selected stages in order and write ``run.json``.

    Raises :class:`StageError` on the first fatal stage failure; artifacts
    from completed stages stay in place, and the report flags the failure.
    """
    config.validate()
    selected = stages or config.stages
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {
        "version": __version__,
        "seed": config.seed,
        "config": {
            "archive": str(config.archive),
            "feeds": [str(f) for f in config.feeds],
            "window": [config.window_start.isoformat(), config.window_end.isoformat()],
            "delta_threshold": config.delta_threshold,
            "core_names": config.core_names,
            "quantiles": config.quantiles,
            "lambda_grid": [config.lambdas[0], config.lambdas[-1]] if config.lambdas else [],
            "bootstrap_reps": config.bootstrap_reps,
        },
        "qr_aic_convention": "asymmetric-Laplace surrogate likelihood",
        "stages": {},
        "counts": {},
        "timings_s": {},
    }
    for stage in STAGES:
        if stage not in selected:
            continue
        begin = time.time()
        try:
            counts = _STAGE_FUNCTIONS[stage](config, out)
        except ConfigError:
            raise
        except Exception as exc:
            report["stages"][stage] = "failed"
            report["error"] = {"stage": stage, "message": str(exc)}
            _write_report(out, report)
            raise StageError(stage, exc) from exc
        report["stages"][stage] = "ok"
        report["counts"].update({f"{stage}.{k}": v for k, v in counts.items()})
        report["timings_s"][stage] = round(time.time() - begin, 3)
    _write_report(out, report)
    return report


def _write_report(out: Path, report: dict) -> None:
    with open(out / "run.json", "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")
