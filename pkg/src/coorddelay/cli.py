"""Command-line entry points.

Exit codes: 0 success, 1 fatal data/stage error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import date
from pathlib import Path

from .pipeline import (
    STAGES,
    ConfigError,
    PipelineConfig,
    StageError,
    load_config,
    run,
    stage_extract,
    stage_ingest,
    stage_networks,
    stage_nvd,
)

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coorddelay",
        description="Mine a mailing-list archive and model CVE coordination delays.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="parse an archive into message/participant tables")
    ingest.add_argument("--archive", required=True)
    ingest.add_argument("--from", dest="date_from", default="2008-02-01")
    ingest.add_argument("--to", dest="date_to", default="2016-12-31")
    ingest.add_argument("--delta", type=float, default=0.8, help="name-similarity threshold")
    ingest.add_argument("--merges", default=None, help="CSV of manual merge pairs")
    ingest.add_argument("--out", default="output")

    nvd = commands.add_parser("nvd", help="load vulnerability feeds into a records table")
    nvd.add_argument("--feed", nargs="+", required=True)
    nvd.add_argument("--out", default="output/records.csv")

    extract = commands.add_parser("extract", help="extract CVE ids and domains from messages")
    extract.add_argument("--messages", required=True, help="messages.csv from the ingest stage")
    extract.add_argument("--out", default="output/facts.csv")

    networks = commands.add_parser("networks", help="build and export the bipartite networks")
    networks.add_argument("--facts", required=True, help="facts.csv from the extract stage")
    networks.add_argument("--out-dir", default="output/graphs")

    runner = commands.add_parser("run", help="run the full pipeline from a config file")
    runner.add_argument("--config", required=True)
    runner.add_argument("--stages", default=None, help=f"comma-separated subset of {','.join(STAGES)}")
    runner.add_argument("--seed", type=int, default=None)
    runner.add_argument("--out", default=None)
    return parser


def _cmd_ingest(args) -> int:
    out = Path(args.out)
    config = PipelineConfig(
        archive=Path(args.archive),
        feeds=[],
        window_start=date.fromisoformat(args.date_from),
        window_end=date.fromisoformat(args.date_to),
        out_dir=out,
        merges=Path(args.merges) if args.merges else None,
        delta_threshold=args.delta,
    )
    counts = stage_ingest(config, out)
    print(f"ingested {counts['messages']} messages, {counts['participants']} participants")
    return 0


def _cmd_nvd(args) -> int:
    out_path = Path(args.out)
    config = PipelineConfig(
        archive=Path("."),
        feeds=[Path(f) for f in args.feed],
        window_start=date(2008, 2, 1),
        window_end=date(2016, 12, 31),
        out_dir=out_path.parent,
    )
    counts = stage_nvd(config, out_path.parent)
    produced = out_path.parent / "records.csv"
    if produced != out_path:
        produced.replace(out_path)
    print(f"loaded {counts['records']} records ({counts['rejected']} rejected)")
    return 0


def _cmd_extract(args) -> int:
    messages = Path(args.messages)
    out_path = Path(args.out)
    config = PipelineConfig(
        archive=Path("."),
        feeds=[],
        window_start=date(2008, 2, 1),
        window_end=date(2016, 12, 31),
        out_dir=messages.parent,
    )
    counts = stage_extract(config, messages.parent)
    produced = messages.parent / "facts.csv"
    if produced != out_path:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        produced.replace(out_path)
    print(f"extracted facts for {counts['cves_mentioned']} CVEs, {counts['domains_seen']} domains")
    return 0


def _cmd_networks(args) -> int:
    facts = Path(args.facts)
    config = PipelineConfig(
        archive=Path("."),
        feeds=[],
        window_start=date(2008, 2, 1),
        window_end=date(2016, 12, 31),
        out_dir=facts.parent,
    )
    counts = stage_networks(config, facts.parent)
    out_dir = Path(args.out_dir)
    produced = facts.parent / "graphs"
    if produced != out_dir:
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        if out_dir.exists():
            for child in produced.iterdir():
                child.replace(out_dir / child.name)
        else:
            produced.replace(out_dir)
    print(
        f"social network: {counts['participants_in_network']} participants, "
        f"{counts['cves_in_network']} CVEs, {counts['social_edges']} edges; "
        f"domain network: {counts['domains_in_network']} domains, {counts['domain_edges']} edges"
    )
    return 0


def _cmd_run(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = Path(args.out)
    config = load_config(args.config, overrides)
    stages = None
    if args.stages:
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages requested: {unknown}")
    report = run(config, stages=stages)
    done = [s for s, status in report["stages"].items() if status == "ok"]
    print(f"completed stages: {', '.join(done)}; artifacts in {config.out_dir}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "ingest": _cmd_ingest,
        "nvd": _cmd_nvd,
        "extract": _cmd_extract,
        "networks": _cmd_networks,
        "run": _cmd_run,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
