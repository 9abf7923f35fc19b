"""Command-line entry point: one subcommand per pipeline stage plus ``run``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, LifestyleError, StageError
from .pipeline import STAGES, PipelineConfig, Workspace, resolve_output_dir, run_pipeline, run_stage, write_manifest

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("energy_lifestyles")


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, assignments) -> dict:
    """Apply ``section.key=value`` overrides (values parsed as TOML literals)."""
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} does not name a table entry")
        node[parts[-1]] = _parse_value(value.strip())
    return doc


def load_config(args) -> PipelineConfig:
    doc = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    if args.input:
        doc["input"] = args.input
        doc.pop("synthetic", None)
    if "input" not in doc and "synthetic" not in doc:
        doc["synthetic"] = {}
    if args.households is not None:
        doc.setdefault("synthetic", {})["n_households"] = args.households
    if args.days is not None:
        doc.setdefault("synthetic", {})["n_days"] = args.days
    if args.seed is not None:
        doc["seed"] = args.seed
    apply_overrides(doc, args.set)
    return PipelineConfig.from_dict(doc).validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="energy-lifestyles",
        description="Load-shape dictionary, LDA attributes and seasonal lifestyles from hourly readings.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate synthetic readings (or ingest the configured input)",
        "dict": "build the load-shape dictionary",
        "encode": "map every day to its nearest dictionary shape and count",
        "lda": "fit the initial attribute model",
        "merge": "merge attributes with similar composite shapes",
        "lifestyles": "cluster households into lifestyles (with elbow curve)",
        "seasons": "seasonal lifestyles, transitions and Changer labels",
        "features": "load features from raw readings",
        "classify": "random-forest lifestyle and Changer classifiers",
        "report": "write report.txt and manifest.csv",
        "run": "run every stage in order",
    }
    for name in (*STAGES, "run"):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("-c", "--config", help="TOML configuration file")
        p.add_argument("-o", "--out", help="output directory (overrides config and environment)")
        p.add_argument("--seed", type=int, help="top-level seed")
        p.add_argument("--input", help="wide-daily CSV or .npz readings instead of synthetic data")
        p.add_argument("--households", type=int, help="synthetic household count")
        p.add_argument("--days", type=int, help="synthetic day count")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. lda.k_initial=8")
        p.add_argument("--force", action="store_true", help="accept stale upstream artifacts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "run":
            report = run_pipeline(cfg, args.out, force=args.force)
            print(f"wrote {len(report.manifest)} artifacts to {report.output_dir}")
            print((report.output_dir / "report.txt").read_text(), end="")
        else:
            ws = Workspace(resolve_output_dir(cfg, args.out), force=args.force)
            try:
                elapsed = run_stage(cfg, args.command, ws)
            finally:
                write_manifest(ws)
            print(f"{args.command}: done in {elapsed:.2f} s ({ws.root})")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LifestyleError as exc:
        stage = "run" if args.command == "run" else args.command
        print(f"error: stage '{stage}': {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
