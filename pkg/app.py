"""
ZoneSpot command line.

    python app.py synth --out corpus/
    python app.py train-zones corpus/train.tsv --out models/zones.zshm
    python app.py train-chars corpus/train.tsv --out models/middle.zshm --mode middle --rules corpus/rules.tsv
    python app.py segment-zones corpus/test.tsv --zone-models models/zones.zshm --out zones/
    python app.py spot corpus/test.tsv --models models/middle.zshm --keywords corpus/keywords.txt \
        --mode middle --rules corpus/rules.tsv --zone-models models/zones.zshm --rerank --out hits.tsv
    python app.py evaluate hits.tsv corpus/test.tsv --out reports/middle --svg
    python app.py dtw-baseline corpus/train.tsv corpus/test.tsv --keywords corpus/keywords.txt --out dtw.tsv
    python app.py experiment --out work/

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import logging
import sys

from engine.errors import ZoneSpotError
from pipeline_runner import (
    cmd_dtw_baseline,
    cmd_evaluate,
    cmd_experiment,
    cmd_segment_zones,
    cmd_spot,
    cmd_synth,
    cmd_train_chars,
    cmd_train_zones,
)
from utils.config_loader import load_settings

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

logger = logging.getLogger("zonespot")


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; usage errors exit with 1 here."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# =========================================
# Argument parsing
# =========================================
def build_parser() -> CliParser:
    parser = CliParser(prog="zonespot", description="Zone-based keyword spotting in text-line images.")
    parser.add_argument("--config", help="KEY=value settings file (default: bundled settings.env)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting; repeatable")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("synth", help="generate the synthetic three-zone corpus")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-chars", help="train character HMMs")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["full", "middle"], default="full")
    p.add_argument("--features", choices=["fg", "bg", "fg+bg"], default="fg+bg")
    p.add_argument("--rules")
    p.add_argument("--zones", choices=["gt", "hmm", "global", "local"], default="gt",
                   help="where middle-zone training takes its boundaries from")
    p.add_argument("--zone-models")
    p.add_argument("--log")

    p = sub.add_parser("train-zones", help="train the four zone HMMs from ground-truth zone rows")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--log")

    p = sub.add_parser("segment-zones", help="write zone boundary files")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--zone-models")
    p.add_argument("--baseline", choices=["global", "local"])

    p = sub.add_parser("spot", help="score keywords against every line")
    p.add_argument("manifest")
    p.add_argument("--models", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["full", "middle"], default="full")
    p.add_argument("--features", choices=["fg", "bg", "fg+bg"], default="fg+bg")
    p.add_argument("--rules")
    p.add_argument("--zones", choices=["hmm", "global", "local", "gt"], default="hmm")
    p.add_argument("--zone-models")
    p.add_argument("--zones-dir", help="precomputed boundary files from segment-zones")
    p.add_argument("--rerank", action="store_true")
    p.add_argument("--validation", help="manifest used to fit the threshold policy")

    p = sub.add_parser("evaluate", help="P/R curve and MAP for a hit list")
    p.add_argument("hits")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--keywords")
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("dtw-baseline", help="word-level DTW ranking")
    p.add_argument("train_manifest")
    p.add_argument("manifest")
    p.add_argument("--keywords", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="full synthetic comparison run")
    p.add_argument("--out", required=True)
    p.add_argument("--repeat", action="store_true", help="run twice and compare every written file")
    return parser


# =========================================
# Dispatch
# =========================================
def run(args: argparse.Namespace) -> None:
    settings = load_settings(args.config, args.overrides)
    if args.command == "synth":
        cmd_synth(settings.synth, args.out)
    elif args.command == "train-chars":
        if args.mode == "middle" and not args.rules:
            raise UsageError("train-chars --mode middle requires --rules")
        cmd_train_chars(args.manifest, settings, args.out, args.mode, args.features, args.rules,
                        args.zones, args.zone_models, args.log)
    elif args.command == "train-zones":
        cmd_train_zones(args.manifest, settings, args.out, args.log)
    elif args.command == "segment-zones":
        if not args.baseline and not args.zone_models:
            raise UsageError("segment-zones needs --zone-models or --baseline")
        cmd_segment_zones(args.manifest, settings, args.out, args.zone_models, args.baseline)
    elif args.command == "spot":
        if args.mode == "middle" and not args.rules:
            raise UsageError("spot --mode middle requires --rules")
        cmd_spot(args.manifest, settings, args.models, args.keywords, args.out, args.mode, args.features,
                 args.rules, args.zones, args.zone_models, args.zones_dir, args.rerank, args.validation)
    elif args.command == "evaluate":
        cmd_evaluate(args.hits, args.manifest, args.out, args.keywords, args.svg)
    elif args.command == "dtw-baseline":
        cmd_dtw_baseline(args.train_manifest, args.manifest, settings, args.keywords, args.out)
    elif args.command == "experiment":
        cmd_experiment(settings, args.out, args.repeat)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except UsageError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ZoneSpotError, OSError) as e:
        logger.debug("data error", exc_info=True)
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
