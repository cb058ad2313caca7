"""``depriv`` command line.

Exit codes: 0 success, 2 usage, 3 I/O, 4 schema, 5 parse, 6 empty input,
7 degenerate data, 8 numerical failure, 9 unknown/empty region, 10 network,
11 configuration, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig
from .errors import DeprivError
from .pipeline import STAGES

log = logging.getLogger("depriv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depriv", description="Block-group deprivation index pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--attributes", help="attribute CSV")
        p.add_argument("--geometry", help="boundary GeoJSON")
        p.add_argument("--weights", choices=["sd", "pca", "file"])
        p.add_argument("--weights-file", dest="weights_file")
        p.add_argument("--threshold", help="region:<id> or value:<x>")
        p.add_argument("--contiguity", choices=["queen", "rook"])
        p.add_argument("--within-city-only", dest="within_city_only", action="store_const", const=True)
        p.add_argument("--sweep-direction", dest="sweep_direction", choices=["concentrating", "diluting"])
        p.add_argument("--workers", type=int)
        p.add_argument("--out")
        if name == "fetch":
            p.add_argument("--states", help="comma-separated state FIPS codes")
            p.add_argument("--year-span", dest="fetch_year_span")
            p.add_argument("--endpoint", dest="fetch_endpoint")
            p.add_argument("--fetch-dir", dest="fetch_dir")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "attributes",
            "geometry",
            "weights",
            "weights_file",
            "threshold",
            "contiguity",
            "within_city_only",
            "sweep_direction",
            "workers",
            "out",
            "fetch_year_span",
            "fetch_endpoint",
            "fetch_dir",
        )
    }
    if getattr(args, "states", None):
        overrides["fetch_states"] = tuple(s.strip() for s in args.states.split(",") if s.strip())
    return cfg.override(**overrides).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        result = STAGES[args.command](cfg)
    except DeprivError as exc:
        print(json.dumps({"error": exc.to_dict()}, sort_keys=True, default=str), file=sys.stderr)
        return exc.exit_code
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
