"""Command-line entry point: ``reflectctl --config run.json``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config, parse_config
from .errors import ConfigError
from .harness import EXIT_ERROR, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reflectctl", description="Controlled reflected SDE solvers and cross-checks.")
    p.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
    p.add_argument("--mode", choices=["simulate", "gbsde", "value-dpp", "hjb", "compare", "acceptance"],
                   help="override config mode")
    p.add_argument("--out", metavar="DIR", help="override outputs.directory")
    p.add_argument("--seed", type=int, help="override mc.seed")
    p.add_argument("--split-paths", action="store_true", help="fit regressions and evaluate on disjoint path halves")
    p.add_argument("--threads", type=int, metavar="N", help="thread budget (0 = all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.mode or args.seed is not None or args.split_paths or args.threads is not None:
            data = cfg.model_dump(mode="json", exclude_unset=True)
            if args.mode:
                data["mode"] = args.mode
            if args.seed is not None:
                data.setdefault("mc", {})["seed"] = args.seed
            if args.split_paths:
                data.setdefault("mc", {})["split_paths"] = True
            if args.threads is not None:
                data["threads"] = args.threads
            cfg = parse_config(data)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = run(cfg, args.out)
    sys.stdout.write(report.to_text())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
