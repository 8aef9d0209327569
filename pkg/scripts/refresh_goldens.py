#!/usr/bin/env python3
"""
Golden refresh — regenerates checked-in dumps outside the CLI.

Usage:
    python scripts/refresh_goldens.py [--fixture pp_merge] [--check]

For every fixtures/<name>.yaml that has a fixtures/<name>.plan next to it,
rewrites the .plan dump. With --check, nothing is written and the exit code
is 1 if any golden is stale.
"""

import argparse
import logging
import sys
from pathlib import Path

# Allow running from project root
sys.path.insert(0, str(Path(__file__).parent.parent))

from dotenv import load_dotenv
load_dotenv()

logging.basicConfig(level=logging.INFO, format="%(asctime)s  %(levelname)-8s  %(message)s")
logger = logging.getLogger(__name__)

FIXTURES = Path(__file__).parent.parent / "fixtures"


def main() -> int:
    parser = argparse.ArgumentParser(description="Regenerate golden plan dumps")
    parser.add_argument("--fixture", type=str, default=None, help="Single fixture name (default: all)")
    parser.add_argument("--check",   action="store_true", help="Report stale goldens without writing")
    args = parser.parse_args()

    from reshard.routing import dump_plan, plan_scenario
    from reshard.scenario import load_scenario

    goldens = sorted(FIXTURES.glob("*.plan"))
    if args.fixture:
        goldens = [g for g in goldens if g.stem == args.fixture]
        if not goldens:
            logger.error("No golden named '%s'. Valid options: %s", args.fixture,
                         ", ".join(g.stem for g in sorted(FIXTURES.glob("*.plan"))))
            return 1

    stale = 0
    for golden in goldens:
        text = dump_plan(plan_scenario(load_scenario(golden.with_suffix(".yaml"))))
        if golden.read_text() == text:
            logger.info("%s: up to date", golden.name)
            continue
        stale += 1
        if args.check:
            logger.warning("%s: stale", golden.name)
        else:
            golden.write_text(text)
            logger.info("%s: rewritten (%d lines)", golden.name, text.count("\n"))

    logger.info("Done.")
    return 1 if args.check and stale else 0


if __name__ == "__main__":
    sys.exit(main())
