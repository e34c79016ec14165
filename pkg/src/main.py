""" Point cloud quality assessment - Main Entry Point """
import logging
import sys
from typing import Optional, Sequence

from src.ui.cli import build_parser, run_command

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def configure_logging(verbose: bool = False, quiet: bool = False):
    """Root logger to stderr; --verbose selects DEBUG, --quiet WARNING."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, configure logging, run the command; returns the exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
