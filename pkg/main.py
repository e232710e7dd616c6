import sys
from typing import List, Optional

from cli import build_parser
from core.config import get_settings
from core.logging import configure_logging, get_logger

logger = get_logger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    settings = get_settings()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    logger.info("Starting command", command=args.command, app=settings.app_name, version=settings.app_version)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
