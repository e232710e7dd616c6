"""
Command-line surface: datagen, run and report
"""
from .commands import build_parser, cmd_datagen, cmd_report, cmd_run
from .config_loader import parse_config

__all__ = ["build_parser", "cmd_datagen", "cmd_report", "cmd_run", "parse_config"]
