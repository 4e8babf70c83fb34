"""Colored terminal logging."""
import logging
import sys
from typing import Optional

from colorama import Fore, Style, just_fix_windows_console

_LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """Prefix the level name with a color code when writing to a terminal."""

    def __init__(self, fmt: str, color: bool = True):
        super().__init__(fmt)
        self.color = color

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        if not self.color:
            return message
        color = _LEVEL_COLORS.get(record.levelno, "")
        return f"{color}{message}{Style.RESET_ALL}"


def setup_logging(level: int = logging.INFO, color: Optional[bool] = None) -> logging.Logger:
    """Install a single stream handler on the package logger."""
    if color is None:
        color = sys.stderr.isatty()
    if color:
        just_fix_windows_console()
    logger = logging.getLogger("maxstable")
    logger.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ColorFormatter("%(levelname)s %(name)s: %(message)s", color=color))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger
