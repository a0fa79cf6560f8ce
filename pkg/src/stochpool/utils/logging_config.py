"""
Logging configuration for stochpool with Rich CLI integration.
"""

import os
import logging
import logging.handlers
from typing import Optional
from rich.console import Console
from rich.logging import RichHandler

LOGGER_NAME = "StochPool"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _rotating_handler(log_dir: str, filename: str, level: int) -> logging.Handler:
    handler = logging.handlers.RotatingFileHandler(
        os.path.join(log_dir, filename),
        maxBytes=5 * 1024 * 1024,
        backupCount=5,
    )
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    return handler


def setup_logging(enable_logging: bool = True, log_dir: str = "logs",
                  cli_mode: bool = False, console: Optional[Console] = None) -> logging.Logger:
    """
    Configure the package logger.

    Args:
        enable_logging: Whether to enable logging at all
        log_dir: Directory for the rotating log files
        cli_mode: Route console output through Rich (warnings and errors only)
        console: Rich console used in CLI mode

    Returns:
        The configured "StochPool" logger
    """
    if not enable_logging:
        logger = logging.getLogger(f"{LOGGER_NAME}.null")
        logger.setLevel(logging.CRITICAL)
        logger.addHandler(logging.NullHandler())
        logger.propagate = False
        return logger

    os.makedirs(log_dir, exist_ok=True)

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.INFO)

    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    logger.addHandler(_rotating_handler(log_dir, "stochpool.log", logging.INFO))
    logger.addHandler(_rotating_handler(log_dir, "stochpool_error.log", logging.ERROR))

    if cli_mode and console:
        console_handler = RichHandler(
            console=console,
            show_time=False,
            show_path=False,
            show_level=False,
            markup=True,
            rich_tracebacks=True,
            tracebacks_show_locals=False,
        )
        # progress bars own the terminal; only surface problems
        console_handler.setLevel(logging.WARNING)
        logger.addHandler(console_handler)
    elif not cli_mode:
        ch = logging.StreamHandler()
        ch.setLevel(logging.INFO)
        ch.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(ch)

    return logger


def setup_cli_logging(console: Console, enable_logging: bool = True,
                      log_dir: str = "logs") -> logging.Logger:
    """Logging tuned for the click CLI: files plus Rich warnings."""
    return setup_logging(enable_logging=enable_logging, log_dir=log_dir,
                         cli_mode=True, console=console)


def get_quiet_logger(name: str = f"{LOGGER_NAME}.Quiet", log_dir: str = "logs") -> logging.Logger:
    """
    Get a child of the package logger for use while a Rich progress display
    owns the terminal.

    It has no handlers of its own. Records propagate to the package logger,
    whose file handlers take everything from INFO up and whose CLI console
    handler shows only warnings and errors. If the package logger has not
    been configured yet, it gets the rotating log file.
    """
    if not name.startswith(f"{LOGGER_NAME}."):
        name = f"{LOGGER_NAME}.{name}"
    logger = logging.getLogger(name)
    logger.setLevel(logging.INFO)

    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
    logger.propagate = True

    parent = logging.getLogger(LOGGER_NAME)
    if not parent.handlers:
        os.makedirs(log_dir, exist_ok=True)
        parent.setLevel(logging.INFO)
        parent.addHandler(_rotating_handler(log_dir, "stochpool.log", logging.INFO))

    return logger
