import logging
import sys

import colorlog

LOG_FORMAT = "%(log_color)s%(asctime)s [%(levelname)s] %(message)s"
LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "bold_red",
}


def level_for(verbose: bool = False, quiet: bool = False) -> int:
    """-v gives per-epoch DEBUG output, -q keeps warnings (alarms, clamping) and errors."""
    if verbose:
        return logging.DEBUG
    return logging.WARNING if quiet else logging.INFO


def setup_logging(logger_name, level=logging.INFO, stream=None):
    """
    Attach one coloured handler to `logger_name`. Records go to stderr so that verdict records
    and reports on stdout stay machine readable; colours are dropped when the stream is no TTY.
    """
    log = logging.getLogger(logger_name)

    if not log.handlers:
        stream = sys.stderr if stream is None else stream
        handler = logging.StreamHandler(stream)
        handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT, log_colors=LOG_COLORS, stream=stream))
        log.addHandler(handler)

    log.setLevel(level)
    log.propagate = False
    return log


def setup_add_logger(log, additional_logger_name, new_level=logging.WARNING):
    """Route another logger (e.g. 'py.warnings' for numpy overflow warnings) through the handlers of `log`."""
    log_add = logging.getLogger(additional_logger_name)
    log_add.setLevel(new_level)
    for handler_i in log.handlers:
        if handler_i not in log_add.handlers:
            log_add.addHandler(handler_i)
    log_add.propagate = False
    return log_add
