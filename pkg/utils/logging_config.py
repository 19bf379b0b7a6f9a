"""
File used to the define the configurations of logging
"""

import logging

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
NOISY_LOGGERS = ("matplotlib", "PIL")

str_to_level = {
    "not_set": logging.NOTSET,
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warn": logging.WARN,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "critical": logging.CRITICAL,
    "fatal": logging.FATAL
}


def setup_logging(level_str: str, force: bool = False) -> None:
    """
    Configures the root logger used by every FlowLens module and caps
    the plotting libraries at WARNING

    Args:
        level_str (str): minimum level that leads to logging.
        Can only be 'not_set', 'debug', 'info', 'warn',
        'warning', 'error', 'critical', 'fatal'
        force (bool): replace handlers installed by an earlier call

    Returns:
        None
    """
    level = str_to_level[level_str]
    logging.basicConfig(format=LOG_FORMAT, level=level, force=force)
    logging.getLogger().setLevel(level)
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
