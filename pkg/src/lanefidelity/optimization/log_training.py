# -*- coding: utf-8 -*-
"""
Logging helpers for toy training runs: a file (and optional console) logger
and a line-delimited JSON writer with one record per iteration.
"""

import json
import logging
import os

FORMAT_STR = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def initialise_logger(name,
                      logfile=None,
                      file_format_str=FORMAT_STR,
                      print_to_console=False,
                      console_format_str=FORMAT_STR,
                      level="INFO"):
    """
    Initialise a logger that writes to a logfile and optionally to the console.

    Parameters
    ----------
    name : str
        logger name.
    logfile : str, optional
        name/path to the log file. No file handler is attached when omitted.
    file_format_str : str, optional
        Format of the messages written to the log file.
    print_to_console : bool, optional
        Also print messages to the console. The default is False.
    console_format_str : str, optional
        Format of the console messages.
    level : str, optional
        Name of the logging level. The default is "INFO".

    Returns
    -------
    logger : logging.Logger
    """
    # basic configurations
    #=====================
    logging.basicConfig(level=getattr(logging, level))
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level))

    # file log handler
    #=================
    if logfile:
        file_log_handler = logging.FileHandler(logfile)
        file_log_handler.setFormatter(logging.Formatter(file_format_str))
        logger.addHandler(file_log_handler)

    # console log handler
    #====================
    if print_to_console:
        console_log_handler = logging.StreamHandler()
        console_log_handler.setFormatter(logging.Formatter(console_format_str))
        logger.addHandler(console_log_handler)

    return logger


class TrainingLog:
    """
    Line-delimited JSON log of a training run.

    Example use
    -----------
    with TrainingLog("out/train.ndjson") as log:
        log.write(iteration=0, loss=1.2, terms={"reg": 0.8})
    """

    def __init__(self, path):
        self.path = path
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        self._fh = open(path, "w", encoding="utf-8", newline="\n")

    def write(self, iteration, loss, terms=None):
        record = {"iteration": int(iteration), "loss": float(loss)}
        record.update({k: float(v) for k, v in (terms or {}).items()})
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
