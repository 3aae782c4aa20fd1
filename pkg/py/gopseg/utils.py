# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.utils
=======================

Utility functions, logging, timers and the package exception hierarchy.

"""
from __future__ import absolute_import, division, print_function

import os
import time

from collections import OrderedDict

from desiutil.log import get_logger

# Multiprocessing environment setup

default_mp_proc = None
"""Default number of multiprocessing processes.
Set globally on first import.
"""

if "SLURM_CPUS_PER_TASK" in os.environ:
    default_mp_proc = int(os.environ["SLURM_CPUS_PER_TASK"])
else:
    import multiprocessing as _mp
    default_mp_proc = max(1, _mp.cpu_count() // 2)


class GopsegError(RuntimeError):
    """Base class of all errors raised by gopseg.

    The ``category`` is a short machine-parsable token reported by the
    command line tools.
    """
    category = "internal"
    exit_code = 1


class UsageError(GopsegError):
    category = "usage"
    exit_code = 2


class ShapeError(GopsegError):
    category = "shape"
    exit_code = 2


class ConfigError(GopsegError):
    category = "config"
    exit_code = 3


class DataError(GopsegError):
    category = "data"
    exit_code = 4


class StreamError(GopsegError):
    category = "stream"
    exit_code = 5


class BadMagicError(StreamError):
    category = "stream.bad_magic"


class VersionMismatchError(StreamError):
    category = "stream.version"


class TruncatedPayloadError(StreamError):
    category = "stream.truncated"


class StreamValidationError(StreamError):
    category = "stream.invalid"


class CheckpointError(GopsegError):
    category = "checkpoint"
    exit_code = 6

    def __init__(self, msg, names=None):
        super().__init__(msg)
        self.names = list(names) if names is not None else list()


class NonFiniteError(GopsegError):
    category = "nonfinite"
    exit_code = 7

    def __init__(self, msg, name=None):
        super().__init__(msg)
        self.name = name


class Logger(object):
    """Process-wide logger.

    All gopseg code logs through the single instance returned by
    :meth:`Logger.get`.  The level is taken from the GOPSEG_LOGLEVEL
    environment variable (default INFO).

    """
    _instance = None

    def __init__(self):
        level = os.environ.get("GOPSEG_LOGLEVEL", "INFO").upper()
        self._log = get_logger(level)

    @classmethod
    def get(cls):
        if cls._instance is None:
            cls._instance = Logger()
        return cls._instance

    def debug(self, msg):
        self._log.debug(msg)

    def info(self, msg):
        self._log.info(msg)

    def warning(self, msg):
        self._log.warning(msg)

    def error(self, msg):
        self._log.error(msg)

    def critical(self, msg):
        self._log.critical(msg)


class Timer(object):
    """Simple wall-clock timer with start / stop accumulation.
    """

    def __init__(self):
        self._start = None
        self._total = 0.0

    def start(self):
        if self._start is None:
            self._start = time.perf_counter()

    def stop(self):
        if self._start is not None:
            self._total += time.perf_counter() - self._start
            self._start = None

    def is_running(self):
        return self._start is not None

    def clear(self):
        self._start = None
        self._total = 0.0

    def seconds(self):
        if self._start is not None:
            return self._total + (time.perf_counter() - self._start)
        return self._total

    def report(self, msg):
        log = Logger.get()
        log.info("{}:  {:0.3f} seconds".format(msg, self.seconds()))


class GlobalTimers(object):
    """Named timers shared by the whole process.
    """
    _instance = None

    def __init__(self):
        self._timers = OrderedDict()

    @classmethod
    def get(cls):
        if cls._instance is None:
            cls._instance = GlobalTimers()
        return cls._instance

    def start(self, name):
        if name not in self._timers:
            self._timers[name] = Timer()
        self._timers[name].start()

    def stop(self, name):
        if name not in self._timers:
            raise KeyError("timer '{}' was never started".format(name))
        self._timers[name].stop()

    def seconds(self, name):
        return self._timers[name].seconds()

    def names(self):
        return list(self._timers.keys())

    def report(self):
        log = Logger.get()
        for name, tm in self._timers.items():
            if tm.is_running():
                continue
            log.info("Global timer {}:  {:0.3f} seconds"
                     .format(name, tm.seconds()))


def option_list(opts):
    """Convert key, value pairs into a list.

    This converts a dictionary into an options list that can be passed to
    ArgumentParser.parse_args().  The value for each dictionary key will be
    converted to a string.  Values that are True will be assumed to not have
    a string argument added to the options list.

    Args:
        opts (dict):  Dictionary of options.

    Returns:
        (list): The list of options.

    """
    optlist = []
    for key, val in opts.items():
        keystr = "--{}".format(key)
        if val is not None:
            if isinstance(val, bool):
                if val:
                    optlist.append(keystr)
            else:
                optlist.append(keystr)
                if isinstance(val, float):
                    optlist.append("{:.14e}".format(val))
                elif isinstance(val, (list, tuple)):
                    optlist.extend(["{}".format(x) for x in val])
                else:
                    optlist.append("{}".format(val))
    return optlist
