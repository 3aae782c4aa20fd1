# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.main
======================

Command dispatcher of the ``gopseg`` executable.

"""
from __future__ import absolute_import, division, print_function

import io
import sys
import traceback

from collections import OrderedDict
from contextlib import redirect_stderr

from ..utils import Logger, GopsegError, UsageError

from .gen_data import parse_gen_data, run_gen_data
from .train import parse_train, run_train
from .evaluate import parse_eval, run_eval
from .sweep import parse_sweep, run_sweep
from .bench import parse_bench, run_bench
from .qa import parse_qa, run_qa
from .plot import parse_plot, run_plot

commands = OrderedDict([
    ("gen-data", (parse_gen_data, run_gen_data,
                  "Generate a synthetic compressed dataset.")),
    ("train", (parse_train, run_train, "Train a model.")),
    ("eval", (parse_eval, run_eval, "Evaluate a checkpoint.")),
    ("sweep-nq", (parse_sweep, run_sweep,
                  "Train and evaluate over object query counts.")),
    ("bench", (parse_bench, run_bench,
               "Compressed vs decoded feature throughput.")),
    ("qa", (parse_qa, run_qa, "Dataset statistics.")),
    ("plot", (parse_plot, run_plot, "Plot clips and predicted masks.")),
])


def usage():
    lines = ["usage: gopseg <command> [options]", "", "commands:"]
    for name, (_, _, hlp) in commands.items():
        lines.append("  {:<10s} {}".format(name, hlp))
    return "\n".join(lines) + "\n"


def error_line(err):
    """One machine-parsable line describing a failure.
    """
    category = getattr(err, "category", GopsegError.category)
    msg = " ".join(str(err).split())
    return "error category={} message={}".format(category, msg)


def parse_quietly(parse, argv):
    """Run an argparse based parser, turning its exit into a UsageError.

    Help output still goes to stdout and ends the command with code 0.
    """
    err = io.StringIO()
    try:
        with redirect_stderr(err):
            return parse(argv)
    except SystemExit as e:
        if not e.code:
            raise
        lines = [x for x in err.getvalue().splitlines() if x.strip() != ""]
        raise UsageError(lines[-1] if len(lines) > 0 else "bad arguments")


def main(argv=None):
    """Run one command.

    Every failure ends with a single ``error category=... message=...``
    line on stderr and a nonzero exit code.

    Args:
        argv (list):  Command name followed by its options; defaults to
            sys.argv[1:].

    Returns:
        (int):  The process exit code.

    """
    if argv is None:
        argv = sys.argv[1:]
    if len(argv) == 0 or argv[0] in ("-h", "--help"):
        sys.stdout.write(usage())
        return 0
    name = argv[0]
    if name not in commands:
        sys.stdout.write(usage())
        sys.stderr.write(error_line(UsageError(
            "unknown command '{}'".format(name))) + "\n")
        return UsageError.exit_code
    parse, run, _ = commands[name]
    try:
        args = parse_quietly(parse, argv[1:])
        run(args)
    except SystemExit as e:
        # --help
        return 0 if not e.code else UsageError.exit_code
    except GopsegError as e:
        sys.stderr.write(error_line(e) + "\n")
        return e.exit_code
    except Exception as e:
        Logger.get().debug(traceback.format_exc())
        sys.stderr.write(error_line(e) + "\n")
        return GopsegError.exit_code
    return 0
