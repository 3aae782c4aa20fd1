# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.bench
=======================

High-level functions for the throughput benchmark.

"""
from __future__ import absolute_import, division, print_function

import os
import argparse

from ..utils import Logger, DataError

from ..config import add_config_args, config_from_args

from ..train import benchmark, format_bench


def parse_bench(optlist=None):
    """Parse benchmark options.

    Args:
        optlist (list, optional): Optional list of arguments to parse instead
            of using sys.argv.

    Returns:
        (namespace):  an ArgumentParser namespace.

    """
    parser = argparse.ArgumentParser(prog="gopseg bench")

    add_config_args(parser)

    parser.add_argument("--split", type=str, required=False, default="val",
                        help="Manifest split to take clips from.")

    parser.add_argument("--clips", type=int, required=False, default=4,
                        help="Number of clips per timed iteration.")

    args = None
    if optlist is None:
        args = parser.parse_args()
    else:
        args = parser.parse_args(optlist)

    return args


def run_bench(args):
    """Run the benchmark and write bench.txt into out_dir (if set).

    Returns:
        (OrderedDict):  The benchmark report.

    """
    log = Logger.get()
    cfg = config_from_args(args).require("data_dir")
    report = benchmark(cfg, cfg.data_dir, split=args.split,
                       max_clips=args.clips)
    text = format_bench(report)
    if cfg.out_dir != "":
        try:
            os.makedirs(cfg.out_dir, exist_ok=True)
        except OSError as e:
            raise DataError("cannot create {}: {}".format(cfg.out_dir, e))
        out = os.path.join(cfg.out_dir, "bench.txt")
        try:
            with open(out, "w") as f:
                f.write(text)
        except OSError as e:
            raise DataError("cannot write {}: {}".format(out, e))
        log.info("Wrote {}".format(out))
    else:
        print(text, end="")
    return report
