# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.sweep
=======================

High-level functions for the object query count sweep.

"""
from __future__ import absolute_import, division, print_function

import argparse

from ..utils import GlobalTimers

from ..config import add_config_args, config_from_args

from ..train import sweep_n_queries


def parse_sweep(optlist=None):
    """Parse sweep options.

    Args:
        optlist (list, optional): Optional list of arguments to parse instead
            of using sys.argv.

    Returns:
        (namespace):  an ArgumentParser namespace.

    """
    parser = argparse.ArgumentParser(prog="gopseg sweep-nq")

    add_config_args(parser)

    parser.add_argument("--serial", required=False, default=False,
                        action="store_true",
                        help="Disable the use of multiprocessing.")

    args = None
    if optlist is None:
        args = parser.parse_args()
    else:
        args = parser.parse_args(optlist)

    return args


def run_sweep(args):
    """Train and evaluate once per sweep_values entry.

    Returns:
        (Table):  The sweep table, also written as sweep_nq.ecsv in out_dir.

    """
    gt = GlobalTimers.get()
    gt.start("sweep-nq")
    cfg = config_from_args(args).require("data_dir", "out_dir")
    tab = sweep_n_queries(cfg, cfg.data_dir, cfg.out_dir,
                          values=cfg.sweep_values, serial=args.serial)
    gt.stop("sweep-nq")
    gt.report()
    return tab
