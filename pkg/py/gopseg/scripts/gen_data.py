# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.gen_data
==========================

High-level functions for generating a synthetic dataset.

"""
from __future__ import absolute_import, division, print_function

import argparse

from ..utils import GlobalTimers

from ..config import add_config_args, config_from_args

from ..dataset import generate_dataset


def parse_gen_data(optlist=None):
    """Parse dataset generation options.

    This parses either sys.argv or a list of strings passed in.  If passing
    an option list, you can create that more easily using the
    :func:`option_list` function.

    Args:
        optlist (list, optional): Optional list of arguments to parse instead
            of using sys.argv.

    Returns:
        (namespace):  an ArgumentParser namespace.

    """
    parser = argparse.ArgumentParser(prog="gopseg gen-data")

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


def run_gen_data(args):
    """Write the train / val stream files and the manifest.

    Args:
        args (namespace): The parsed arguments.

    Returns:
        (str):  The manifest path.

    """
    gt = GlobalTimers.get()
    gt.start("gen-data")
    cfg = config_from_args(args).require("data_dir")
    cfg.gen_config().validate()
    out = generate_dataset(cfg, cfg.data_dir, serial=args.serial)
    gt.stop("gen-data")
    gt.report()
    return out
