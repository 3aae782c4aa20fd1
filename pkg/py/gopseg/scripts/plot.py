# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.plot
======================

High-level functions for plotting clips and predicted masks.

"""
from __future__ import absolute_import, division, print_function

import argparse

from ..config import add_config_args, config_from_args

from ..dataset import split_paths

from ..vis import plot_clips


def parse_plot(optlist=None):
    """Parse plotting options.

    Args:
        optlist (list, optional): Optional list of arguments to parse instead
            of using sys.argv.

    Returns:
        (namespace):  an ArgumentParser namespace.

    """
    parser = argparse.ArgumentParser(prog="gopseg plot")

    add_config_args(parser)

    parser.add_argument("--split", type=str, required=False, default="val",
                        help="Manifest split to plot.")

    parser.add_argument("--masks", type=str, required=False, default=None,
                        help="Directory of predicted .cmsk files (the masks/ "
                        "directory of an eval run).")

    parser.add_argument("--max_clips", type=int, required=False,
                        default=None, help="Plot only the first clips.")

    parser.add_argument("--serial", required=False, default=False,
                        action="store_true",
                        help="Disable the use of multiprocessing.")

    args = None
    if optlist is None:
        args = parser.parse_args()
    else:
        args = parser.parse_args(optlist)

    return args


def run_plot(args):
    """Write one PDF per clip into out_dir.

    Returns:
        (list):  The plot files.

    """
    cfg = config_from_args(args).require("data_dir", "out_dir")
    files = split_paths(cfg.data_dir, args.split)
    if args.max_clips is not None:
        files = files[:args.max_clips]
    return plot_clips(files, cfg.out_dir, mask_dir=args.masks,
                      serial=args.serial)
