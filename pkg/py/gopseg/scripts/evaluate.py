# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.evaluate
==========================

High-level functions for evaluating a checkpoint.

"""
from __future__ import absolute_import, division, print_function

import argparse

from ..utils import GlobalTimers

from ..config import add_config_args, config_from_args

from ..train import evaluate_model


def parse_eval(optlist=None):
    """Parse evaluation options.

    This parses either sys.argv or a list of strings passed in.  If passing
    an option list, you can create that more easily using the
    :func:`option_list` function.

    Args:
        optlist (list, optional): Optional list of arguments to parse instead
            of using sys.argv.

    Returns:
        (namespace):  an ArgumentParser namespace.

    """
    parser = argparse.ArgumentParser(prog="gopseg eval")

    add_config_args(parser)

    parser.add_argument("--split", type=str, required=False, default="val",
                        help="Manifest split to evaluate.")

    parser.add_argument("--oracle", required=False, default=False,
                        action="store_true",
                        help="Score the ground truth masks instead of model "
                        "predictions.")

    parser.add_argument("--serial", required=False, default=False,
                        action="store_true",
                        help="Disable the use of multiprocessing.")

    args = None
    if optlist is None:
        args = parser.parse_args()
    else:
        args = parser.parse_args(optlist)

    return args


def run_eval(args):
    """Evaluate and write the report into the out_dir key.

    Args:
        args (namespace): The parsed arguments.

    Returns:
        (OrderedDict):  The metrics.

    """
    gt = GlobalTimers.get()
    gt.start("eval")
    cfg = config_from_args(args)
    if args.oracle:
        cfg.require("data_dir", "out_dir")
    else:
        cfg.require("data_dir", "out_dir", "ckpt")
    report = evaluate_model(cfg, cfg.ckpt, cfg.data_dir, cfg.out_dir,
                            split=args.split, serial=args.serial,
                            oracle=args.oracle)
    gt.stop("eval")
    gt.report()
    return report
