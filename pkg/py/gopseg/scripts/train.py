# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.train
=======================

High-level functions for training a model.

"""
from __future__ import absolute_import, division, print_function

import argparse

from ..utils import GlobalTimers

from ..config import add_config_args, config_from_args

from ..train import train_model


def parse_train(optlist=None):
    """Parse training options.

    This parses either sys.argv or a list of strings passed in.  If passing
    an option list, you can create that more easily using the
    :func:`option_list` function.

    Args:
        optlist (list, optional): Optional list of arguments to parse instead
            of using sys.argv.

    Returns:
        (namespace):  an ArgumentParser namespace.

    """
    parser = argparse.ArgumentParser(prog="gopseg train")

    add_config_args(parser)

    parser.add_argument("--resume", type=str, required=False, default=None,
                        help="Continue from this checkpoint (and its .opt "
                        "optimizer state).")

    args = None
    if optlist is None:
        args = parser.parse_args()
    else:
        args = parser.parse_args(optlist)

    return args


def run_train(args):
    """Train and write the checkpoint named by the ckpt key.

    Args:
        args (namespace): The parsed arguments.

    Returns:
        (list):  The (step, L_LR, L_HR, total) history.

    """
    gt = GlobalTimers.get()
    gt.start("train")
    cfg = config_from_args(args).require("data_dir", "ckpt")
    history = train_model(cfg, cfg.data_dir, cfg.ckpt, resume=args.resume)
    gt.stop("train")
    gt.report()
    return history
