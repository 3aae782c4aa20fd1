# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.scripts.qa
====================

High-level functions for running QA on a dataset.

"""
from __future__ import absolute_import, division, print_function

import argparse

from ..config import add_config_args, config_from_args

from ..qa import qa_dataset


def parse_qa(optlist=None):
    """Parse QA options.

    Args:
        optlist (list, optional): Optional list of arguments to parse instead
            of using sys.argv.

    Returns:
        (namespace):  an ArgumentParser namespace.

    """
    parser = argparse.ArgumentParser(prog="gopseg qa")

    add_config_args(parser)

    parser.add_argument("--split", type=str, required=False, default="train",
                        help="Manifest split to check.")

    parser.add_argument("--out", type=str, required=False, default=None,
                        help="Output file for QA.  Default is qa.json in "
                        "the dataset directory.")

    parser.add_argument("--serial", required=False, default=False,
                        action="store_true",
                        help="Disable the use of multiprocessing.")

    args = None
    if optlist is None:
        args = parser.parse_args()
    else:
        args = parser.parse_args(optlist)

    return args


def run_qa(args):
    """Run QA.

    Args:
        args (namespace): The parsed arguments.

    Returns:
        (dict):  The QA data.

    """
    cfg = config_from_args(args).require("data_dir")
    return qa_dataset(cfg.data_dir, split=args.split, radius=cfg.radius,
                      qa_out=args.out, serial=args.serial)
