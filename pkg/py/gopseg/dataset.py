# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.dataset
=======================

Synthetic dataset builds and the manifest describing them.

"""
from __future__ import absolute_import, division, print_function

import os

import multiprocessing as mp
from functools import partial

import numpy as np

from astropy.table import Table

from .utils import Logger, DataError, default_mp_proc

from .synthetic import generate_synthetic_clip

from .stream import write_stream

MANIFEST_NAME = "manifest.ecsv"


def manifest_path(data_dir):
    return os.path.join(data_dir, MANIFEST_NAME)


def clip_relpath(split, index):
    return os.path.join(split, "clip_{:05d}.cgop".format(index))


def dataset_plan(cfg):
    """The (split, seed, relative path) rows of a dataset build.
    """
    rows = list()
    for i in range(cfg.n_train):
        rows.append(("train", cfg.data_seed + i, clip_relpath("train", i)))
    for i in range(cfg.n_val):
        rows.append(("val", cfg.data_seed + cfg.n_train + i,
                     clip_relpath("val", i)))
    return rows


def _gen_clip(row, data_dir, gen_cfg):
    split, seed, rel = row
    sample = generate_synthetic_clip(seed, gen_cfg)
    write_stream(sample, os.path.join(data_dir, rel))
    return rel


def generate_dataset(cfg, data_dir, serial=False):
    """Write train and validation stream files plus the manifest.

    Args:
        cfg (RunConfig):  Run configuration (n_train, n_val, data_seed and
            the generation keys).
        data_dir (str):  Output directory.
        serial (bool):  Disable multiprocessing.

    Returns:
        (str):  The manifest path.

    """
    log = Logger.get()
    gen_cfg = cfg.gen_config()
    try:
        for split in ("train", "val"):
            os.makedirs(os.path.join(data_dir, split), exist_ok=True)
    except OSError as e:
        raise DataError("cannot create dataset directory {}: {}"
                        .format(data_dir, e))
    rows = dataset_plan(cfg)
    work = partial(_gen_clip, data_dir=data_dir, gen_cfg=gen_cfg)
    if serial:
        for row in rows:
            work(row)
    else:
        with mp.Pool(processes=default_mp_proc) as pool:
            pool.map(work, rows)
    tab = Table()
    tab["SPLIT"] = np.array([r[0] for r in rows], dtype="U5")
    tab["SEED"] = np.array([r[1] for r in rows], dtype=np.int64)
    tab["PATH"] = np.array([r[2] for r in rows], dtype="U64")
    out = manifest_path(data_dir)
    tab.write(out, format="ascii.ecsv", overwrite=True)
    log.info("Wrote {} train and {} val clips to {}"
             .format(cfg.n_train, cfg.n_val, data_dir))
    return out


def load_manifest(data_dir):
    """Read the manifest table of a dataset directory.
    """
    path = manifest_path(data_dir)
    if not os.path.isfile(path):
        raise DataError("manifest {} does not exist".format(path))
    return Table.read(path, format="ascii.ecsv")


def split_paths(data_dir, split):
    """Absolute stream paths of one split, in manifest order.
    """
    tab = load_manifest(data_dir)
    rows = tab[tab["SPLIT"] == split]
    if len(rows) == 0:
        raise DataError("no '{}' clips in {}".format(split, data_dir))
    return [os.path.join(data_dir, str(p)) for p in rows["PATH"]]
