# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.qa
=======================

Quality Assurance tools for generated datasets.

"""
from __future__ import absolute_import, division, print_function

import os

import multiprocessing as mp
from functools import partial

import json

from collections import OrderedDict

import numpy as np

from .utils import Logger, DataError, default_mp_proc

from .codec import decode_frames

from .stream import read_stream

from .synthetic import decode_query

from .dataset import split_paths

from .train import clip_name


def motion_histogram(sample, bins):
    """Histogram of the block motion vector magnitudes of one clip.
    """
    mags = [np.hypot(pf.motion[..., 0], pf.motion[..., 1]).ravel()
            for g in sample.gops for pf in g.pframes]
    if len(mags) == 0:
        return np.zeros(len(bins) - 1, dtype=np.int64)
    counts, _ = np.histogram(np.concatenate(mags), bins=bins)
    return counts


def qa_clip(path, bins):
    """Statistics of one stream file.

    Returns:
        (tuple):  The clip name and a dict of statistics.

    """
    sample = read_stream(path)
    frames = decode_frames(sample.gops)
    kp1 = sample.K + 1
    res_l1 = list()
    diff_l1 = list()
    for t, g in enumerate(sample.gops):
        ref = g.iframe.astype(np.int32)
        for k, pf in enumerate(g.pframes):
            cur = frames[t * kp1 + k + 1].astype(np.int32)
            res_l1.append(float(np.mean(np.abs(pf.residual))))
            diff_l1.append(float(np.mean(np.abs(cur - ref))))
    areas = [int(m.sum()) for m in sample.gt_masks]
    props = OrderedDict()
    props["n_frames"] = sample.n_frames
    props["query_length"] = sample.query_length()
    props["motion_hist"] = [int(x) for x in motion_histogram(sample, bins)]
    props["residual_l1"] = res_l1
    props["frame_diff_l1"] = diff_l1
    props["mean_residual_l1"] = float(np.mean(res_l1)) if res_l1 else 0.0
    props["mean_frame_diff_l1"] = float(np.mean(diff_l1)) if diff_l1 else 0.0
    props["target_area"] = areas
    props["empty_frames"] = int(sum(1 for a in areas if a == 0))
    props["query"] = decode_query(sample.query)
    return clip_name(path), props


def qa_dataset(data_dir, split="train", radius=6, qa_out=None, serial=False):
    """Run QA on every clip of a split and write a JSON summary.

    Args:
        data_dir (str):  Dataset directory with a manifest.
        split (str):  Manifest split.
        radius (int):  Motion search radius; sets the histogram range.
        qa_out (str):  Output path; default is qa.json in data_dir.
        serial (bool):  Disable multiprocessing.

    Returns:
        (dict):  The QA data written to the file.

    """
    log = Logger.get()
    if qa_out is None:
        qa_out = os.path.join(data_dir, "qa.json")
    paths = split_paths(data_dir, split)
    bins = np.arange(0, int(np.ceil(radius * np.sqrt(2.0))) + 2)
    log.info("Running QA on {} '{}' clips".format(len(paths), split))

    qa_one = partial(qa_clip, bins=bins)
    if serial:
        results = [qa_one(p) for p in paths]
    else:
        with mp.Pool(processes=default_mp_proc) as pool:
            results = pool.map(qa_one, paths)

    qa_full = OrderedDict()
    qa_full["clips"] = OrderedDict(results)
    hist = np.sum([r[1]["motion_hist"] for r in results], axis=0)
    summary = OrderedDict()
    summary["n_clips"] = len(results)
    summary["motion_hist"] = [int(x) for x in hist]
    summary["motion_bins"] = [int(x) for x in bins]
    summary["mean_residual_l1"] = float(np.mean(
        [r[1]["mean_residual_l1"] for r in results]))
    summary["mean_frame_diff_l1"] = float(np.mean(
        [r[1]["mean_frame_diff_l1"] for r in results]))
    summary["mean_target_area"] = float(np.mean(
        [np.mean(r[1]["target_area"]) for r in results]))
    qa_full["summary"] = summary

    try:
        with open(qa_out, "w") as f:
            json.dump(qa_full, f, indent=4, sort_keys=True)
    except OSError as e:
        raise DataError("cannot write {}: {}".format(qa_out, e))
    log.info("Wrote {}".format(qa_out))
    return qa_full
