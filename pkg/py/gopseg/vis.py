# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.vis
=======================

Visualization tools.

"""
from __future__ import absolute_import, division, print_function

import os
import warnings

import numpy as np

import multiprocessing as mp

from .utils import Logger, default_mp_proc

from .codec import decode_frames

from .stream import read_stream, read_masks

from .synthetic import decode_query

from .train import clip_name

plt = None


def set_matplotlib_pdf_backend():
    """Set the matplotlib backend to PDF.

    This is necessary to render high resolution figures.
    """
    global plt
    if plt is not None:
        return
    try:
        import matplotlib
        matplotlib.use("pdf")
        import matplotlib.pyplot as plt
    except ValueError:
        warnings.warn(
            """Couldn't set the PDF matplotlib backend,
mask plots may be low resolution.
Proceeding with the default matplotlib backend."""
        )
        import matplotlib.pyplot as plt


def plot_mask_contour(ax, mask, color, linewidth=1.0):
    """Outline a binary mask.  Empty masks draw nothing.
    """
    mask = np.asarray(mask, dtype=float)
    if mask.max() <= 0:
        return
    ax.contour(mask, levels=[0.5], colors=[color], linewidths=linewidth)


def plot_clip_file(clip_file, mask_file, outfile):
    """One panel per frame with the ground truth and predicted outlines.

    Args:
        clip_file (str):  Stream file.
        mask_file (str):  Optional predicted mask file (None to skip).
        outfile (str):  Output PDF.

    Returns:
        None

    """
    set_matplotlib_pdf_backend()

    from matplotlib.patches import Patch
    log = Logger.get()

    if os.path.isfile(outfile):
        log.info("Skipping existing plot {}".format(outfile))
        return
    log.info("Creating {}".format(outfile))

    sample = read_stream(clip_file)
    frames = decode_frames(sample.gops)
    pred = None
    if mask_file is not None:
        pred = read_masks(mask_file)
    iframes = set(sample.iframe_indices())

    ncol = sample.K + 1
    nrow = sample.T
    fig = plt.figure(figsize=(3 * ncol, 3 * nrow + 0.6))
    for f in range(sample.n_frames):
        ax = fig.add_subplot(nrow, ncol, f + 1)
        ax.imshow(frames[f], interpolation="nearest")
        plot_mask_contour(ax, sample.gt_masks[f], "lime")
        if pred is not None:
            plot_mask_contour(ax, pred[f], "red")
        ax.set_title("{} {}".format("I" if f in iframes else "P", f),
                     fontsize="small")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle('"{}"'.format(decode_query(sample.query)), fontsize="large")
    handles = [Patch(color="lime", label="Ground truth")]
    if pred is not None:
        handles.append(Patch(color="red", label="Prediction"))
    fig.legend(handles=handles, loc="lower center", ncol=len(handles))
    plt.savefig(outfile, dpi=150, format="pdf")
    plt.close()
    return


def plot_clips(files, out_dir, mask_dir=None, serial=False):
    """Plot stream files, optionally with predictions from an eval run.

    Args:
        files (list):  Stream files.
        out_dir (str):  Output directory for the plots.
        mask_dir (str):  Directory of <clip>.cmsk files, or None.
        serial (bool):  If True, disable use of multiprocessing.

    Returns:
        (list):  The plot files.

    """
    log = Logger.get()
    log.info("Plotting {} clips".format(len(files)))

    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)

    plan = list()
    for f in files:
        name = clip_name(f)
        mfile = None
        if mask_dir is not None:
            mfile = os.path.join(mask_dir, "{}.cmsk".format(name))
            if not os.path.isfile(mfile):
                log.warning("No predicted masks for {}".format(name))
                mfile = None
        plan.append((f, mfile, os.path.join(out_dir, "{}.pdf".format(name))))

    if serial:
        for params in plan:
            plot_clip_file(*params)
    else:
        with mp.Pool(processes=default_mp_proc) as pool:
            pool.starmap(plot_clip_file, plan)

    return [p[2] for p in plan]
