# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.codec
=======================

An MPEG-like group-of-pictures codec with integer-pel block motion.

Each GoP starts with an I-frame.  Every P-frame of the GoP is predicted from
that I-frame by block motion compensation, and the exact prediction error is
kept as a signed 16-bit residual, so decoding is lossless.

"""
from __future__ import absolute_import, division, print_function

import numpy as np

from .utils import DataError, ShapeError


class PFrame(object):
    """Motion field and residual of one predicted frame.

    Args:
        motion (array):  int16 [H/B, W/B, 2] displacement (dy, dx) per block.
        residual (array):  int16 [H, W, 3] frame minus prediction.

    """

    def __init__(self, motion, residual):
        self.motion = np.asarray(motion, dtype=np.int16)
        self.residual = np.asarray(residual, dtype=np.int16)

    @property
    def block(self):
        return self.residual.shape[0] // self.motion.shape[0]

    def motion_field(self):
        """The block-constant motion materialized per pixel, [H, W, 2].
        """
        b = self.block
        return np.repeat(np.repeat(self.motion, b, axis=0), b, axis=1)


class GoP(object):
    """One I-frame followed by K P-frames.
    """

    def __init__(self, iframe, pframes):
        self.iframe = np.asarray(iframe, dtype=np.uint8)
        self.pframes = list(pframes)

    @property
    def K(self):
        return len(self.pframes)

    @property
    def n_frames(self):
        return 1 + len(self.pframes)


def _check_blocks(shape, block):
    h, w = shape[:2]
    if block < 1 or h % block != 0 or w % block != 0:
        raise ShapeError("image {}x{} is not divisible into {}x{} blocks"
                         .format(h, w, block, block))
    return h // block, w // block


def _shifted(img, dy, dx):
    # Displaced read with clamp-to-border.
    h, w = img.shape[:2]
    ys = np.clip(np.arange(h) + dy, 0, h - 1)
    xs = np.clip(np.arange(w) + dx, 0, w - 1)
    return img[ys][:, xs]


def search_order(radius):
    """Candidate displacements in tie-breaking order.

    Candidates are sorted by L1 length, then row-major in (dy, dx).

    """
    cands = [(dy, dx) for dy in range(-radius, radius + 1)
             for dx in range(-radius, radius + 1)]
    return sorted(cands, key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))


def block_motion_search(ref, cur, block, radius):
    """Exhaustive integer-pel block matching.

    For every block of ``cur`` find the displacement (dy, dx) within
    +/- radius minimizing the sum of absolute differences between the block
    and ``ref`` read at the displaced position (clamped to the border).

    Args:
        ref (array):  Reference image [H, W] or [H, W, C].
        cur (array):  Current image, same shape.
        block (int):  Block size B.
        radius (int):  Search radius.

    Returns:
        (array):  int16 [H/B, W/B, 2] motion field.

    """
    if ref.shape != cur.shape:
        raise ShapeError("reference {} and current {} images differ in shape"
                         .format(ref.shape, cur.shape))
    nby, nbx = _check_blocks(cur.shape, block)
    ref = np.asarray(ref, dtype=np.int32)
    cur = np.asarray(cur, dtype=np.int32)
    if cur.ndim == 2:
        ref = ref[:, :, None]
        cur = cur[:, :, None]
    best = np.full((nby, nbx), np.iinfo(np.int64).max, dtype=np.int64)
    motion = np.zeros((nby, nbx, 2), dtype=np.int16)
    for dy, dx in search_order(radius):
        diff = np.abs(_shifted(ref, dy, dx) - cur)
        sad = diff.reshape(nby, block, nbx, block, -1).sum(axis=(1, 3, 4))
        better = sad < best
        best[better] = sad[better]
        motion[better] = (dy, dx)
    return motion


def motion_compensate(iframe, motion, block):
    """Predict a frame from the I-frame and a block motion field.

    prediction[y, x] = iframe[clamp(y + dy), clamp(x + dx)]

    """
    nby, nbx = _check_blocks(iframe.shape, block)
    motion = np.asarray(motion)
    if motion.shape != (nby, nbx, 2):
        raise ShapeError("motion field shape {} does not match {}x{} blocks"
                         .format(motion.shape, nby, nbx))
    h, w = iframe.shape[:2]
    field = np.repeat(np.repeat(motion.astype(np.int64), block, axis=0),
                      block, axis=1)
    ys = np.clip(np.arange(h)[:, None] + field[:, :, 0], 0, h - 1)
    xs = np.clip(np.arange(w)[None, :] + field[:, :, 1], 0, w - 1)
    return iframe[ys, xs]


def encode_clip(frames, gop_size, block, radius):
    """Encode raw frames into GoPs.

    Args:
        frames (array):  uint8 [T*(K+1), H, W, 3] in temporal order.
        gop_size (int):  K, the number of P-frames per GoP.
        block (int):  Block size.
        radius (int):  Motion search radius.

    Returns:
        (list):  The GoP instances.

    """
    frames = np.asarray(frames, dtype=np.uint8)
    per_gop = gop_size + 1
    if frames.ndim != 4 or frames.shape[0] % per_gop != 0:
        raise ShapeError("{} frames cannot be grouped into GoPs of {}"
                         .format(frames.shape[0], per_gop))
    _check_blocks(frames.shape[1:], block)
    gops = list()
    for start in range(0, frames.shape[0], per_gop):
        iframe = frames[start]
        pframes = list()
        for cur in frames[start + 1:start + per_gop]:
            motion = block_motion_search(iframe, cur, block, radius)
            pred = motion_compensate(iframe, motion, block)
            residual = cur.astype(np.int16) - pred.astype(np.int16)
            pframes.append(PFrame(motion, residual))
        gops.append(GoP(iframe, pframes))
    return gops


def reconstruct_pframe(gop, k):
    """Decode P-frame k (1-based) of a GoP.
    """
    if k < 1 or k > gop.K:
        raise DataError("P-frame index {} outside 1..{}".format(k, gop.K))
    pf = gop.pframes[k - 1]
    pred = motion_compensate(gop.iframe, pf.motion, pf.block)
    out = pred.astype(np.int16) + pf.residual
    return np.clip(out, 0, 255).astype(np.uint8)


def decode_frames(gops):
    """Decode all frames, I-frames included, in temporal order.

    Returns:
        (array):  uint8 [T*(K+1), H, W, 3].

    """
    out = list()
    for gop in gops:
        out.append(gop.iframe)
        for k in range(1, gop.K + 1):
            out.append(reconstruct_pframe(gop, k))
    return np.stack(out)
