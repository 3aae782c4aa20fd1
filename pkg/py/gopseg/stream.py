# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.stream
=======================

Clip samples and their binary containers.

A stream file ("CGOP") holds one compressed clip with its query and the
ground truth masks.  A mask file ("CMSK") holds one binary mask per frame
using the same bit-packed layout, and is used for predicted masks.

All integers are little-endian.

"""
from __future__ import absolute_import, division, print_function

import os
import struct

import numpy as np

from .utils import (BadMagicError, VersionMismatchError,
                    TruncatedPayloadError, StreamValidationError, DataError)

from .codec import GoP, PFrame

STREAM_MAGIC = b"CGOP"
STREAM_VERSION = 1

MASK_MAGIC = b"CMSK"
MASK_VERSION = 1

PAD_ID = 0


class ClipSample(object):
    """A compressed clip with its referring query and per-frame masks.

    Args:
        gops (list):  T GoP instances with identical K.
        query (array):  Token ids padded to N with PAD_ID.
        gt_masks (array):  bool [T*(K+1), H, W], one mask per frame in
            temporal order (each GoP's I-frame first).
        block (int):  Motion block size.
        vocab_size (int):  Size of the vocabulary the ids index.
        meta (dict):  Generation metadata (seed, sprites).  Not serialized.

    """

    def __init__(self, gops, query, gt_masks, block, vocab_size, meta=None):
        self.gops = list(gops)
        self.query = np.asarray(query, dtype=np.uint16)
        self.gt_masks = np.asarray(gt_masks, dtype=bool)
        self.block = int(block)
        self.vocab_size = int(vocab_size)
        self.meta = meta

    @property
    def T(self):
        return len(self.gops)

    @property
    def K(self):
        return self.gops[0].K

    @property
    def H(self):
        return self.gops[0].iframe.shape[0]

    @property
    def W(self):
        return self.gops[0].iframe.shape[1]

    @property
    def N(self):
        return len(self.query)

    @property
    def n_frames(self):
        return self.T * (self.K + 1)

    def query_length(self):
        return int(np.count_nonzero(self.query != PAD_ID))

    def iframe_indices(self):
        """Frame axis positions of the I-frames.
        """
        return [g * (self.K + 1) for g in range(self.T)]

    def validate(self):
        """Check internal consistency; raises StreamValidationError.
        """
        if len(self.gops) == 0:
            raise StreamValidationError("clip has no GoPs")
        ks = set(g.K for g in self.gops)
        if len(ks) != 1:
            raise StreamValidationError("inconsistent GoP sizes {}"
                                        .format(sorted(ks)))
        if self.N == 0 or self.query_length() == 0:
            raise StreamValidationError("empty query")
        if np.any(self.query >= self.vocab_size):
            raise StreamValidationError("query id out of vocabulary of {}"
                                        .format(self.vocab_size))
        shape = (self.H, self.W)
        for g in self.gops:
            if g.iframe.shape != shape + (3,):
                raise StreamValidationError("I-frame shape {} differs from {}"
                                            .format(g.iframe.shape, shape))
            for pf in g.pframes:
                if pf.residual.shape != shape + (3,):
                    raise StreamValidationError(
                        "residual shape {} differs from {}"
                        .format(pf.residual.shape, shape))
                if pf.motion.shape != (self.H // self.block,
                                       self.W // self.block, 2):
                    raise StreamValidationError(
                        "motion shape {} does not match block {}"
                        .format(pf.motion.shape, self.block))
        if self.gt_masks.shape != (self.n_frames,) + shape:
            raise StreamValidationError("mask shape {} does not match {} "
                                        "frames".format(self.gt_masks.shape,
                                                        self.n_frames))
        if not np.any(self.gt_masks):
            raise StreamValidationError("target mask is empty in every frame")
        return

    def equals(self, other):
        """Exact equality of all serialized content.
        """
        if (self.T, self.K, self.H, self.W, self.block, self.vocab_size) != \
                (other.T, other.K, other.H, other.W, other.block,
                 other.vocab_size):
            return False
        if not np.array_equal(self.query, other.query):
            return False
        if not np.array_equal(self.gt_masks, other.gt_masks):
            return False
        for a, b in zip(self.gops, other.gops):
            if not np.array_equal(a.iframe, b.iframe):
                return False
            for pa, pb in zip(a.pframes, b.pframes):
                if not (np.array_equal(pa.motion, pb.motion)
                        and np.array_equal(pa.residual, pb.residual)):
                    return False
        return True


def pack_masks(masks):
    """Bit-pack boolean masks [F, H, W] row-major, one byte run per frame.
    """
    masks = np.asarray(masks, dtype=bool)
    return b"".join(np.packbits(m.reshape(-1), bitorder="little").tobytes()
                    for m in masks)


def unpack_masks(raw, n_frames, h, w):
    nbytes = (h * w + 7) // 8
    out = np.zeros((n_frames, h, w), dtype=bool)
    for f in range(n_frames):
        chunk = np.frombuffer(raw[f * nbytes:(f + 1) * nbytes], dtype=np.uint8)
        bits = np.unpackbits(chunk, bitorder="little")[:h * w]
        out[f] = bits.reshape(h, w).astype(bool)
    return out


def stream_bytes(sample):
    """Serialize a sample to the CGOP layout.
    """
    sample.validate()
    buf = bytearray()
    buf += STREAM_MAGIC
    buf += struct.pack("<8H", STREAM_VERSION, sample.T, sample.K, sample.H,
                       sample.W, sample.block, sample.N, sample.vocab_size)
    buf += sample.query.astype("<u2").tobytes()
    for gop in sample.gops:
        buf += np.ascontiguousarray(gop.iframe, dtype=np.uint8).tobytes()
        for pf in gop.pframes:
            buf += pf.motion.astype("<i2").tobytes()
            buf += pf.residual.astype("<i2").tobytes()
    buf += pack_masks(sample.gt_masks)
    return bytes(buf)


def write_stream(sample, path):
    """Write a sample to a CGOP file.
    """
    data = stream_bytes(sample)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise DataError("cannot write stream {}: {}".format(path, e))
    return


class _Reader(object):
    def __init__(self, raw, path):
        self.raw = raw
        self.path = path
        self.off = 0

    def take(self, nbytes):
        if self.off + nbytes > len(self.raw):
            raise TruncatedPayloadError(
                "truncated payload in {}: need {} bytes at offset {}, "
                "file has {}".format(self.path, nbytes, self.off,
                                     len(self.raw)))
        chunk = self.raw[self.off:self.off + nbytes]
        self.off += nbytes
        return chunk

    def array(self, dtype, shape):
        dt = np.dtype(dtype)
        n = int(np.prod(shape))
        return np.frombuffer(self.take(n * dt.itemsize), dtype=dt).reshape(shape)

    def check_magic(self, magic, version):
        if self.raw[:4] != magic:
            raise BadMagicError("{} does not start with {!r}"
                                .format(self.path, magic))
        self.off = 4
        (found,) = struct.unpack("<H", self.take(2))
        if found != version:
            raise VersionMismatchError("{} has version {}, expected {}"
                                       .format(self.path, found, version))

    def finish(self):
        if self.off != len(self.raw):
            raise StreamValidationError("{} has {} trailing bytes"
                                        .format(self.path,
                                                len(self.raw) - self.off))


def parse_stream(raw, path="<bytes>"):
    """Parse CGOP bytes into a ClipSample.
    """
    rd = _Reader(raw, path)
    rd.check_magic(STREAM_MAGIC, STREAM_VERSION)
    t, k, h, w, block, n, vocab = struct.unpack("<7H", rd.take(14))
    if block == 0 or h % block != 0 or w % block != 0 or t == 0:
        raise StreamValidationError("{} has inconsistent header".format(path))
    query = rd.array("<u2", (n,)).astype(np.uint16)
    gops = list()
    for _ in range(t):
        iframe = rd.array(np.uint8, (h, w, 3)).copy()
        pframes = list()
        for _ in range(k):
            motion = rd.array("<i2", (h // block, w // block, 2))
            residual = rd.array("<i2", (h, w, 3))
            pframes.append(PFrame(motion.astype(np.int16),
                                  residual.astype(np.int16)))
        gops.append(GoP(iframe, pframes))
    n_frames = t * (k + 1)
    nbytes = (h * w + 7) // 8
    masks = unpack_masks(rd.take(n_frames * nbytes), n_frames, h, w)
    rd.finish()
    sample = ClipSample(gops, query, masks, block, vocab)
    sample.validate()
    return sample


def read_stream(path):
    """Read a CGOP file.
    """
    if not os.path.isfile(path):
        raise DataError("stream file {} does not exist".format(path))
    with open(path, "rb") as f:
        raw = f.read()
    return parse_stream(raw, path=path)


def write_masks(path, masks):
    """Write binary masks [F, H, W] to a CMSK file.
    """
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 3:
        raise StreamValidationError("masks must be [F, H, W], got {}"
                                    .format(masks.shape))
    f, h, w = masks.shape
    buf = MASK_MAGIC + struct.pack("<4H", MASK_VERSION, f, h, w) + \
        pack_masks(masks)
    try:
        with open(path, "wb") as fh:
            fh.write(buf)
    except OSError as e:
        raise DataError("cannot write masks {}: {}".format(path, e))
    return


def read_masks(path):
    """Read a CMSK file.

    Returns:
        (array):  bool [F, H, W].

    """
    if not os.path.isfile(path):
        raise DataError("mask file {} does not exist".format(path))
    with open(path, "rb") as fh:
        raw = fh.read()
    rd = _Reader(raw, path)
    rd.check_magic(MASK_MAGIC, MASK_VERSION)
    f, h, w = struct.unpack("<3H", rd.take(6))
    nbytes = (h * w + 7) // 8
    masks = unpack_masks(rd.take(f * nbytes), f, h, w)
    rd.finish()
    return masks
