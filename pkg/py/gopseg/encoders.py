# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.encoders
=======================

Small convolutional feature extractors for I-frames, motion fields and
residuals, and the token embedding used for queries.

"""
from __future__ import absolute_import, division, print_function

import numpy as np

from .utils import ShapeError, DataError

from .numerics import Module, Parameter, Conv2d, Tensor, relu, getitem, add

# Per-channel standardization of [0, 1] images.
IMAGE_MEAN = np.array([0.35, 0.35, 0.35])
IMAGE_STD = np.array([0.28, 0.28, 0.28])

I_WIDTHS = (32, 64, 128)
P_WIDTHS = (16, 32, 64)


class FeaturePyramid(object):
    """Features at strides 16 (s), 8 (m) and 4 (l).

    Each level is [C, h, w] or, for a batch of frames, [F, C, h, w].
    """

    def __init__(self, s, m, l):
        self.s = s
        self.m = m
        self.l = l

    def levels(self):
        return (self.s, self.m, self.l)


class TextFeatures(object):
    def __init__(self, tokens, pad_mask):
        self.tokens = tokens
        self.pad_mask = np.asarray(pad_mask, dtype=bool)


def normalize_iframe(img):
    """uint8 [..., H, W, 3] -> standardized float [..., 3, H, W].
    """
    x = (np.asarray(img, dtype=np.float64) / 255.0 - IMAGE_MEAN) / IMAGE_STD
    return np.moveaxis(x, -1, -3)


def normalize_motion(field, radius):
    """Per-pixel motion [..., H, W, 2] -> [..., 2, H, W] in [-1, 1].
    """
    x = np.asarray(field, dtype=np.float64) / float(radius)
    return np.moveaxis(x, -1, -3)


def normalize_residual(residual):
    """Residual [..., H, W, 3] -> [..., 3, H, W] in [-1, 1].
    """
    x = np.asarray(residual, dtype=np.float64) / 255.0
    return np.moveaxis(x, -1, -3)


def sine_encoding_1d(n, d):
    """Fixed sinusoidal encoding of positions 0..n-1, [n, d].
    """
    if d % 2 != 0:
        raise ShapeError("sine encoding width {} is not even".format(d))
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 1.0 / (10000.0 ** (np.arange(d // 2, dtype=np.float64) * 2.0 / d))
    pe = np.zeros((n, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


class PyramidEncoder(Module):
    """Four conv stages with strides (4, 2, 2, 1).

    Stage 1 (5x5, stride 4) gives the /4 level, stages 2 and 3 (3x3, stride
    2) the /8 and /16 levels, and stage 4 refines the /16 level.

    Args:
        in_channels (int):  Input planes.
        widths (tuple):  Channels (C_l, C_m, C_s).
        rng (Generator):  Initialization source.

    """

    def __init__(self, in_channels, widths, rng):
        c_l, c_m, c_s = widths
        self.in_channels = in_channels
        self.widths = tuple(widths)
        self.stage1 = Conv2d(in_channels, c_l, 5, rng, stride=4, pad=2)
        self.stage2 = Conv2d(c_l, c_m, 3, rng, stride=2)
        self.stage3 = Conv2d(c_m, c_s, 3, rng, stride=2)
        self.stage4 = Conv2d(c_s, c_s, 3, rng)

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        h, w = x.shape[-2:]
        if h % 16 != 0 or w % 16 != 0:
            raise ShapeError("encoder input {}x{} is not divisible by 16"
                             .format(h, w))
        if x.shape[-3] != self.in_channels:
            raise ShapeError("encoder expects {} input channels, got {}"
                             .format(self.in_channels, x.shape[-3]))
        l = relu(self.stage1(x))
        m = relu(self.stage2(l))
        s = relu(self.stage3(m))
        s = relu(self.stage4(s))
        return FeaturePyramid(s, m, l)


class IFrameEncoder(PyramidEncoder):
    def __init__(self, rng, widths=I_WIDTHS):
        super().__init__(3, widths, rng)


class MotionEncoder(PyramidEncoder):
    def __init__(self, rng, widths=P_WIDTHS):
        super().__init__(2, widths, rng)


class ResidualEncoder(PyramidEncoder):
    def __init__(self, rng, widths=P_WIDTHS):
        super().__init__(3, widths, rng)


class TextEncoder(Module):
    """Learned token embedding plus a fixed 1D sinusoidal encoding.
    """

    def __init__(self, vocab_size, dim, query_len, rng, pad_id=0):
        self.vocab_size = vocab_size
        self.query_len = query_len
        self.pad_id = pad_id
        self.embedding = Parameter(rng.standard_normal((vocab_size, dim)) * 0.5)
        self._pos = sine_encoding_1d(query_len, dim)

    def forward(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or len(ids) > self.query_len:
            raise ShapeError("query has {} tokens, at most {} allowed"
                             .format(ids.size, self.query_len))
        if np.any(ids < 0) or np.any(ids >= self.vocab_size):
            raise DataError("token id outside vocabulary of {}"
                            .format(self.vocab_size))
        if len(ids) < self.query_len:
            fill = np.full(self.query_len - len(ids), self.pad_id)
            ids = np.concatenate([ids, fill])
        tokens = add(getitem(self.embedding, ids), self._pos)
        return TextFeatures(tokens, ids == self.pad_id)


def encode_iframe(encoder, iframe):
    """Pyramid of one uint8 I-frame [H, W, 3] (or a stack [F, H, W, 3]).
    """
    return encoder(normalize_iframe(iframe))


def encode_motion(encoder, field, radius):
    return encoder(normalize_motion(field, radius))


def encode_residual(encoder, residual):
    return encoder(normalize_residual(residual))


def embed_text(encoder, ids):
    return encoder(ids)
