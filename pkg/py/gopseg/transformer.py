# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.transformer
=======================

The cross-modal transformer: an encoder over the joint sequence of visual
and text tokens, and a decoder driving a small set of learned object queries
against the encoded sequence.

"""
from __future__ import absolute_import, division, print_function

import numpy as np

from .utils import ShapeError

from .numerics import (Module, Parameter, Conv2d, Linear, LayerNorm,
                       MultiHeadAttention, Tensor, relu, add, concat, reshape,
                       transpose, getitem, mean)

from .encoders import sine_encoding_1d


def sine_encoding_2d(h, w, d):
    """Fixed 2D encoding: half the channels encode the row, half the column.

    Returns:
        (array):  [h * w, d] in row-major position order.

    """
    if d % 4 != 0:
        raise ShapeError("2D sine encoding width {} is not divisible by 4"
                         .format(d))
    half = d // 2
    py = sine_encoding_1d(h, half)
    px = sine_encoding_1d(w, half)
    pe = np.concatenate([np.broadcast_to(py[:, None, :], (h, w, half)),
                         np.broadcast_to(px[None, :, :], (h, w, half))],
                        axis=-1)
    return pe.reshape(h * w, d)


def sequence_length(n_frames, height, width, query_len):
    return n_frames * (height // 16) * (width // 16) + query_len


class MultimodalSequence(object):
    """Visual tokens (frame-major, row-major per frame) followed by text.

    Attributes:
        tokens (Tensor):  [L_total, D].
        is_text (array):  bool [L_total].
        frame_index (array):  int [L_total], -1 for text tokens.
        key_padding_mask (array):  bool [L_total], True on text padding.
        n_frames (int), grid (tuple):  Visual layout.

    """

    def __init__(self, tokens, is_text, frame_index, key_padding_mask,
                 n_frames, grid):
        self.tokens = tokens
        self.is_text = is_text
        self.frame_index = frame_index
        self.key_padding_mask = key_padding_mask
        self.n_frames = n_frames
        self.grid = grid

    @property
    def n_visual(self):
        return self.n_frames * self.grid[0] * self.grid[1]


class EncoderOutput(object):
    """Encoded sequence split into language-guided visual features f_lv
    [F, D, h, w] and the pooled vision-guided text feature f_vl [D].
    """

    def __init__(self, memory, f_lv, f_vl, key_padding_mask):
        self.memory = memory
        self.f_lv = f_lv
        self.f_vl = f_vl
        self.key_padding_mask = key_padding_mask


class FeedForward(Module):
    def __init__(self, d, rng, ratio=4):
        self.fc1 = Linear(d, ratio * d, rng)
        self.fc2 = Linear(ratio * d, d, rng)

    def forward(self, x):
        return self.fc2(relu(self.fc1(x)))


class EncoderLayer(Module):
    """Pre-norm self-attention block.
    """

    def __init__(self, d, heads, rng):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, rng)

    def forward(self, x, key_padding_mask=None, return_weights=False):
        h = self.norm1(x)
        a, weights = self.attn(h, h, h, key_padding_mask=key_padding_mask,
                               return_weights=True)
        x = add(x, a)
        x = add(x, self.ffn(self.norm2(x)))
        if return_weights:
            return x, weights
        return x


class DecoderLayer(Module):
    """Pre-norm query self-attention, cross-attention, feed-forward.
    """

    def __init__(self, d, heads, rng):
        self.norm1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.norm3 = LayerNorm(d)
        self.ffn = FeedForward(d, rng)

    def forward(self, q, memory, key_padding_mask=None):
        h = self.norm1(q)
        q = add(q, self.self_attn(h, h, h))
        h = self.norm2(q)
        q = add(q, self.cross_attn(h, memory, memory,
                                   key_padding_mask=key_padding_mask))
        return add(q, self.ffn(self.norm3(q)))


class CrossModalTransformer(Module):
    """Sequence builder, encoder and decoder.

    Args:
        visual_dim (int):  Channels of the per-frame features (2 C_V).
        text_dim (int):  Text feature width C_L.
        d_model (int):  Shared width D.
        heads (int):  Attention heads.
        enc_layers, dec_layers (int):  Depths.
        n_queries (int):  Number of object queries N_q.
        max_frames (int):  Size of the temporal embedding table.
        rng (Generator):  Initialization source.

    """

    def __init__(self, visual_dim, text_dim, d_model, heads, enc_layers,
                 dec_layers, n_queries, max_frames, rng):
        if d_model % heads != 0:
            raise ShapeError("d_model {} is not divisible by {} heads"
                             .format(d_model, heads))
        self.d_model = d_model
        self.n_queries = n_queries
        self.max_frames = max_frames
        self.visual_proj = Conv2d(visual_dim, d_model, 1, rng)
        self.text_proj = Linear(text_dim, d_model, rng)
        self.temporal_embed = Parameter(
            rng.standard_normal((max_frames, d_model)) * 0.1)
        self.encoder = [EncoderLayer(d_model, heads, rng)
                        for _ in range(enc_layers)]
        self.enc_norm = LayerNorm(d_model)
        self.queries = Parameter(rng.standard_normal((n_queries, d_model)))
        self.decoder = [DecoderLayer(d_model, heads, rng)
                        for _ in range(dec_layers)]
        self.dec_norm = LayerNorm(d_model)

    def build_sequence(self, per_frame, text):
        """Flatten frames into tokens and append the projected text.
        """
        n, _, h, w = per_frame.shape
        if n > self.max_frames:
            raise ShapeError("{} frames exceed the temporal embedding table "
                             "of {}".format(n, self.max_frames))
        d = self.d_model
        vis = transpose(self.visual_proj(per_frame), (0, 2, 3, 1))
        vis = reshape(vis, (n, h * w, d))
        vis = add(vis, sine_encoding_2d(h, w, d)[None])
        temb = getitem(self.temporal_embed, np.arange(n))
        vis = add(vis, reshape(temb, (n, 1, d)))
        vis = reshape(vis, (n * h * w, d))
        nq = text.tokens.shape[0]
        txt = add(self.text_proj(text.tokens), sine_encoding_1d(nq, d))
        tokens = concat([vis, txt], axis=0)
        nvis = n * h * w
        is_text = np.concatenate([np.zeros(nvis, dtype=bool),
                                  np.ones(nq, dtype=bool)])
        frame_index = np.concatenate([np.repeat(np.arange(n), h * w),
                                      np.full(nq, -1)])
        kpm = np.concatenate([np.zeros(nvis, dtype=bool), text.pad_mask])
        return MultimodalSequence(tokens, is_text, frame_index, kpm, n, (h, w))

    def encode(self, seq, return_weights=False):
        """Run the encoder and split its output.
        """
        x = seq.tokens
        weights = list()
        for layer in self.encoder:
            x, wts = layer(x, key_padding_mask=seq.key_padding_mask,
                           return_weights=True)
            weights.append(wts)
        memory = self.enc_norm(x)
        n = seq.n_frames
        h, w = seq.grid
        d = self.d_model
        vis = getitem(memory, slice(0, seq.n_visual))
        f_lv = transpose(reshape(vis, (n, h, w, d)), (0, 3, 1, 2))
        keep = np.nonzero(seq.is_text & ~seq.key_padding_mask)[0]
        if len(keep) == 0:
            raise ShapeError("query has no tokens")
        f_vl = mean(getitem(memory, keep), axis=0)
        out = EncoderOutput(memory, f_lv, f_vl, seq.key_padding_mask)
        if return_weights:
            return out, weights
        return out

    def decode(self, enc, queries=None):
        """Queries [N_q, D] against the full encoded sequence.
        """
        q = self.queries if queries is None else queries
        for layer in self.decoder:
            q = layer(q, enc.memory, key_padding_mask=enc.key_padding_mask)
        return self.dec_norm(q)


def encoder_forward(model, seq):
    return model.encode(seq)


def decoder_forward(model, enc, queries=None):
    return model.decode(enc, queries=queries)
