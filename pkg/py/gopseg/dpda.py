# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.dpda
=======================

Dual-path dual-attention fusion.

The motion path and the residual path of every P-frame each fuse the
features of the GoP's I-frame through a dense convolution block followed by
a channel gate and a spatial gate.  The two paths are summed, every frame is
projected to the I-frame width, and a temporal 3D stage pools the stride-16
frames into clip features.

"""
from __future__ import absolute_import, division, print_function

import numpy as np

from .utils import ShapeError

from .numerics import (Module, Conv2d, Conv3dTemporal, Linear, Tensor,
                       relu, softmax, concat, reshape, transpose, mean, add,
                       broadcast_mul, expand, getitem, avg_pool2d, mul)

DENSE_GROWTH = 8
DENSE_LAYERS = 4
TEMPORAL_LAYERS = 4


class DpdaOutput(object):
    """Fused features of all frames of a clip.

    Attributes:
        per_frame (Tensor):  [F, 2 C_V, H/16, W/16] frame features
            concatenated with the clip features.
        mid (Tensor):  [F, C_m, H/8, W/8].
        large (Tensor):  [F, C_l, H/4, W/4].
        clip (Tensor):  [C_V, H/16, W/16].
        frames (Tensor):  [F, C_V, H/16, W/16] before concatenation.

    """

    def __init__(self, per_frame, mid, large, clip, frames):
        self.per_frame = per_frame
        self.mid = mid
        self.large = large
        self.clip = clip
        self.frames = frames


def _batched(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    return x, False


def _unbatched(x, single):
    return reshape(x, x.shape[1:]) if single else x


class DenseBlock(Module):
    """Four densely wired 3x3 conv + relu layers and a 1x1 projection.

    Layer i sees the concatenation of the block input and the outputs of all
    previous layers.

    """

    def __init__(self, cin, cout, rng, growth=DENSE_GROWTH,
                 n_layers=DENSE_LAYERS):
        self.cin = cin
        self.growth = growth
        self.layers = [Conv2d(cin + i * growth, growth, 3, rng)
                       for i in range(n_layers)]
        self.project = Conv2d(cin + n_layers * growth, cout, 1, rng)

    def layer_inputs(self):
        return [lay.weight.shape[1] for lay in self.layers]

    def forward(self, x):
        x, single = _batched(x)
        if x.shape[1] != self.cin:
            raise ShapeError("dense block expects {} channels, got {}"
                             .format(self.cin, x.shape[1]))
        feats = [x]
        for lay in self.layers:
            inp = feats[0] if len(feats) == 1 else concat(feats, axis=1)
            feats.append(relu(lay(inp)))
        return _unbatched(self.project(concat(feats, axis=1)), single)


class DualAttentionPath(Module):
    """One path (motion or residual) of the dual attention at one scale.

    Args:
        c_i (int):  I-frame feature width at this scale.
        c_p (int):  P-path feature width C.
        c_raw (int):  Channels of the pooled raw field (2 motion, 3 residual).
        rng (Generator):  Initialization source.

    """

    def __init__(self, c_i, c_p, c_raw, rng, growth=DENSE_GROWTH):
        self.c_p = c_p
        self.c_raw = c_raw
        self.project_i = Conv2d(c_i, c_p, 1, rng)
        self.dense = DenseBlock(2 * c_p + c_raw, c_p, rng, growth=growth)
        self.channel = Linear(c_p, c_p, rng)
        self.spatial = Conv2d(c_p, 1, 1, rng)

    def fuse_modality_pair(self, x_i, x_p, raw_aux):
        """Dense block over [x_i; x_p; raw_aux] (x_i already projected).
        """
        x_i, single = _batched(x_i)
        x_p, _ = _batched(x_p)
        raw_aux, _ = _batched(raw_aux)
        if not (x_i.shape[2:] == x_p.shape[2:] == raw_aux.shape[2:]):
            raise ShapeError("spatial mismatch: {} {} {}".format(
                x_i.shape, x_p.shape, raw_aux.shape))
        y = self.dense(concat([x_i, x_p, raw_aux], axis=1))
        return _unbatched(y, single)

    def channel_attention(self, y):
        """Softmax over channels of a linear map of the pooled features.

        Returns [C] (or [F, C]).
        """
        y, single = _batched(y)
        att = softmax(self.channel(mean(y, axis=(2, 3))), axis=-1)
        return _unbatched(att, single)

    def spatial_attention(self, y):
        """Softmax over all positions of a 1x1 conv.  Returns [h, w] (or
        [F, h, w]).
        """
        y, single = _batched(y)
        n, _, h, w = y.shape
        logits = reshape(self.spatial(y), (n, h * w))
        att = reshape(softmax(logits, axis=-1), (n, h, w))
        return _unbatched(att, single)

    def forward(self, x_i, x_p, raw_aux, return_gates=False):
        """F = (h w Att_spa) * ((C Att_cha) * proj(x_i)) + x_p.
        """
        x_i, single = _batched(x_i)
        x_p, _ = _batched(x_p)
        raw_aux, _ = _batched(raw_aux)
        n, c, h, w = x_p.shape
        x_i_proj = self.project_i(x_i)
        y = self.fuse_modality_pair(x_i_proj, x_p, raw_aux)
        att_cha = self.channel_attention(y)
        att_spa = self.spatial_attention(y)
        gate_c = reshape(mul(att_cha, float(c)), (n, c, 1, 1))
        gate_s = reshape(mul(att_spa, float(h * w)), (n, 1, h, w))
        gated = broadcast_mul(gate_s, broadcast_mul(gate_c, x_i_proj))
        out = _unbatched(add(gated, x_p), single)
        if return_gates:
            return out, _unbatched(att_cha, single), _unbatched(att_spa, single)
        return out


def fuse_paths(f_m, f_r):
    """Sum of the motion and residual path features.
    """
    if f_m.shape != f_r.shape:
        raise ShapeError("path shapes differ: {} vs {}"
                         .format(f_m.shape, f_r.shape))
    return add(f_m, f_r)


class ScaleFusion(Module):
    """Dual-path dual-attention at one pyramid level, with the projection of
    all frames to the I-frame width.
    """

    def __init__(self, c_i, c_p, rng, growth=DENSE_GROWTH):
        self.c_i = c_i
        self.c_p = c_p
        self.motion = DualAttentionPath(c_i, c_p, 2, rng, growth=growth)
        self.residual = DualAttentionPath(c_i, c_p, 3, rng, growth=growth)
        self.out_i = Conv2d(c_i, c_i, 1, rng)
        self.out_p = Conv2d(c_p, c_i, 1, rng)

    def forward(self, x_i, x_m, x_r, raw_m, raw_r):
        """Fuse P-frames.  x_i holds the I-frame features repeated per
        P-frame.
        """
        f_m = self.motion(x_i, x_m, raw_m)
        f_r = self.residual(x_i, x_r, raw_r)
        return self.out_p(fuse_paths(f_m, f_r))


class TemporalStage(Module):
    """Four temporal-stride-2 conv3d layers, then a mean over what is left of
    the time axis.
    """

    def __init__(self, c_v, rng, n_layers=TEMPORAL_LAYERS):
        self.layers = [Conv3dTemporal(c_v, c_v, rng, stride_t=2)
                       for _ in range(n_layers)]

    def extents(self, n_frames):
        out = [n_frames]
        for _ in self.layers:
            out.append((out[-1] - 1) // 2 + 1)
        return out

    def forward(self, frames):
        """[F, C_V, h, w] -> [C_V, h, w].
        """
        if frames.shape[0] < 1:
            raise ShapeError("temporal stage needs at least one frame")
        x = transpose(frames, (1, 0, 2, 3))
        for i, lay in enumerate(self.layers):
            x = lay(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return mean(x, axis=1)


def frame_order(n_gops, gop_size):
    """Gather indices placing [I-frames; P-frames] into temporal order.
    """
    order = list()
    for g in range(n_gops):
        order.append(g)
        for k in range(gop_size):
            order.append(n_gops + g * gop_size + k)
    return np.array(order, dtype=np.int64)


class DualPathDualAttention(Module):
    """All three scales plus the temporal stage.

    Args:
        i_widths (tuple):  I-frame encoder widths (C_l, C_m, C_s).
        p_widths (tuple):  P-frame encoder widths.
        rng (Generator):  Initialization source.

    """

    def __init__(self, i_widths, p_widths, rng, growth=DENSE_GROWTH):
        self.i_widths = tuple(i_widths)
        self.p_widths = tuple(p_widths)
        self.scale_l = ScaleFusion(i_widths[0], p_widths[0], rng, growth)
        self.scale_m = ScaleFusion(i_widths[1], p_widths[1], rng, growth)
        self.scale_s = ScaleFusion(i_widths[2], p_widths[2], rng, growth)
        self.temporal = TemporalStage(i_widths[2], rng)

    @property
    def c_v(self):
        return self.i_widths[2]

    def _fuse_scale(self, fusion, i_feat, m_feat, r_feat, raw_m, raw_r,
                    gop_index, order):
        factor = raw_m.shape[-1] // m_feat.shape[-1]
        pm = avg_pool2d(raw_m, factor)
        pr = avg_pool2d(raw_r, factor)
        x_i = getitem(i_feat, gop_index)
        fused_p = fusion(x_i, m_feat, r_feat, pm, pr)
        fused_i = fusion.out_i(i_feat)
        return getitem(concat([fused_i, fused_p], axis=0), order)

    def forward(self, ipyr, mpyr, rpyr, raw_motion, raw_residual, n_gops,
                gop_size):
        """Fuse a whole clip.

        Args:
            ipyr (FeaturePyramid):  I-frame features, leading axis T.
            mpyr (FeaturePyramid):  Motion features, leading axis T*K in
                temporal order (GoP-major).
            rpyr (FeaturePyramid):  Residual features, same layout.
            raw_motion (array):  [T*K, 2, H, W] normalized motion fields.
            raw_residual (array):  [T*K, 3, H, W] normalized residuals.
            n_gops (int):  T.
            gop_size (int):  K.

        Returns:
            (DpdaOutput):  Features of all T*(K+1) frames.

        """
        n_p = n_gops * gop_size
        if ipyr.s.shape[0] != n_gops:
            raise ShapeError("{} I-frame feature maps for {} GoPs"
                             .format(ipyr.s.shape[0], n_gops))
        for pyr in (mpyr, rpyr):
            if pyr.s.shape[0] != n_p:
                raise ShapeError("{} P-frame feature maps do not match {} "
                                 "GoPs of size {}".format(pyr.s.shape[0],
                                                          n_gops, gop_size))
        if raw_motion.shape[0] != n_p or raw_residual.shape[0] != n_p:
            raise ShapeError("raw motion/residual count does not match {} "
                             "P-frames".format(n_p))
        gop_index = np.repeat(np.arange(n_gops), gop_size)
        order = frame_order(n_gops, gop_size)
        frames = list()
        for fusion, lev in ((self.scale_s, 0), (self.scale_m, 1),
                            (self.scale_l, 2)):
            frames.append(self._fuse_scale(
                fusion, ipyr.levels()[lev], mpyr.levels()[lev],
                rpyr.levels()[lev], raw_motion, raw_residual, gop_index,
                order))
        small, mid, large = frames
        clip = self.temporal(small)
        n, c, h, w = small.shape
        broadcast = expand(reshape(clip, (1, c, h, w)), (n, c, h, w))
        per_frame = concat([small, broadcast], axis=1)
        return DpdaOutput(per_frame, mid, large, clip, small)
