# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.model
=======================

The full referring segmentation pipeline and its inputs.

"""
from __future__ import absolute_import, division, print_function

from collections import OrderedDict

import numpy as np

from .utils import Logger

from .numerics import (Module, avg_pool2d, check_finite, no_grad,
                       read_checkpoint, write_checkpoint, load_parameters)

from .encoders import (IFrameEncoder, MotionEncoder, ResidualEncoder,
                       TextEncoder, normalize_iframe, normalize_motion,
                       normalize_residual, I_WIDTHS, P_WIDTHS)

from .dpda import DualPathDualAttention, DENSE_GROWTH

from .transformer import CrossModalTransformer

from .mask_head import (KernelGenerator, MatchingHead, MaskRefiner,
                        coarse_masks, assign_best_query, loss_lr, loss_hr,
                        total_loss, select_coarse, inference_select,
                        REFINE_WIDTHS)


class ModelConfig(object):
    """Architecture hyperparameters.
    """

    def __init__(self, height=64, width=64, n_gops=2, gop_size=3, radius=6,
                 vocab_size=24, query_len=20, text_dim=64, d_model=64,
                 heads=4, enc_layers=2, dec_layers=2, n_queries=5,
                 i_widths=I_WIDTHS, p_widths=P_WIDTHS, growth=DENSE_GROWTH,
                 refine_widths=REFINE_WIDTHS, seed=0):
        self.height = height
        self.width = width
        self.n_gops = n_gops
        self.gop_size = gop_size
        self.radius = radius
        self.vocab_size = vocab_size
        self.query_len = query_len
        self.text_dim = text_dim
        self.d_model = d_model
        self.heads = heads
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.n_queries = n_queries
        self.i_widths = tuple(i_widths)
        self.p_widths = tuple(p_widths)
        self.growth = growth
        self.refine_widths = tuple(refine_widths)
        self.seed = seed

    @property
    def n_frames(self):
        return self.n_gops * (self.gop_size + 1)


class ClipInputs(object):
    """Network-ready arrays of one ClipSample.

    Attributes:
        iframes (array):  [T, 3, H, W] standardized I-frames.
        motion (array):  [T*K, 2, H, W] per-pixel motion in [-1, 1].
        residual (array):  [T*K, 3, H, W] residuals in [-1, 1].
        query (array):  Token ids [N].
        gt (array):  bool [F, H, W] masks (all frames, temporal order).
        gt_lr (array):  [F, H/16, W/16] area-pooled soft targets.
        gt_hr (array):  [F, H/4, W/4] area-pooled soft targets.

    """

    def __init__(self, iframes, motion, residual, query, gt, n_gops,
                 gop_size):
        self.iframes = iframes
        self.motion = motion
        self.residual = residual
        self.query = query
        self.gt = gt
        self.n_gops = n_gops
        self.gop_size = gop_size
        with no_grad():
            g = gt.astype(np.float64)
            self.gt_lr = avg_pool2d(g, 16).data
            self.gt_hr = avg_pool2d(g, 4).data

    @property
    def n_frames(self):
        return self.gt.shape[0]

    @property
    def hw(self):
        return self.gt.shape[1:]


def prepare_inputs(sample, radius):
    """Convert a ClipSample into network inputs.
    """
    iframes = np.stack([g.iframe for g in sample.gops])
    fields = list()
    residuals = list()
    for g in sample.gops:
        for pf in g.pframes:
            fields.append(pf.motion_field())
            residuals.append(pf.residual)
    return ClipInputs(normalize_iframe(iframes),
                      normalize_motion(np.stack(fields), radius),
                      normalize_residual(np.stack(residuals)),
                      np.asarray(sample.query, dtype=np.int64),
                      np.asarray(sample.gt_masks, dtype=bool),
                      sample.T, sample.K)


class ForwardOutput(object):
    def __init__(self, coarse, scores, log_scores, f_lv, f_m, f_l, trace):
        self.coarse = coarse
        self.scores = scores
        self.log_scores = log_scores
        self.f_lv = f_lv
        self.f_m = f_m
        self.f_l = f_l
        self.trace = trace


class LossOutput(object):
    def __init__(self, total, l_lr, l_hr, delta, forward):
        self.total = total
        self.l_lr = l_lr
        self.l_hr = l_hr
        self.delta = delta
        self.forward = forward


class ReferringSegmenter(Module):
    """Encoders, dual-path fusion, transformer and mask head.

    Parameters are created from ``np.random.default_rng(cfg.seed)`` in a fixed
    order, so two models built from the same config are identical.

    """

    def __init__(self, cfg):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.iframe_encoder = IFrameEncoder(rng, widths=cfg.i_widths)
        self.motion_encoder = MotionEncoder(rng, widths=cfg.p_widths)
        self.residual_encoder = ResidualEncoder(rng, widths=cfg.p_widths)
        self.text_encoder = TextEncoder(cfg.vocab_size, cfg.text_dim,
                                        cfg.query_len, rng)
        self.dpda = DualPathDualAttention(cfg.i_widths, cfg.p_widths, rng,
                                          growth=cfg.growth)
        self.transformer = CrossModalTransformer(
            2 * cfg.i_widths[2], cfg.text_dim, cfg.d_model, cfg.heads,
            cfg.enc_layers, cfg.dec_layers, cfg.n_queries, cfg.n_frames, rng)
        self.kernels = KernelGenerator(cfg.d_model, rng)
        self.matching = MatchingHead(cfg.d_model, rng)
        self.refiner = MaskRefiner(cfg.d_model, cfg.i_widths[1],
                                   cfg.i_widths[0], rng,
                                   widths=cfg.refine_widths)
        self.name_parameters()

    def forward(self, inputs):
        """Coarse masks, matching scores and the features for refinement.
        """
        trace = OrderedDict()
        ipyr = self.iframe_encoder(inputs.iframes)
        mpyr = self.motion_encoder(inputs.motion)
        rpyr = self.residual_encoder(inputs.residual)
        trace["iframe_encoder"] = ipyr.s
        trace["motion_encoder"] = mpyr.s
        trace["residual_encoder"] = rpyr.s
        fused = self.dpda(ipyr, mpyr, rpyr, inputs.motion, inputs.residual,
                          inputs.n_gops, inputs.gop_size)
        trace["dpda"] = fused.per_frame
        text = self.text_encoder(inputs.query)
        seq = self.transformer.build_sequence(fused.per_frame, text)
        enc = self.transformer.encode(seq)
        trace["encoder"] = enc.memory
        f_q = self.transformer.decode(enc)
        trace["decoder"] = f_q
        coarse = coarse_masks(self.kernels(f_q), enc.f_lv)
        trace["coarse"] = coarse
        scores, log_scores = self.matching(f_q, enc.f_vl)
        trace["scores"] = scores
        return ForwardOutput(coarse, scores, log_scores, enc.f_lv, fused.mid,
                             fused.large, trace)

    def loss(self, inputs, beta=0.1, delta=None):
        """Total training loss of one clip.

        Args:
            inputs (ClipInputs):  The clip.
            beta (float):  Weight of the low-resolution mask term.
            delta (array):  Optional fixed query assignment [N_q, F]; by
                default it is recomputed from the coarse masks.

        """
        out = self.forward(inputs)
        if delta is None:
            delta = assign_best_query(out.coarse, inputs.gt_lr)
        l_lr = loss_lr(out.coarse, delta, out.log_scores, inputs.gt_lr,
                       beta=beta)
        qsel = np.argmax(delta, axis=0)
        refined = self.refiner(select_coarse(out.coarse, qsel), out.f_lv,
                               out.f_m, out.f_l)
        out.trace["refined"] = refined
        l_hr = loss_hr(refined, inputs.gt_hr)
        return LossOutput(total_loss(l_hr, l_lr), l_lr, l_hr, delta, out)

    def predict(self, inputs):
        """Inference: one refinement of the best-scoring query.

        Returns:
            (MaskSet):  Full-resolution masks and the selected query.

        """
        with no_grad():
            out = self.forward(inputs)
            return inference_select(self.refiner, out.coarse, out.scores,
                                    out.f_lv, out.f_m, out.f_l, inputs.hw)

    def check_finite(self, out):
        """Raise NonFiniteError naming the first stage with bad values.
        """
        items = list(out.forward.trace.items())
        items += [("l_lr", out.l_lr), ("l_hr", out.l_hr),
                  ("total", out.total)]
        check_finite(items)

    def save(self, path):
        write_checkpoint(path, self.named_parameters())

    def load(self, path):
        load_parameters(self.named_parameters(), read_checkpoint(path))
        log = Logger.get()
        log.debug("Loaded checkpoint {}".format(path))
