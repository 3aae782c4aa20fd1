# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.mask_head
=======================

Dynamic-kernel mask generation and the training objective.

Every object query is mapped to a 1x1 convolution kernel applied to the
language-guided visual features, giving one coarse (stride 16) mask per
query and frame.  A matching score ranks the queries.  During training each
frame supervises the query whose coarse mask best overlaps the ground truth;
at inference only the best-scoring query is refined to stride 4 and
upsampled to full resolution.

"""
from __future__ import absolute_import, division, print_function

import numpy as np

from scipy.special import expit

from .utils import ShapeError

from .numerics import (Module, Linear, Conv2d, Tensor, relu, sigmoid, concat,
                       reshape, transpose, getitem, matmul, add, mul, mean,
                       tsum, expand, bce_with_logits, softmax, log_softmax,
                       bilinear_resize, reciprocal, no_grad)

DICE_EPS = 1.0
REFINE_WIDTHS = (64, 32, 16)


class KernelSet(object):
    def __init__(self, weights, biases):
        self.weights = weights
        self.biases = biases


class MaskSet(object):
    """Selected masks of one clip.

    Attributes:
        coarse (Tensor):  [N_q, F, h, w] logits.
        refined (Tensor):  [F, H/4, W/4] logits of the selected query.
        full (array):  bool [F, H, W].
        query (int):  The selected query.
        scores (array):  [N_q] matching scores.

    """

    def __init__(self, coarse, refined, full, query, scores=None):
        self.coarse = coarse
        self.refined = refined
        self.full = full
        self.query = query
        self.scores = scores


class KernelGenerator(Module):
    """Two-layer MLP from query features to (D weights, 1 bias).
    """

    def __init__(self, d, rng):
        self.d = d
        self.fc1 = Linear(d, d, rng)
        self.fc2 = Linear(d, d + 1, rng)

    def forward(self, f_q):
        out = self.fc2(relu(self.fc1(f_q)))
        return KernelSet(getitem(out, (slice(None), slice(0, self.d))),
                         getitem(out, (slice(None), self.d)))


def generate_kernels(generator, f_q):
    return generator(f_q)


def coarse_masks(kernels, f_lv):
    """logit[q, t, y, x] = <weights[q], f_lv[t, :, y, x]> + bias[q].

    Args:
        kernels (KernelSet):  [N_q, D] weights and [N_q] biases.
        f_lv (Tensor):  [F, D, h, w].

    Returns:
        (Tensor):  [N_q, F, h, w].

    """
    nq, d = kernels.weights.shape
    if f_lv.ndim != 4 or f_lv.shape[1] != d:
        raise ShapeError("kernel width {} does not match features {}"
                         .format(d, f_lv.shape))
    n, _, h, w = f_lv.shape
    flat = reshape(transpose(f_lv, (0, 2, 3, 1)), (n * h * w, d))
    logits = matmul(flat, transpose(kernels.weights, (1, 0)))
    logits = add(logits, reshape(kernels.biases, (1, nq)))
    return transpose(reshape(logits, (n, h, w, nq)), (3, 0, 1, 2))


class MatchingHead(Module):
    """Linear score of [f_q; f_vl] per query, softmax over queries.
    """

    def __init__(self, d, rng):
        self.fc = Linear(2 * d, 1, rng)

    def logits(self, f_q, f_vl):
        nq, d = f_q.shape
        if f_vl.shape != (d,):
            raise ShapeError("f_vl shape {} does not match width {}"
                             .format(f_vl.shape, d))
        vl = expand(reshape(f_vl, (1, d)), (nq, d))
        return reshape(self.fc(concat([f_q, vl], axis=1)), (nq,))

    def forward(self, f_q, f_vl):
        """Returns (scores, log_scores), both [N_q].
        """
        z = self.logits(f_q, f_vl)
        return softmax(z, axis=0), log_softmax(z, axis=0)


def matching_scores(head, f_q, f_vl):
    return head(f_q, f_vl)[0]


def binary_iou_table(pred, gt):
    """IoU of every binary prediction against the per-frame ground truth.

    Args:
        pred (array):  bool [N_q, F, h, w].
        gt (array):  bool [F, h, w].

    Returns:
        (array):  [N_q, F] with empty-vs-empty defined as 1.

    """
    inter = np.logical_and(pred, gt[None]).sum(axis=(2, 3))
    union = np.logical_or(pred, gt[None]).sum(axis=(2, 3))
    out = np.ones(inter.shape, dtype=np.float64)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def assign_best_query(coarse, gt_lr):
    """Per frame, mark the query whose binarized coarse mask has the highest
    IoU with the binarized low-resolution ground truth.

    Ties go to the lowest query index.

    Returns:
        (array):  bool [N_q, F] with exactly one True per column.

    """
    logits = coarse.data if isinstance(coarse, Tensor) else np.asarray(coarse)
    pred = expit(logits) >= 0.5
    gt = np.asarray(gt_lr) >= 0.5
    table = binary_iou_table(pred, gt)
    best = np.argmax(table, axis=0)
    delta = np.zeros(table.shape, dtype=bool)
    delta[best, np.arange(table.shape[1])] = True
    return delta


def _selected(delta):
    delta = np.asarray(delta, dtype=bool)
    if not np.all(delta.sum(axis=0) == 1):
        raise ShapeError("assignment must select one query per frame")
    return np.argmax(delta, axis=0)


def loss_lr(coarse, delta, log_scores, gt_lr, beta=0.1):
    """Low-resolution loss averaged over frames.

    Per frame: beta * mean BCE of the selected query's coarse logits against
    the soft targets, minus the log matching score of that query.

    """
    qsel = _selected(delta)
    n = coarse.shape[1]
    frames = np.arange(n)
    sel = getitem(coarse, (qsel, frames))
    bce = mean(bce_with_logits(sel, gt_lr), axis=(1, 2))
    nll = getitem(log_scores, qsel)
    return mean(add(mul(bce, beta), mul(nll, -1.0)))


def dice_loss(logits, targets, eps=DICE_EPS):
    """Per-frame 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps).
    """
    p = sigmoid(logits)
    g = np.asarray(targets, dtype=logits.dtype)
    inter = tsum(mul(p, g), axis=(1, 2))
    denom = add(tsum(p, axis=(1, 2)), g.sum(axis=(1, 2)) + eps)
    frac = mul(add(mul(inter, 2.0), eps), reciprocal(denom))
    return add(mul(frac, -1.0), 1.0)


def loss_hr(refined, gt_hr):
    """High-resolution loss: per-frame mean BCE plus dice, averaged.
    """
    if refined.shape != np.shape(gt_hr):
        raise ShapeError("refined {} vs targets {}"
                         .format(refined.shape, np.shape(gt_hr)))
    bce = mean(bce_with_logits(refined, gt_hr), axis=(1, 2))
    return mean(add(bce, dice_loss(refined, gt_hr)))


def total_loss(l_hr, l_lr):
    return add(l_hr, l_lr)


class MaskRefiner(Module):
    """U-Net style decoder from stride 16 to stride 4.

    Stage 0 convolves [coarse; f_lv] at /16, stages 1 and 2 upsample by two
    and concatenate the /8 and /4 frame features.  Convolutions replicate the
    border so spatially constant inputs give constant outputs.

    """

    def __init__(self, d, c_m, c_l, rng, widths=REFINE_WIDTHS):
        r0, r1, r2 = widths
        self.c_m = c_m
        self.c_l = c_l
        self.stage0 = Conv2d(1 + d, r0, 3, rng, pad_mode="edge")
        self.stage1 = Conv2d(r0 + c_m, r1, 3, rng, pad_mode="edge")
        self.stage2 = Conv2d(r1 + c_l, r2, 3, rng, pad_mode="edge")
        self.head = Conv2d(r2, 1, 1, rng)
        self.n_calls = 0

    def forward(self, selected_coarse, f_lv, f_m, f_l):
        n, _, h, w = f_lv.shape
        if selected_coarse.shape != (n, 1, h, w):
            raise ShapeError("selected coarse masks {} do not match {}"
                             .format(selected_coarse.shape, (n, 1, h, w)))
        if f_m.shape[0] != n or f_m.shape[2:] != (2 * h, 2 * w):
            raise ShapeError("f_m {} is not at twice the coarse scale"
                             .format(f_m.shape))
        if f_l.shape[0] != n or f_l.shape[2:] != (4 * h, 4 * w):
            raise ShapeError("f_l {} is not at four times the coarse scale"
                             .format(f_l.shape))
        self.n_calls += 1
        x = relu(self.stage0(concat([selected_coarse, f_lv], axis=1)))
        x = bilinear_resize(x, 2 * h, 2 * w)
        x = relu(self.stage1(concat([x, f_m], axis=1)))
        x = bilinear_resize(x, 4 * h, 4 * w)
        x = relu(self.stage2(concat([x, f_l], axis=1)))
        out = self.head(x)
        return reshape(out, (n, 4 * h, 4 * w))


def select_coarse(coarse, query):
    """[N_q, F, h, w] -> [F, 1, h, w] of one query, or per frame when query
    is an index array.
    """
    nq, n, h, w = coarse.shape
    if np.ndim(query) == 0:
        sel = getitem(coarse, int(query))
    else:
        sel = getitem(coarse, (np.asarray(query), np.arange(n)))
    return reshape(sel, (n, 1, h, w))


def refine_masks(refiner, selected_coarse, f_lv, f_m, f_l):
    return refiner(selected_coarse, f_lv, f_m, f_l)


def inference_select(refiner, coarse, scores, f_lv, f_m, f_l, out_hw):
    """Refine only the best-scoring query and binarize at full resolution.

    Returns:
        (MaskSet):  With the selected query index.

    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    q = int(np.argmax(s))
    with no_grad():
        refined = refiner(select_coarse(coarse, q), f_lv, f_m, f_l)
        prob = bilinear_resize(sigmoid(refined), out_hw[0], out_hw[1])
    full = prob.data >= 0.5
    return MaskSet(coarse, refined, full, q, scores=s)
