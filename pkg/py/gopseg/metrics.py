# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.metrics
=======================

Region and contour metrics for referring segmentation.

A sample is one frame: a predicted and a ground truth binary mask at full
resolution.

"""
from __future__ import absolute_import, division, print_function

from collections import OrderedDict

import numpy as np

from scipy import ndimage

from .utils import ShapeError, DataError

PRECISION_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)

MAP_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))

REPORT_KEYS = tuple(["P@{:.1f}".format(k) for k in PRECISION_THRESHOLDS] +
                    ["mAP", "overall_iou", "mean_iou", "J", "F", "JF"])


class EvalRecord(object):
    """Accumulated per-sample results.
    """

    def __init__(self):
        self.per_sample_iou = list()
        self.intersections = list()
        self.unions = list()
        self.boundary_f = list()

    @property
    def total_intersection(self):
        return int(np.sum(self.intersections, dtype=np.int64))

    @property
    def total_union(self):
        return int(np.sum(self.unions, dtype=np.int64))

    def __len__(self):
        return len(self.per_sample_iou)

    def add(self, pred, gt, tol=1):
        pred, gt = _check_pair(pred, gt)
        inter = int(np.logical_and(pred, gt).sum())
        union = int(np.logical_or(pred, gt).sum())
        self.intersections.append(inter)
        self.unions.append(union)
        self.per_sample_iou.append(1.0 if union == 0 else inter / union)
        self.boundary_f.append(boundary_f(pred, gt, tol))

    def extend(self, other):
        self.per_sample_iou.extend(other.per_sample_iou)
        self.intersections.extend(other.intersections)
        self.unions.extend(other.unions)
        self.boundary_f.extend(other.boundary_f)


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError("prediction {} and ground truth {} differ in shape"
                         .format(pred.shape, gt.shape))
    return pred, gt


def iou(pred, gt):
    """|pred & gt| / |pred | gt|, and 1.0 when both are empty.
    """
    pred, gt = _check_pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum()) / float(union)


def _nonempty(ious):
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise DataError("no samples to evaluate")
    return ious


def precision_at_k(ious, k):
    """Fraction of samples with IoU strictly above k.
    """
    ious = _nonempty(ious)
    return float(np.count_nonzero(ious > k)) / ious.size


def mean_ap(ious):
    """Mean of precision_at_k over the thresholds 0.50, 0.55, ..., 0.95.
    """
    ious = _nonempty(ious)
    return float(np.mean([precision_at_k(ious, k) for k in MAP_THRESHOLDS]))


def overall_iou(record):
    if len(record) == 0:
        raise DataError("no samples to evaluate")
    if record.total_union == 0:
        return 1.0
    return record.total_intersection / record.total_union


def mean_iou(record):
    return float(np.mean(_nonempty(record.per_sample_iou)))


def boundary(mask):
    """Mask pixels removed by a one pixel (3x3) erosion.
    """
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool),
                                    border_value=0)
    return mask ^ eroded


def boundary_f(pred, gt, tol=1):
    """Contour accuracy: F-measure of boundary pixels matched within a
    Chebyshev distance tol.
    """
    if tol < 0:
        raise ValueError("boundary tolerance must be >= 0")
    pred, gt = _check_pair(pred, gt)
    bp = boundary(pred)
    bg = boundary(gt)
    np_, ng = bp.sum(), bg.sum()
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    if tol > 0:
        square = np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool)
        bg_dil = ndimage.binary_dilation(bg, structure=square)
        bp_dil = ndimage.binary_dilation(bp, structure=square)
    else:
        bg_dil = bg
        bp_dil = bp
    precision = np.logical_and(bp, bg_dil).sum() / np_
    recall = np.logical_and(bg, bp_dil).sum() / ng
    if precision + recall == 0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def j_and_f(record):
    """(J, F, (J + F) / 2) with J the mean IoU and F the mean contour score.
    """
    j = mean_iou(record)
    f = float(np.mean(_nonempty(record.boundary_f)))
    return j, f, 0.5 * (j + f)


def evaluate_masks(preds, gts, tol=1, record=None):
    """Add all frames of one clip to a record.
    """
    if record is None:
        record = EvalRecord()
    if len(preds) != len(gts):
        raise ShapeError("{} predicted frames vs {} ground truth frames"
                         .format(len(preds), len(gts)))
    for p, g in zip(preds, gts):
        record.add(p, g, tol=tol)
    return record


def metrics_report(record):
    """All report metrics as an ordered dict.
    """
    ious = record.per_sample_iou
    out = OrderedDict()
    for k in PRECISION_THRESHOLDS:
        out["P@{:.1f}".format(k)] = precision_at_k(ious, k)
    out["mAP"] = mean_ap(ious)
    out["overall_iou"] = overall_iou(record)
    out["mean_iou"] = mean_iou(record)
    j, f, jf = j_and_f(record)
    out["J"] = j
    out["F"] = f
    out["JF"] = jf
    return out


def format_report(values):
    """Line oriented key=value text.
    """
    return "".join("{}={:.6f}\n".format(k, v) for k, v in values.items())


def parse_report(text):
    out = OrderedDict()
    for line in text.splitlines():
        line = line.strip()
        if line == "" or line.startswith("#"):
            continue
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out
