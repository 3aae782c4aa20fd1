# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.train
=======================

Training, evaluation, the object query sweep and the throughput benchmark.

"""
from __future__ import absolute_import, division, print_function

import os

import multiprocessing as mp

from collections import OrderedDict

import numpy as np

import fitsio

from astropy.table import Table

from .utils import (Logger, Timer, GlobalTimers, DataError, CheckpointError,
                    default_mp_proc)

from .numerics import (backward, sgd_momentum_step, no_grad, FlopCounter,
                       read_checkpoint, write_checkpoint)

from .codec import decode_frames

from .encoders import normalize_iframe, normalize_motion, normalize_residual

from .model import ReferringSegmenter, prepare_inputs

from .metrics import (EvalRecord, evaluate_masks, metrics_report,
                      format_report)

from .stream import read_stream, write_masks, read_masks

from .dataset import split_paths


eval_frame_columns = OrderedDict([
    ("CLIP", "S32"),
    ("FRAME", "i4"),
    ("QUERY", "i4"),
    ("INTERSECTION", "i8"),
    ("UNION", "i8"),
    ("IOU", "f8"),
    ("BOUNDARY_F", "f8"),
])

eval_clip_columns = OrderedDict([
    ("CLIP", "S32"),
    ("QUERY", "i4"),
    ("ARGMAX_SCORE", "i4"),
    ("N_REFINE", "i4"),
    ("N_FRAMES", "i4"),
])


def training_order(step, n_clips, seed):
    """Clip index of a training step.

    Each epoch visits every clip once in an order that depends only on
    (seed, epoch), so a resumed run sees the same sequence.

    """
    epoch = step // n_clips
    perm = np.random.default_rng([seed, epoch]).permutation(n_clips)
    return int(perm[step % n_clips])


def optimizer_path(ckpt):
    return ckpt + ".opt"


def save_training_state(model, ckpt, step):
    """Write the parameters and, next to them, the momentum buffers and the
    step counter.
    """
    model.save(ckpt)
    named = [(n, p.momentum_buffer) for n, p in model.named_parameters()]
    named.append(("__step__", np.array([step], dtype=np.float64)))
    write_checkpoint(optimizer_path(ckpt), named)
    return


def load_training_state(model, ckpt):
    """Restore parameters and optimizer state.  Returns the step counter.
    """
    model.load(ckpt)
    opt = optimizer_path(ckpt)
    if not os.path.isfile(opt):
        return 0
    arrays = read_checkpoint(opt)
    if "__step__" not in arrays:
        raise CheckpointError("optimizer state {} has no step counter"
                              .format(opt), ["__step__"])
    step = int(arrays.pop("__step__")[0])
    bad = [n for n, p in model.named_parameters()
           if n not in arrays or arrays[n].shape != p.momentum_buffer.shape]
    if len(bad) > 0:
        raise CheckpointError("optimizer state {} does not match the model"
                              .format(opt), bad)
    for name, par in model.named_parameters():
        par.momentum_buffer[...] = arrays[name]
    return step


def train_model(cfg, data_dir, ckpt, resume=None, split="train",
                max_clips=None):
    """Train on one clip per step with SGD momentum.

    Args:
        cfg (RunConfig):  Run configuration.
        data_dir (str):  Dataset directory with a manifest.
        ckpt (str):  Output checkpoint path.
        resume (str):  Optional checkpoint to continue from.
        split (str):  Manifest split to train on.
        max_clips (int):  Use only the first clips of the split.

    Returns:
        (list):  One (step, L_LR, L_HR, total) tuple per step run.

    """
    log = Logger.get()
    gt = GlobalTimers.get()

    gt.start("train load")
    paths = split_paths(data_dir, split)
    if max_clips is not None:
        paths = paths[:max_clips]
    clips = [prepare_inputs(read_stream(p), cfg.radius) for p in paths]
    model = ReferringSegmenter(cfg.model_config())
    start = 0
    if resume is not None:
        start = load_training_state(model, resume)
        log.info("Resuming from {} at step {}".format(resume, start))
    gt.stop("train load")

    out_dir = os.path.dirname(os.path.abspath(ckpt))
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataError("cannot create {}: {}".format(out_dir, e))

    params = model.parameters()
    history = list()
    gt.start("train steps")
    for step in range(start, cfg.steps):
        inputs = clips[training_order(step, len(clips), cfg.seed)]
        out = model.loss(inputs, beta=cfg.beta)
        model.check_finite(out)
        backward(out.total)
        sgd_momentum_step(params, lr=cfg.lr, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
        row = (step, out.l_lr.item(), out.l_hr.item(), out.total.item())
        history.append(row)
        if step == start or (step + 1) % cfg.log_every == 0:
            log.info("step={} L_LR={:.6f} L_HR={:.6f} total={:.6f}"
                     .format(*row))
        if cfg.ckpt_every > 0 and (step + 1) % cfg.ckpt_every == 0:
            save_training_state(model, ckpt, step + 1)
    gt.stop("train steps")
    save_training_state(model, ckpt, max(cfg.steps, start))
    try:
        with open(ckpt + ".log", "w" if resume is None else "a") as f:
            for row in history:
                f.write("step={} L_LR={:.6f} L_HR={:.6f} total={:.6f}\n"
                        .format(*row))
    except OSError as e:
        raise DataError("cannot write training log {}.log: {}"
                        .format(ckpt, e))
    cfg.copy(ckpt=ckpt).write(ckpt + ".cfg")
    log.info("Wrote checkpoint {}".format(ckpt))
    return history


# Per-process model of the evaluation pool.
_eval_model = None


def _eval_init(model_cfg, ckpt):
    global _eval_model
    _eval_model = None
    if ckpt is not None:
        _eval_model = ReferringSegmenter(model_cfg)
        _eval_model.load(ckpt)


def clip_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def _eval_clip(path, radius, mask_dir, tol, oracle):
    sample = read_stream(path)
    name = clip_name(path)
    if oracle:
        masks = sample.gt_masks
        query = -1
        best = -1
        nref = 0
    else:
        inputs = prepare_inputs(sample, radius)
        before = _eval_model.refiner.n_calls
        result = _eval_model.predict(inputs)
        masks = result.full
        query = result.query
        best = int(np.argmax(result.scores))
        nref = _eval_model.refiner.n_calls - before
    write_masks(os.path.join(mask_dir, name + ".cmsk"), masks)
    rec = evaluate_masks(masks, sample.gt_masks, tol=tol)
    return name, query, best, nref, rec


def evaluate_model(cfg, ckpt, data_dir, out_dir, split="val", serial=False,
                   oracle=False):
    """Predict every clip of a split and compute the metrics.

    Writes the key=value report ``metrics.txt``, one mask file per clip in
    ``masks/`` and the per-frame records ``eval_records.fits``.

    Args:
        cfg (RunConfig):  Run configuration.
        ckpt (str):  Checkpoint path (ignored when oracle is True).
        data_dir (str):  Dataset directory.
        out_dir (str):  Output directory.
        split (str):  Manifest split.
        serial (bool):  Disable multiprocessing.
        oracle (bool):  Use the ground truth masks as predictions.

    Returns:
        (OrderedDict):  The metrics.

    """
    log = Logger.get()
    tm = Timer()
    tm.start()
    paths = split_paths(data_dir, split)
    mask_dir = os.path.join(out_dir, "masks")
    try:
        os.makedirs(mask_dir, exist_ok=True)
    except OSError as e:
        raise DataError("cannot create {}: {}".format(mask_dir, e))
    model_cfg = cfg.model_config()
    if not oracle:
        # Fail early on an incompatible checkpoint.
        _eval_init(model_cfg, ckpt)
    initargs = (model_cfg, None if oracle else ckpt)
    args = [(p, cfg.radius, mask_dir, cfg.boundary_tol, oracle)
            for p in paths]
    if serial:
        results = [_eval_clip(*a) for a in args]
    else:
        with mp.Pool(processes=default_mp_proc, initializer=_eval_init,
                     initargs=initargs) as pool:
            results = pool.starmap(_eval_clip, args)

    record = EvalRecord()
    for res in results:
        record.extend(res[4])
    report = metrics_report(record)
    try:
        with open(os.path.join(out_dir, "metrics.txt"), "w") as f:
            f.write(format_report(report))
    except OSError as e:
        raise DataError("cannot write metrics to {}: {}".format(out_dir, e))
    write_eval_records(os.path.join(out_dir, "eval_records.fits"), results)
    tm.stop()
    tm.report("Evaluate {} clips".format(len(paths)))
    log.info("mean_iou={:.4f} mAP={:.4f}".format(report["mean_iou"],
                                                 report["mAP"]))
    return report


def write_eval_records(path, results):
    """Per-frame and per-clip evaluation tables.
    """
    nrows = sum(len(r[4]) for r in results)
    fdata = np.zeros(nrows, dtype=list(eval_frame_columns.items()))
    cdata = np.zeros(len(results), dtype=list(eval_clip_columns.items()))
    row = 0
    for c, (name, query, best, nref, rec) in enumerate(results):
        for f in range(len(rec)):
            fdata["CLIP"][row] = name
            fdata["FRAME"][row] = f
            fdata["QUERY"][row] = query
            fdata["INTERSECTION"][row] = rec.intersections[f]
            fdata["UNION"][row] = rec.unions[f]
            fdata["IOU"][row] = rec.per_sample_iou[f]
            fdata["BOUNDARY_F"][row] = rec.boundary_f[f]
            row += 1
        cdata["CLIP"][c] = name
        cdata["QUERY"][c] = query
        cdata["ARGMAX_SCORE"][c] = best
        cdata["N_REFINE"][c] = nref
        cdata["N_FRAMES"][c] = len(rec)
    tmp_file = path + ".tmp"
    if os.path.isfile(tmp_file):
        os.remove(tmp_file)
    fd = fitsio.FITS(tmp_file, "rw")
    fd.write(None, extname="PRIMARY")
    fd.write(fdata, extname="FRAMES")
    fd.write(cdata, extname="CLIPS")
    fd.close()
    os.replace(tmp_file, path)
    return


def read_eval_records(path):
    """Returns (frames, clips) record arrays.
    """
    fd = fitsio.FITS(path, "r")
    frames = fd["FRAMES"].read()
    clips = fd["CLIPS"].read()
    fd.close()
    return frames, clips


def metrics_from_eval_records(path):
    """Recompute the report from the per-frame rows of eval_records.fits.
    """
    frames, _ = read_eval_records(path)
    record = EvalRecord()
    record.intersections = [int(x) for x in frames["INTERSECTION"]]
    record.unions = [int(x) for x in frames["UNION"]]
    record.per_sample_iou = [float(x) for x in frames["IOU"]]
    record.boundary_f = [float(x) for x in frames["BOUNDARY_F"]]
    return metrics_report(record)


def metrics_from_mask_files(data_dir, mask_dir, split="val", tol=1):
    """Recompute the report from mask files written by evaluate_model.
    """
    record = EvalRecord()
    for path in split_paths(data_dir, split):
        sample = read_stream(path)
        pred = read_masks(os.path.join(mask_dir, clip_name(path) + ".cmsk"))
        evaluate_masks(pred, sample.gt_masks, tol=tol, record=record)
    return metrics_report(record)


def sweep_n_queries(cfg, data_dir, out_dir, values=None, serial=False):
    """Train and evaluate once per number of object queries.

    Returns:
        (Table):  Columns N_q, mAP, overall_iou, mean_iou; one row per value.

    """
    log = Logger.get()
    if values is None:
        values = cfg.sweep_values
    rows = list()
    for nq in values:
        run_dir = os.path.join(out_dir, "nq_{}".format(nq))
        run_cfg = cfg.copy(n_queries=nq)
        ckpt = os.path.join(run_dir, "model.ckpt")
        log.info("Sweep: training with N_q={}".format(nq))
        train_model(run_cfg, data_dir, ckpt)
        report = evaluate_model(run_cfg, ckpt, data_dir, run_dir,
                                serial=serial)
        rows.append((nq, report["mAP"], report["overall_iou"],
                     report["mean_iou"]))
    tab = Table(rows=rows, names=("N_q", "mAP", "overall_iou", "mean_iou"),
                dtype=("i4", "f8", "f8", "f8"))
    tab.write(os.path.join(out_dir, "sweep_nq.ecsv"), format="ascii.ecsv",
              overwrite=True)
    return tab


def _compressed_path(model, sample, radius):
    iframes = np.stack([g.iframe for g in sample.gops])
    fields = np.stack([pf.motion_field() for g in sample.gops
                       for pf in g.pframes])
    residuals = np.stack([pf.residual for g in sample.gops
                          for pf in g.pframes])
    model.iframe_encoder(normalize_iframe(iframes))
    model.motion_encoder(normalize_motion(fields, radius))
    model.residual_encoder(normalize_residual(residuals))


def _decoded_path(model, sample):
    frames = decode_frames(sample.gops)
    model.iframe_encoder(normalize_iframe(frames))


def benchmark(cfg, data_dir, split="val", max_clips=4):
    """Compare the compressed-domain feature path with decoding every frame.

    The compressed path runs the I-frame encoder once per GoP and the motion
    and residual encoders per P-frame.  The baseline reconstructs every
    P-frame and runs the I-frame encoder on all frames.

    Returns:
        (OrderedDict):  Throughput, ratio and multiply-accumulate counts.

    """
    samples = [read_stream(p) for p in split_paths(data_dir, split)]
    samples = samples[:max_clips]
    model = ReferringSegmenter(cfg.model_config())
    n_frames = sum(s.n_frames for s in samples)

    def _run(fn):
        for s in samples:
            fn(s)

    comp = lambda s: _compressed_path(model, s, cfg.radius)
    deco = lambda s: _decoded_path(model, s)

    out = OrderedDict()
    with no_grad():
        for name, fn in (("compressed", comp), ("decoded", deco)):
            for _ in range(cfg.bench_warmup):
                _run(fn)
            tm = Timer()
            tm.start()
            for _ in range(cfg.bench_iters):
                _run(fn)
            tm.stop()
            tm.report("Benchmark {} path".format(name))
            out["{}_fps".format(name)] = \
                cfg.bench_iters * n_frames / max(tm.seconds(), 1.0e-12)
        out["ratio"] = out["compressed_fps"] / out["decoded_fps"]
        first = samples[0]
        with FlopCounter() as fc:
            comp(first)
        out["compressed_macs_per_clip"] = fc.macs
        with FlopCounter() as fc:
            deco(first)
        out["decoded_macs_per_clip"] = fc.macs
        out.update(encoder_macs(model, cfg))
    out["frames_per_iteration"] = n_frames
    out["iterations"] = cfg.bench_iters
    out["warmup"] = cfg.bench_warmup
    return out


def encoder_macs(model, cfg):
    """Per-frame multiply-accumulates of each encoder.
    """
    out = OrderedDict()
    h, w = cfg.height, cfg.width
    with no_grad():
        for name, enc, ch in (("iframe", model.iframe_encoder, 3),
                              ("motion", model.motion_encoder, 2),
                              ("residual", model.residual_encoder, 3)):
            with FlopCounter() as fc:
                enc(np.zeros((1, ch, h, w)))
            out["{}_encoder_macs_per_frame".format(name)] = fc.macs
    return out


def format_bench(report):
    lines = list()
    for key, val in report.items():
        if isinstance(val, float):
            lines.append("{}={:.6f}".format(key, val))
        else:
            lines.append("{}={}".format(key, val))
    return "\n".join(lines) + "\n"
