"""
Simulation utilities for gopseg tests.
"""
import os
import shutil

import numpy as np

from gopseg.synthetic import (GenConfig, generate_synthetic_clip, _draw_scene,
                              render_frames)

from gopseg.stream import read_stream

from gopseg.model import ModelConfig, prepare_inputs

from gopseg.config import RunConfig

from gopseg.dataset import generate_dataset, split_paths


slow_tests = (os.environ.get("GOPSEG_SLOW_TESTS", "0") == "1")
"""Long acceptance runs are only enabled with GOPSEG_SLOW_TESTS=1."""


def sim_data_dir():
    dir = "test_gopseg_output"
    if not os.path.isdir(dir):
        os.makedirs(dir)
    return dir


def sim_subdir_create(name):
    test_dir = os.path.join(sim_data_dir(), name)
    if os.path.isdir(test_dir):
        shutil.rmtree(test_dir)
    os.makedirs(test_dir)
    return test_dir


# Small configuration shared by the model and harness tests: 32x32 frames,
# one GoP with two P-frames (three frames), narrow layers.
sim_keys = dict(
    height=32, width=32, block=8, n_gops=1, gop_size=2, radius=2,
    min_sprites=1, max_sprites=2, max_speed=1, query_len=10,
    text_dim=16, d_model=16, heads=2, enc_layers=1, dec_layers=1,
    n_queries=2, i_widths=(8, 16, 32), p_widths=(4, 8, 16), growth=4,
    refine_widths=(8, 8, 4),
)


def sim_gen_config(**overrides):
    keys = dict(height=32, width=32, block=8, n_gops=1, gop_size=2,
                min_sprites=1, max_sprites=2, max_speed=1, radius=2,
                query_len=10)
    keys.update(overrides)
    return GenConfig(**keys)


def sim_model_config(**overrides):
    keys = dict(height=32, width=32, n_gops=1, gop_size=2, radius=2,
                vocab_size=24, query_len=10, text_dim=16, d_model=16,
                heads=2, enc_layers=1, dec_layers=1, n_queries=2,
                i_widths=(8, 16, 32), p_widths=(4, 8, 16), growth=4,
                refine_widths=(8, 8, 4), seed=0)
    keys.update(overrides)
    return ModelConfig(**keys)


def sim_run_config(**overrides):
    keys = dict(sim_keys)
    keys.update(dict(n_train=3, n_val=2, steps=3, log_every=1, ckpt_every=0,
                     bench_iters=1, bench_warmup=1, sweep_values=(1, 2)))
    keys.update(overrides)
    return RunConfig(keys)


def sim_clip(seed=0, **overrides):
    return generate_synthetic_clip(seed, sim_gen_config(**overrides))


def sim_inputs(seed=0, radius=2, **overrides):
    return prepare_inputs(sim_clip(seed, **overrides), radius)


def sim_dataset(name, cfg=None):
    """Generate a small dataset (serially) in a fresh test directory.
    """
    if cfg is None:
        cfg = sim_run_config()
    data_dir = sim_subdir_create(name)
    generate_dataset(cfg, data_dir, serial=True)
    return data_dir


def random_masks(rng, n, h, w, density=0.4):
    return rng.random((n, h, w)) < density


def sim_raw_frames(seed, cfg):
    """The uncompressed frames of the clip generate_synthetic_clip encodes.
    """
    rng = np.random.default_rng(seed)
    bg, sprites, target = _draw_scene(rng, cfg)
    frames, _ = render_frames(sprites, target, bg, cfg)
    return frames


def sim_load_split(data_dir, split):
    return [read_stream(p) for p in split_paths(data_dir, split)]
